mod common;

use common::{grid_eer, pair_auc, step_ap};
use divfuse::evaluator::{
    accuracy, auc, average_precision, evaluate, evaluate_by_group, roc_and_eer, write_roc_csv, RocPoint, ScoreSet,
    DEFAULT_ACC_THRESHOLD,
};
use divfuse::manifest::Label;
use divfuse::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn labels(bits: &[u8]) -> Vec<Label> {
    bits.iter().map(|&b| Label::from_fake(b == 1)).collect()
}

fn set(scores: &[f64], bits: &[u8]) -> ScoreSet {
    ScoreSet::new(scores.to_vec(), labels(bits)).unwrap()
}

/// Random scores and labels with both classes present. Scores are snapped to
/// a coarse grid when `ties` is set.
fn random_set(rng: &mut ChaCha8Rng, n: usize, ties: bool) -> (Vec<f64>, Vec<Label>) {
    loop {
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = rng.random();
                if ties { (s * 8.0).round() / 8.0 } else { s }
            })
            .collect();
        let l: Vec<Label> = (0..n).map(|_| Label::from_fake(rng.random::<bool>())).collect();
        if l.iter().any(|x| x.is_fake()) && l.iter().any(|x| !x.is_fake()) {
            return (scores, l);
        }
    }
}

fn trapezoid(roc: &[RocPoint]) -> f64 {
    roc.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum()
}

#[test]
fn worked_examples() {
    let s = set(&[0.8, 0.6, 0.4, 0.55], &[1, 0, 0, 1]);
    assert!((auc(&s).unwrap() - 0.75).abs() < 1e-12);
    let s = set(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]);
    assert!((average_precision(&s).unwrap() - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-9);
    assert_eq!(accuracy(&set(&[0.9, 0.1], &[1, 0]), 0.5), 1.0);
    assert_eq!(accuracy(&set(&[0.9, 0.1], &[0, 1]), 0.5), 0.0);
}

#[test]
fn accuracy_matches_counting_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let (scores, l) = random_set(&mut rng, 50, false);
    let mut correct = 0;
    for i in 0..50 {
        let called_fake = scores[i] >= DEFAULT_ACC_THRESHOLD;
        if called_fake == (l[i] == Label::Fake) {
            correct += 1;
        }
    }
    let s = ScoreSet::new(scores, l).unwrap();
    assert_eq!(accuracy(&s, DEFAULT_ACC_THRESHOLD), correct as f64 / 50.0);
}

#[test]
fn auc_equals_pair_count_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for k in 0..100 {
        let n = rng.random_range(2..=50);
        let (scores, l) = random_set(&mut rng, n, k % 2 == 0);
        let want = pair_auc(&scores, &l);
        let s = ScoreSet::new(scores, l).unwrap();
        assert!((auc(&s).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn ap_equals_step_sum_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for k in 0..100 {
        let n = rng.random_range(2..=50);
        let (scores, l) = random_set(&mut rng, n, k % 2 == 1);
        let want = step_ap(&scores, &l);
        let s = ScoreSet::new(scores, l).unwrap();
        assert!((average_precision(&s).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn analytic_edge_cases() {
    let sep = set(&[0.9, 0.8, 0.3, 0.1], &[1, 1, 0, 0]);
    assert_eq!(auc(&sep).unwrap(), 1.0);
    assert_eq!(average_precision(&sep).unwrap(), 1.0);
    assert_eq!(roc_and_eer(&sep).unwrap().1, 0.0);

    let tied = set(&[0.4; 6], &[1, 0, 1, 0, 0, 1]);
    assert_eq!(auc(&tied).unwrap(), 0.5);
    assert_eq!(roc_and_eer(&tied).unwrap().1, 0.5);

    for k in 1..6 {
        let mut scores: Vec<f64> = (0..=k).map(|i| 1.0 - i as f64 * 0.1).collect();
        scores[k] = 0.0;
        let mut bits = vec![0u8; k + 1];
        bits[k] = 1;
        let ap = average_precision(&set(&scores, &bits)).unwrap();
        assert!((ap - 1.0 / (k + 1) as f64).abs() < 1e-12);
    }
}

#[test]
fn single_class_is_domain_error() {
    let s = set(&[0.2, 0.7], &[0, 0]);
    assert!(matches!(auc(&s), Err(Error::Domain(_))));
    assert!(matches!(average_precision(&s), Err(Error::Domain(_))));
    assert!(matches!(roc_and_eer(&s), Err(Error::Domain(_))));
    assert!(matches!(roc_and_eer(&set(&[0.2, 0.7], &[1, 1])), Err(Error::Domain(_))));
    assert!(ScoreSet::new(vec![0.1], vec![]).is_err());
    assert!(ScoreSet::new(vec![f64::NAN], labels(&[1])).is_err());
}

#[test]
fn eer_matches_dense_threshold_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let scores: Vec<f64> = (0..6).map(|_| rng.random()).collect();
        let mut bits = [1u8, 1, 1, 0, 0, 0];
        for i in (1..6).rev() {
            bits.swap(i, rng.random_range(0..=i));
        }
        let l = labels(&bits);
        let want = grid_eer(&scores, &l, 10_000);
        let (_, eer) = roc_and_eer(&ScoreSet::new(scores, l).unwrap()).unwrap();
        assert!((eer - want).abs() < 1e-3, "{eer} vs {want}");
    }
}

fn monotone_map(kind: usize, a: f64, b: f64) -> impl Fn(f64) -> f64 {
    move |x| match kind {
        0 => a * x + b,
        1 => (a * x).exp() - b,
        2 => x * x * x + a * x,
        3 => 1.0 / (1.0 + (-(a * (x - 0.5))).exp()),
        _ => (x + a).ln() * b,
    }
}

#[test]
fn rank_order_invariance_under_monotone_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for k in 0..20 {
        let n = rng.random_range(4..40);
        let (scores, l) = random_set(&mut rng, n, k % 3 == 0);
        let f = monotone_map(k % 5, rng.random_range(0.5..4.0), rng.random_range(0.5..3.0));
        let mapped: Vec<f64> = scores.iter().map(|&x| f(x)).collect();
        let a = ScoreSet::new(scores, l.clone()).unwrap();
        let b = ScoreSet::new(mapped, l).unwrap();
        assert_eq!(auc(&a).unwrap(), auc(&b).unwrap());
        assert_eq!(average_precision(&a).unwrap(), average_precision(&b).unwrap());
        let (ra, ea) = roc_and_eer(&a).unwrap();
        let (rb, eb) = roc_and_eer(&b).unwrap();
        assert_eq!(ea, eb);
        let strip = |r: &[RocPoint]| r.iter().map(|p| (p.fpr, p.tpr)).collect::<Vec<_>>();
        assert_eq!(strip(&ra), strip(&rb));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn flipping_labels_complements_auc(seed in any::<u64>(), n in 2usize..60, ties in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scores, l) = random_set(&mut rng, n, ties);
        let flipped: Vec<Label> = l.iter().map(|x| Label::from_fake(!x.is_fake())).collect();
        let a = auc(&ScoreSet::new(scores.clone(), l).unwrap()).unwrap();
        let b = auc(&ScoreSet::new(scores, flipped).unwrap()).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn roc_is_a_valid_staircase(seed in any::<u64>(), n in 2usize..60, ties in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scores, l) = random_set(&mut rng, n, ties);
        let s = ScoreSet::new(scores, l).unwrap();
        let (roc, eer) = roc_and_eer(&s).unwrap();
        prop_assert_eq!((roc[0].fpr, roc[0].tpr), (0.0, 0.0));
        let last = roc.last().unwrap();
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in roc.windows(2) {
            prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            prop_assert!(w[1].threshold < w[0].threshold);
        }
        prop_assert!((0.0..=1.0).contains(&eer));
        prop_assert!((trapezoid(&roc) - auc(&s).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn report_and_groups() {
    let scores = vec![0.9, 0.2, 0.7, 0.4, 0.8, 0.1];
    let l = labels(&[1, 0, 1, 0, 1, 0]);
    let groups: Vec<String> = ["gan", "", "diffusion", "", "gan", ""].iter().map(|s| s.to_string()).collect();
    let s = ScoreSet::new(scores, l).unwrap();
    let r = evaluate(&s, 0.5).unwrap();
    assert_eq!((r.count, r.n_fake, r.n_real), (6, 3, 3));
    assert_eq!((r.acc, r.auc, r.ap, r.eer), (1.0, 1.0, 1.0, 0.0));

    let by = evaluate_by_group(&s, &groups, 0.5).unwrap();
    let keys: Vec<&str> = by.keys().map(String::as_str).collect();
    assert_eq!(keys, ["", "diffusion", "gan"]);
    assert!(by["gan"].metrics.is_none());
    assert_eq!(by["gan"].count, 2);
    assert_eq!(by[""].acc, 1.0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("roc.csv");
    write_roc_csv(&path, &r.roc).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("fpr,tpr,threshold"));
    assert!(lines.next().unwrap().ends_with(",inf"));
    assert_eq!(text.lines().count(), r.roc.len() + 1);
}
