//! Metrics for a labelled score set: ACC, AUC, AP, EER, ROC points and a
//! per-benchmark breakdown.
//!
//!     cargo run --example evaluate_scores

use divfuse::evaluator::{evaluate, evaluate_by_group, write_roc_csv, ScoreSet, DEFAULT_ACC_THRESHOLD};
use divfuse::manifest::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> divfuse::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut scores, mut labels, mut groups) = (vec![], vec![], vec![]);
    for i in 0..600 {
        // Two benchmarks, each with its own reals; the second one's fakes are harder.
        let (label, group, centre) = match i % 4 {
            0 => (Label::Real, "bench-a", 0.3),
            1 => (Label::Fake, "bench-a", 0.8),
            2 => (Label::Real, "bench-b", 0.35),
            _ => (Label::Fake, "bench-b", 0.5),
        };
        let s: f64 = centre + 0.2 * (rng.random::<f64>() - 0.5) * 2.0;
        scores.push(s.clamp(0.0, 1.0));
        labels.push(label);
        groups.push(group.to_owned());
    }
    let set = ScoreSet::new(scores, labels)?;
    let report = evaluate(&set, DEFAULT_ACC_THRESHOLD)?;
    println!("ACC {:.4}  AUC {:.4}  AP {:.4}  EER {:.4}", report.acc, report.auc, report.ap, report.eer);
    println!("{} ROC points", report.roc.len());

    for (g, r) in evaluate_by_group(&set, &groups, DEFAULT_ACC_THRESHOLD)? {
        match &r.metrics {
            Some(m) => println!("  {g:<10} n={:<4} ACC {:.4} AUC {:.4}", r.count, r.acc, m.auc),
            None => println!("  {g:<10} n={:<4} ACC {:.4} (single class)", r.count, r.acc),
        }
    }
    let path = std::env::temp_dir().join("divfuse-roc.csv");
    write_roc_csv(&path, &report.roc)?;
    println!("ROC written to {}", path.display());
    Ok(())
}
