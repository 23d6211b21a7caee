//! Independent reference implementations used as test oracles, written as
//! plainly as possible. Only the finite-difference probe at the bottom calls
//! into the crate.
#![allow(dead_code)]

use divfuse::curator::{CurationReport, Stage};
use divfuse::head::{backward, batch_loss, forward_trace, ContrastiveSource, ForwardTrace, HeadParameters, Mode, TrainConfig};
use divfuse::manifest::{Branch, EmbeddingRecord, Label, Manifest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

// ---------------------------------------------------------------- similarity

pub fn naive_cos(u: &[f32], v: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..u.len() {
        s += u[i] as f64 * v[i] as f64;
    }
    s.clamp(-1.0, 1.0)
}

/// `(discarded, kept_by, sim)` in positions of `order`.
pub type Attribution = (usize, usize, f64);

/// Sequential greedy scan over `order` (indices into `vectors`). Returns kept
/// indices and discard attributions, both as indices into `vectors`.
pub fn brute_greedy(vectors: &[Vec<f32>], order: &[usize], t: f64) -> (Vec<usize>, Vec<Attribution>) {
    let mut kept: Vec<usize> = vec![];
    let mut discards = vec![];
    for &j in order {
        let mut best_k = usize::MAX;
        let mut best = f64::NEG_INFINITY;
        for &k in &kept {
            let s = naive_cos(&vectors[j], &vectors[k]);
            if s > best {
                best = s;
                best_k = k;
            }
        }
        if best_k != usize::MAX && best > t {
            discards.push((j, best_k, best));
        } else {
            kept.push(j);
        }
    }
    (kept, discards)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleDiscard {
    pub discarded: usize,
    pub kept_by: Option<usize>,
    pub similarity: f64,
    pub stage: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCuration {
    pub after_global: usize,
    pub final_kept: Vec<usize>,
    pub discards: Vec<OracleDiscard>,
    pub refined: Option<f64>,
}

fn fisher_yates_pick(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = rng.random_range(i..n);
        a.swap(i, j);
    }
    let mut out: Vec<usize> = a.into_iter().take(k).collect();
    out.sort();
    out
}

/// Straight-line reference of the four curation stages.
pub fn brute_curate(
    vectors: &[Vec<f32>],
    labels: &[Label],
    t: f64,
    tol: usize,
    seed: u64,
    floor: f64,
) -> OracleCuration {
    let all: Vec<usize> = (0..vectors.len()).collect();
    let (kept, global) = brute_greedy(vectors, &all, t);
    let mut discards: Vec<OracleDiscard> = global
        .iter()
        .map(|&(d, k, s)| OracleDiscard {
            discarded: d,
            kept_by: Some(k),
            similarity: s,
            stage: "global",
        })
        .collect();
    let mut real: Vec<usize> = kept.iter().copied().filter(|&i| labels[i] == Label::Real).collect();
    let mut fake: Vec<usize> = kept.iter().copied().filter(|&i| labels[i] == Label::Fake).collect();

    let mut refined = None;
    let diff = |a: usize, b: usize| if a > b { a - b } else { b - a };
    if diff(real.len(), fake.len()) > tol {
        let real_larger = real.len() > fake.len();
        let target = if real_larger { fake.len() } else { real.len() } + tol;
        let class = if real_larger { real.clone() } else { fake.clone() };
        let count = |th: f64| brute_greedy(vectors, &class, th).0.len();
        let chosen = if count(floor) > target {
            floor
        } else {
            let mut lo = floor;
            let mut hi = t;
            for _ in 0..12 {
                let mid = (lo + hi) / 2.0;
                if count(mid) <= target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        let (k2, d2) = brute_greedy(vectors, &class, chosen);
        let stage = if real_larger { "class_real" } else { "class_fake" };
        for (d, k, s) in d2 {
            discards.push(OracleDiscard {
                discarded: d,
                kept_by: Some(k),
                similarity: s,
                stage,
            });
        }
        if real_larger {
            real = k2;
        } else {
            fake = k2;
        }
        refined = Some(chosen);
    }

    if diff(real.len(), fake.len()) > tol {
        let real_larger = real.len() > fake.len();
        let (big, small) = if real_larger { (&mut real, fake.len()) } else { (&mut fake, real.len()) };
        let excess = big.len() - small - tol;
        let drop = fisher_yates_pick(big.len(), excess, seed);
        let mut keep = vec![];
        for (pos, &i) in big.iter().enumerate() {
            if drop.contains(&pos) {
                discards.push(OracleDiscard {
                    discarded: i,
                    kept_by: None,
                    similarity: 1.0,
                    stage: "balance",
                });
            } else {
                keep.push(i);
            }
        }
        *big = keep;
    }
    let mut final_kept: Vec<usize> = real.into_iter().chain(fake).collect();
    final_kept.sort();
    OracleCuration {
        after_global: kept.len(),
        final_kept,
        discards,
        refined,
    }
}

pub fn stage_name(s: Stage) -> &'static str {
    match s {
        Stage::Global => "global",
        Stage::ClassReal => "class_real",
        Stage::ClassFake => "class_fake",
        Stage::Balance => "balance",
    }
}

/// Describes the first difference between a curation run and the reference,
/// or `None` when ids, counts and every discard attribution agree.
pub fn oracle_mismatch(m: &Manifest, curated: &Manifest, report: &CurationReport, oracle: &OracleCuration) -> Option<String> {
    let ids = |i: usize| m.records()[i].id.clone();
    let got: Vec<&str> = curated.records().iter().map(|r| r.id.as_str()).collect();
    let want: Vec<String> = oracle.final_kept.iter().map(|&i| ids(i)).collect();
    if got != want {
        return Some(format!("kept ids differ: {got:?} vs {want:?}"));
    }
    if report.after_global != oracle.after_global {
        return Some(format!("after_global {} vs {}", report.after_global, oracle.after_global));
    }
    if report.refined_threshold_used != oracle.refined {
        return Some(format!("refined {:?} vs {:?}", report.refined_threshold_used, oracle.refined));
    }
    if report.discards.len() != oracle.discards.len() {
        return Some(format!("{} discards vs {}", report.discards.len(), oracle.discards.len()));
    }
    for (d, o) in report.discards.iter().zip(&oracle.discards) {
        let same = d.discarded_id == ids(o.discarded)
            && d.kept_id == o.kept_by.map(ids)
            && stage_name(d.stage) == o.stage
            && (d.similarity - o.similarity).abs() < 1e-12;
        if !same {
            return Some(format!("discard {d:?} vs {o:?}"));
        }
    }
    None
}

/// 400 records over two classes; every fifth record is an injected copy of an
/// earlier same-class record at cosine 0.95.
pub fn injected_duplicate_manifest(seed: u64) -> Manifest {
    let d = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = [unit(&(0..d).map(|_| gauss(&mut rng)).collect::<Vec<_>>()), unit(&(0..d).map(|_| gauss(&mut rng)).collect::<Vec<_>>())];
    let mut rows: Vec<(Vec<f64>, Label)> = vec![];
    for i in 0..400 {
        let label = Label::from_fake(rng.random::<f64>() < 0.4);
        let same: Vec<usize> = (0..rows.len()).filter(|&k| rows[k].1 == label).collect();
        let v = if i % 5 == 4 && !same.is_empty() {
            let src = &rows[same[rng.random_range(0..same.len())]].0;
            // Orthogonal unit direction w, then 0.95·src + sqrt(1 − 0.95²)·w.
            let noise: Vec<f64> = (0..d).map(|_| gauss(&mut rng)).collect();
            let proj: f64 = noise.iter().zip(src).map(|(a, b)| a * b).sum();
            let w = unit(&noise.iter().zip(src).map(|(a, b)| a - proj * b).collect::<Vec<_>>());
            let c = 0.95f64;
            src.iter().zip(&w).map(|(s, w)| c * s + (1.0 - c * c).sqrt() * w).collect()
        } else {
            let m = &means[label.is_fake() as usize];
            unit(&m.iter().map(|x| 0.5 * x + 0.35 * gauss(&mut rng)).collect::<Vec<_>>())
        };
        rows.push((v, label));
    }
    let records = rows
        .into_iter()
        .enumerate()
        .map(|(i, (v, l))| {
            EmbeddingRecord::new(format!("s{i:03}"), l, "", Branch::Pixel, v.into_iter().map(|x| x as f32).collect())
        })
        .collect();
    Manifest::from_records(d, records, "injected").unwrap()
}

/// Clustered random manifest: `clusters` random centers, each record a noisy
/// copy of one center. Record 0 is real and record 1 fake; the rest get
/// labels with probability `p_fake`.
pub fn cluster_manifest(seed: u64, n: usize, dim: usize, clusters: usize, spread: f64, p_fake: f64) -> Manifest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| unit(&(0..dim).map(|_| gauss(&mut rng)).collect::<Vec<_>>()))
        .collect();
    let records = (0..n)
        .map(|i| {
            let c = &centers[rng.random_range(0..clusters)];
            let v: Vec<f32> = c.iter().map(|x| (x + spread * gauss(&mut rng)) as f32).collect();
            let fake = match i {
                0 => false,
                1 => true,
                _ => rng.random::<f64>() < p_fake,
            };
            EmbeddingRecord::new(format!("r{i:04}"), Label::from_fake(fake), "synthetic", Branch::Pixel, v)
        })
        .collect();
    Manifest::from_records(dim, records, "cluster fixture").unwrap()
}

pub fn vectors_of(m: &Manifest) -> Vec<Vec<f32>> {
    m.records().iter().map(|r| r.vector.clone()).collect()
}

pub fn labels_of(m: &Manifest) -> Vec<Label> {
    m.records().iter().map(|r| r.label).collect()
}

// ------------------------------------------------------------------ spectrum

/// O(N²) 2-D DFT magnitude with the zero bin moved to `(W/2, H/2)`.
pub fn naive_dft_magnitude(w: usize, h: usize, data: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for v in 0..h {
        for u in 0..w {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for y in 0..h {
                for x in 0..w {
                    let angle = -2.0
                        * std::f64::consts::PI
                        * ((u * x) as f64 / w as f64 + (v * y) as f64 / h as f64);
                    re += data[y * w + x] * angle.cos();
                    im += data[y * w + x] * angle.sin();
                }
            }
            let sv = (v + h / 2) % h;
            let su = (u + w / 2) % w;
            out[sv * w + su] = (re * re + im * im).sqrt();
        }
    }
    out
}

// ---------------------------------------------------------------------- head

fn lrelu(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v * slope
    }
}

/// Eval-mode forward pass written as explicit matrix products.
pub fn oracle_forward(p: &HeadParameters, x: &[f64], slope: f64) -> (f64, Vec<f64>) {
    let w1: Vec<Vec<f64>> = (0..p.input)
        .map(|i| (0..p.hidden1).map(|k| p.w1[i * p.hidden1 + k]).collect())
        .collect();
    let w2: Vec<Vec<f64>> = (0..p.hidden1)
        .map(|k| (0..p.hidden2).map(|l| p.w2[k * p.hidden2 + l]).collect())
        .collect();
    let h1: Vec<f64> = (0..p.hidden1)
        .map(|k| lrelu(p.b1[k] + (0..p.input).map(|i| w1[i][k] * x[i]).sum::<f64>(), slope))
        .collect();
    let h2: Vec<f64> = (0..p.hidden2)
        .map(|l| lrelu(p.b2[l] + (0..p.hidden1).map(|k| w2[k][l] * h1[k]).sum::<f64>(), slope))
        .collect();
    let logit = p.b3 + (0..p.hidden2).map(|l| p.w3[l] * h2[l]).sum::<f64>();
    (logit, h2)
}

/// SupCon by direct enumeration of every (anchor, positive, denominator) term,
/// without any stabilization.
pub fn enumerate_supcon(z: &[Vec<f64>], labels: &[Label], tau: f64) -> f64 {
    let z: Vec<Vec<f64>> = z.iter().map(|v| unit(v)).collect();
    let b = z.len();
    let dot = |a: &Vec<f64>, c: &Vec<f64>| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..b {
        let positives: Vec<usize> = (0..b).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let denom: f64 = (0..b).filter(|&a| a != i).map(|a| (dot(&z[i], &z[a]) / tau).exp()).sum();
        let mut inner = 0.0;
        for &p in &positives {
            inner += ((dot(&z[i], &z[p]) / tau).exp() / denom).ln();
        }
        total += -inner / positives.len() as f64;
    }
    total / anchors as f64
}

// ------------------------------------------------------------------- metrics

pub fn pair_auc(scores: &[f64], labels: &[Label]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == Label::Fake && labels[j] == Label::Real {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

/// Step-integrated AP over distinct thresholds, highest first.
pub fn step_ap(scores: &[f64], labels: &[Label]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let pos = labels.iter().filter(|l| **l == Label::Fake).count() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let sel: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = sel.iter().filter(|&&i| labels[i] == Label::Fake).count() as f64;
        let recall = tp / pos;
        let precision = tp / sel.len() as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// EER by sweeping `steps` thresholds evenly across the score range and
/// taking the point where false-positive and false-negative rates are closest.
pub fn grid_eer(scores: &[f64], labels: &[Label], steps: usize) -> f64 {
    let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min) - 1e-3;
    let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1e-3;
    let pos = labels.iter().filter(|l| **l == Label::Fake).count() as f64;
    let neg = scores.len() as f64 - pos;
    let mut best = (f64::INFINITY, 0.0);
    for s in 0..=steps {
        let t = lo + (hi - lo) * s as f64 / steps as f64;
        let fp = (0..scores.len()).filter(|&i| labels[i] == Label::Real && scores[i] >= t).count() as f64;
        let fnn = (0..scores.len()).filter(|&i| labels[i] == Label::Fake && scores[i] < t).count() as f64;
        let (fpr, fnr) = (fp / neg, fnn / pos);
        let gap = (fpr - fnr).abs();
        if gap < best.0 {
            best = (gap, 0.5 * (fpr + fnr));
        }
    }
    best.1
}

// --------------------------------------------------------------------- blur

fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
    }
    i as usize
}

/// Dense 2-D Gaussian convolution of one channel with mirrored borders.
pub fn dense_blur(w: usize, h: usize, data: &[f64], sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut kernel = vec![];
    let mut sum = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let k = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            kernel.push((dx, dy, k));
            sum += k;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for &(dx, dy, k) in &kernel {
                let sx = mirror(x as isize + dx, w);
                let sy = mirror(y as isize + dy, h);
                acc += k / sum * data[sy * w + sx];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

// ------------------------------------------------------------ gradient probe

pub fn traces_for(p: &HeadParameters, xs: &[Vec<f32>], cfg: &TrainConfig) -> Vec<ForwardTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    xs.iter().map(|x| forward_trace(p, x, Mode::Train, cfg, &mut rng).unwrap()).collect()
}

pub fn sign_pattern(traces: &[ForwardTrace]) -> Vec<bool> {
    traces
        .iter()
        .flat_map(|t| t.pre1.iter().chain(&t.pre2).map(|v| *v > 0.0))
        .collect()
}

pub fn nudge(p: &HeadParameters, k: usize, delta: f64) -> HeadParameters {
    let mut q = p.clone();
    q.for_each_mut(|i, v| {
        if i == k {
            *v += delta;
        }
    });
    q
}

/// Max relative error of `backward` against central differences, skipping
/// parameters whose ±ε probe crosses a LeakyReLU kink. Returns
/// `(max_rel_err, checked, skipped)`.
pub fn gradient_check(seed: u64, source: ContrastiveSource, tau: f64) -> (f64, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (f, b) = (16, 8);
    let cfg = TrainConfig {
        hidden1: 32,
        hidden2: 16,
        dropout_rate: 0.0,
        lambda: 0.5,
        tau,
        contrastive: source,
        ..TrainConfig::default()
    };
    let p = HeadParameters::init(f, cfg.hidden1, cfg.hidden2, &mut rng);
    let xs: Vec<Vec<f32>> = (0..b).map(|_| (0..f).map(|_| gauss(&mut rng) as f32).collect()).collect();
    let labels = alternating_labels(b);
    let base = traces_for(&p, &xs, &cfg);
    let (grads, _) = backward(&p, &base, &labels, &cfg).unwrap();
    let analytic = grads.flatten();
    let base_signs = sign_pattern(&base);
    let eps = 1e-4;
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    for k in 0..p.param_count() {
        let plus = traces_for(&nudge(&p, k, eps), &xs, &cfg);
        let minus = traces_for(&nudge(&p, k, -eps), &xs, &cfg);
        if sign_pattern(&plus) != base_signs || sign_pattern(&minus) != base_signs {
            skipped += 1;
            continue;
        }
        let lp = batch_loss(&plus, &labels, &cfg, true).unwrap().total;
        let lm = batch_loss(&minus, &labels, &cfg, true).unwrap().total;
        let numeric = (lp - lm) / (2.0 * eps);
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
        checked += 1;
    }
    (worst, checked, skipped)
}

fn alternating_labels(b: usize) -> Vec<Label> {
    (0..b).map(|i| Label::from_fake(i % 2 == 1)).collect()
}
