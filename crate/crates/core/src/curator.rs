//! Feature-space diversity curation.
//!
//! The pipeline runs over pixel-branch embeddings in manifest order:
//!
//! 1. embeddings are already extracted and normalized ([`Manifest`]);
//! 2. **global dedup**: a greedy forward scan drops every record whose cosine
//!    similarity to some earlier *kept* record is strictly greater than `T`;
//! 3. **class refinement**: if the classes are unbalanced, the larger class is
//!    re-deduplicated at a lower threshold `T'` found by bisection over
//!    `[refine_floor, T]`;
//! 4. **balancing**: any imbalance left beyond `balance_tolerance` is removed
//!    by a seeded uniform subsample of the larger class.
//!
//! Every discard is attributed in the [`CurationReport`].

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{EmbeddingRecord, Label, Manifest};
use crate::similarity::{cosine_unchecked, cross_block, VectorSet};

/// Bisection steps used to find the class-refinement threshold.
pub const REFINE_ITERATIONS: usize = 12;

/// Candidates resolved per similarity block during the greedy scan.
const SCAN_CHUNK: usize = 128;
const SCAN_TILE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationConfig {
    pub threshold: f64,
    pub balance_tolerance: usize,
    pub seed: u64,
    pub refine_floor: f64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            threshold: 0.9,
            balance_tolerance: 0,
            seed: 0,
            refine_floor: 0.3,
        }
    }
}

impl CurationConfig {
    pub fn with_threshold(threshold: f64) -> Self {
        Self {
            threshold,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_threshold(self.threshold)?;
        if !(self.refine_floor > 0.0 && self.refine_floor <= self.threshold) {
            return Err(Error::argument(format!(
                "refine_floor must lie in (0, {}], got {}",
                self.threshold, self.refine_floor
            )));
        }
        Ok(())
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::argument(format!("threshold must lie in (0, 1], got {t}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Global,
    ClassReal,
    ClassFake,
    Balance,
}

impl Stage {
    fn for_class(label: Label) -> Self {
        match label {
            Label::Real => Stage::ClassReal,
            Label::Fake => Stage::ClassFake,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discard {
    pub discarded_id: String,
    /// The surviving record that caused the discard; `None` for balance
    /// discards, which are a seeded subsample.
    pub kept_id: Option<String>,
    /// Similarity to `kept_id`; the sentinel `1.0` for balance discards.
    pub similarity: f64,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub input_count: usize,
    pub after_global: usize,
    pub real_after_global: usize,
    pub fake_after_global: usize,
    pub final_count: usize,
    pub refined_threshold_used: Option<f64>,
    pub discards: Vec<Discard>,
}

/// Result of one greedy scan, in indices of the scanned set.
#[derive(Debug, Clone, PartialEq)]
pub struct DedupOutcome {
    pub kept: Vec<usize>,
    /// `(discarded, kept_by, similarity)`.
    pub discards: Vec<(usize, usize, f64)>,
}

/// Greedy first-keep scan over `set` in index order.
///
/// Record `j` is discarded iff some earlier kept record has similarity
/// strictly greater than `threshold`. It is attributed to the kept record of
/// highest similarity (earliest on ties).
pub fn greedy_scan(set: &VectorSet<'_>, threshold: f64) -> Result<DedupOutcome> {
    check_threshold(threshold)?;
    let dim = set.dim();
    let mut kept: Vec<usize> = Vec::new();
    let mut kept_rows: Vec<f32> = Vec::new();
    let mut discards = Vec::new();

    let n = set.len();
    let mut j0 = 0;
    while j0 < n {
        let j1 = (j0 + SCAN_CHUNK).min(n);
        let before = kept.len();
        // Candidates in this chunk against everything kept before it.
        let block = if before > 0 {
            let kept_set = VectorSet::new(dim, &kept_rows)?;
            Some(cross_block(set, j0..j1, &kept_set, 0..before, SCAN_TILE)?)
        } else {
            None
        };
        for j in j0..j1 {
            let mut best: Option<(usize, f64)> = None;
            if let Some(block) = &block {
                for (k, &s) in block.row(j).iter().enumerate() {
                    if best.map_or(true, |(_, b)| s > b) {
                        best = Some((k, s));
                    }
                }
            }
            let v = set.row(j);
            for k in before..kept.len() {
                let s = cosine_unchecked(v, &kept_rows[k * dim..(k + 1) * dim]);
                if best.map_or(true, |(_, b)| s > b) {
                    best = Some((k, s));
                }
            }
            match best {
                Some((k, s)) if s > threshold => discards.push((j, kept[k], s)),
                _ => {
                    kept.push(j);
                    kept_rows.extend_from_slice(v);
                }
            }
        }
        j0 = j1;
    }
    Ok(DedupOutcome { kept, discards })
}

/// Record-level greedy dedup: returns the kept ids and discard list.
pub fn greedy_dedup(
    records: &[EmbeddingRecord],
    threshold: f64,
) -> Result<(Vec<String>, Vec<Discard>)> {
    check_threshold(threshold)?;
    if records.is_empty() {
        return Err(Error::argument("greedy_dedup needs at least one record"));
    }
    let dim = records[0].vector.len();
    let mut data = Vec::with_capacity(records.len() * dim);
    for r in records {
        if r.vector.len() != dim {
            return Err(Error::argument(format!(
                "record `{}` has dimension {}, expected {dim}",
                r.id,
                r.vector.len()
            )));
        }
        data.extend_from_slice(&r.vector);
    }
    let set = VectorSet::new(dim, &data)?;
    let outcome = greedy_scan(&set, threshold)?;
    let kept = outcome.kept.iter().map(|&i| records[i].id.clone()).collect();
    let discards = outcome
        .discards
        .iter()
        .map(|&(d, k, s)| Discard {
            discarded_id: records[d].id.clone(),
            kept_id: Some(records[k].id.clone()),
            similarity: s,
            stage: Stage::Global,
        })
        .collect();
    Ok((kept, discards))
}

/// Picks `k` of `n` positions with a seeded partial Fisher–Yates shuffle:
/// for `i in 0..k`, swap position `i` with `rng.random_range(i..n)`. The first
/// `k` positions are returned in ascending order.
pub fn seeded_subset(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut chosen = idx[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Runs the four-stage curation over a pixel-branch manifest.
pub fn curate(manifest: &Manifest, cfg: &CurationConfig) -> Result<(Manifest, CurationReport)> {
    cfg.validate()?;
    if manifest.is_empty() {
        return Err(Error::argument("cannot curate an empty manifest"));
    }
    let (n_real, n_fake) = manifest.class_counts();
    if n_real == 0 || n_fake == 0 {
        return Err(Error::Domain(
            "curation needs both real and fake records".into(),
        ));
    }
    let records = manifest.records();
    let dim = manifest.dimension();
    let matrix = manifest.matrix();
    let all = VectorSet::new(dim, &matrix)?;
    let mut discards = Vec::new();

    // Global dedup.
    let global = greedy_scan(&all, cfg.threshold)?;
    for &(d, k, s) in &global.discards {
        discards.push(Discard {
            discarded_id: records[d].id.clone(),
            kept_id: Some(records[k].id.clone()),
            similarity: s,
            stage: Stage::Global,
        });
    }
    let (mut real, mut fake): (Vec<usize>, Vec<usize>) = global
        .kept
        .iter()
        .partition(|&&i| records[i].label == Label::Real);
    let (m1, m2) = (real.len(), fake.len());

    // Class refinement on the larger class.
    let mut refined = None;
    let tol = cfg.balance_tolerance;
    if m1.abs_diff(m2) > tol {
        let (larger, label, target) = if m1 > m2 {
            (&mut real, Label::Real, m2 + tol)
        } else {
            (&mut fake, Label::Fake, m1 + tol)
        };
        let mut rows = Vec::with_capacity(larger.len() * dim);
        for &i in larger.iter() {
            rows.extend_from_slice(&records[i].vector);
        }
        let class_set = VectorSet::new(dim, &rows)?;
        let t_refined = refine_threshold(&class_set, cfg.refine_floor, cfg.threshold, target)?;
        let outcome = greedy_scan(&class_set, t_refined)?;
        for &(d, k, s) in &outcome.discards {
            discards.push(Discard {
                discarded_id: records[larger[d]].id.clone(),
                kept_id: Some(records[larger[k]].id.clone()),
                similarity: s,
                stage: Stage::for_class(label),
            });
        }
        *larger = outcome.kept.iter().map(|&k| larger[k]).collect();
        refined = Some(t_refined);
    }

    // Residual balancing by seeded subsample.
    if real.len().abs_diff(fake.len()) > tol {
        let (larger, smaller_len) = if real.len() > fake.len() {
            let n = fake.len();
            (&mut real, n)
        } else {
            let n = real.len();
            (&mut fake, n)
        };
        let excess = larger.len() - (smaller_len + tol);
        let drop = seeded_subset(larger.len(), excess, cfg.seed);
        let mut keep = Vec::with_capacity(larger.len() - excess);
        let mut drop_iter = drop.iter().peekable();
        for (pos, &i) in larger.iter().enumerate() {
            if drop_iter.peek() == Some(&&pos) {
                drop_iter.next();
                discards.push(Discard {
                    discarded_id: records[i].id.clone(),
                    kept_id: None,
                    similarity: 1.0,
                    stage: Stage::Balance,
                });
            } else {
                keep.push(i);
            }
        }
        *larger = keep;
    }

    let mut final_idx: Vec<usize> = real.into_iter().chain(fake).collect();
    final_idx.sort_unstable();
    let note = format!(
        "{} | curated T={} tol={} seed={}",
        manifest.source_note(),
        cfg.threshold,
        cfg.balance_tolerance,
        cfg.seed
    );
    let curated = manifest.subset(&final_idx, note);
    let report = CurationReport {
        input_count: manifest.count(),
        after_global: global.kept.len(),
        real_after_global: m1,
        fake_after_global: m2,
        final_count: final_idx.len(),
        refined_threshold_used: refined,
        discards,
    };
    Ok((curated, report))
}

/// Largest threshold in `[floor, ceiling]` (to bisection resolution) whose
/// greedy retained count is at most `target`. Returns `floor` when even the
/// floor retains too many.
fn refine_threshold(set: &VectorSet<'_>, floor: f64, ceiling: f64, target: usize) -> Result<f64> {
    let count = |t: f64| greedy_scan(set, t).map(|o| o.kept.len());
    if count(floor)? > target {
        return Ok(floor);
    }
    let (mut lo, mut hi) = (floor, ceiling);
    for _ in 0..REFINE_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if count(mid)? <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ReportLine<'a> {
    Summary {
        input_count: usize,
        after_global: usize,
        real_after_global: usize,
        fake_after_global: usize,
        final_count: usize,
        refined_threshold_used: Option<f64>,
        discard_count: usize,
    },
    Discard(&'a Discard),
}

impl CurationReport {
    /// Writes a summary line followed by one line per discard.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let summary = ReportLine::Summary {
            input_count: self.input_count,
            after_global: self.after_global,
            real_after_global: self.real_after_global,
            fake_after_global: self.fake_after_global,
            final_count: self.final_count,
            refined_threshold_used: self.refined_threshold_used,
            discard_count: self.discards.len(),
        };
        crate::manifest::write_jsonl(
            path,
            std::iter::once(summary).chain(self.discards.iter().map(ReportLine::Discard)),
        )
    }
}
