//! Binary detection metrics: accuracy, ROC AUC, average precision, the ROC
//! curve and the equal error rate.
//!
//! Tied scores are grouped everywhere: AUC gives half credit to ties, ROC and
//! precision/recall points are emitted once per distinct score.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::Label;

pub const DEFAULT_ACC_THRESHOLD: f64 = 0.5;

/// Scores (probability of fake) with their ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    scores: Vec<f64>,
    labels: Vec<Label>,
    n_pos: usize,
    n_neg: usize,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<Label>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::argument(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.is_empty() {
            return Err(Error::argument("score set is empty"));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::argument(format!("score {i} is not finite")));
        }
        let n_pos = labels.iter().filter(|l| l.is_fake()).count();
        let n_neg = labels.len() - n_pos;
        Ok(Self {
            scores,
            labels,
            n_pos,
            n_neg,
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn n_pos(&self) -> usize {
        self.n_pos
    }

    pub fn n_neg(&self) -> usize {
        self.n_neg
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn require_both(&self, metric: &str) -> Result<()> {
        if self.n_pos == 0 || self.n_neg == 0 {
            return Err(Error::Domain(format!(
                "{metric} needs both classes (have {} fake, {} real)",
                self.n_pos, self.n_neg
            )));
        }
        Ok(())
    }

    /// `(score, positives, negatives)` per distinct score, descending.
    fn groups_descending(&self) -> Vec<(f64, usize, usize)> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut groups: Vec<(f64, usize, usize)> = Vec::new();
        for i in idx {
            let s = self.scores[i];
            let pos = usize::from(self.labels[i].is_fake());
            match groups.last_mut() {
                Some(g) if g.0 == s => {
                    g.1 += pos;
                    g.2 += 1 - pos;
                }
                _ => groups.push((s, pos, 1 - pos)),
            }
        }
        groups
    }
}

/// Fraction of samples where `score >= threshold` agrees with the label.
pub fn accuracy(s: &ScoreSet, threshold: f64) -> f64 {
    let correct = s
        .scores
        .iter()
        .zip(&s.labels)
        .filter(|(&score, label)| (score >= threshold) == label.is_fake())
        .count();
    correct as f64 / s.len() as f64
}

/// Mann–Whitney AUC from mid-ranks: `P(pos > neg) + ½ P(pos = neg)`.
pub fn auc(s: &ScoreSet) -> Result<f64> {
    s.require_both("AUC")?;
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));
    // Sum of mid-ranks of the positives, 1-based ranks.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && s.scores[idx[end]] == s.scores[idx[start]] {
            end += 1;
        }
        let mid_rank = (start + 1 + end) as f64 / 2.0;
        let pos = idx[start..end]
            .iter()
            .filter(|&&i| s.labels[i].is_fake())
            .count();
        rank_sum += mid_rank * pos as f64;
        start = end;
    }
    let (p, n) = (s.n_pos as f64, s.n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Step-interpolated average precision over descending distinct thresholds:
/// `Σ (R_k − R_{k−1}) P_k`.
pub fn average_precision(s: &ScoreSet) -> Result<f64> {
    if s.n_pos == 0 {
        return Err(Error::Domain("average precision needs at least one fake sample".into()));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (_, pos, neg) in s.groups_descending() {
        tp += pos;
        fp += neg;
        let recall = tp as f64 / s.n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Samples with `score >= threshold` are called fake. The first point
    /// uses `+inf`.
    pub threshold: f64,
}

/// ROC staircase from `(0, 0)` to `(1, 1)` and the equal error rate.
///
/// The EER is the FPR where `FPR = 1 − TPR`, linearly interpolated along the
/// ROC segment that brackets the crossing.
pub fn roc_and_eer(s: &ScoreSet) -> Result<(Vec<RocPoint>, f64)> {
    s.require_both("ROC")?;
    let (p, n) = (s.n_pos as f64, s.n_neg as f64);
    let mut roc = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (score, pos, neg) in s.groups_descending() {
        tp += pos;
        fp += neg;
        roc.push(RocPoint {
            fpr: fp as f64 / n,
            tpr: tp as f64 / p,
            threshold: score,
        });
    }

    // d = FPR − FNR goes from −1 at (0,0) to +1 at (1,1), nondecreasing.
    let diff = |pt: &RocPoint| pt.fpr - (1.0 - pt.tpr);
    let mut eer = f64::NAN;
    for w in roc.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let (da, db) = (diff(a), diff(b));
        if da == 0.0 {
            eer = a.fpr;
            break;
        }
        if da < 0.0 && db >= 0.0 {
            let t = -da / (db - da);
            eer = a.fpr + t * (b.fpr - a.fpr);
            break;
        }
    }
    debug_assert!(eer.is_finite());
    Ok((roc, eer))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub n_fake: usize,
    pub n_real: usize,
    pub acc_threshold: f64,
    pub acc: f64,
    pub auc: f64,
    pub ap: f64,
    pub eer: f64,
    #[serde(skip)]
    pub roc: Vec<RocPoint>,
}

pub fn evaluate(s: &ScoreSet, acc_threshold: f64) -> Result<EvalReport> {
    let (roc, eer) = roc_and_eer(s)?;
    Ok(EvalReport {
        count: s.len(),
        n_fake: s.n_pos,
        n_real: s.n_neg,
        acc_threshold,
        acc: accuracy(s, acc_threshold),
        auc: auc(s)?,
        ap: average_precision(s)?,
        eer,
        roc,
    })
}

/// Per-group metrics. Groups holding a single class only report accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub count: usize,
    pub acc: f64,
    pub metrics: Option<EvalReport>,
}

/// Splits the score set by `groups[i]` (e.g. generator tag) and evaluates each
/// part. Groups are returned in lexicographic order.
pub fn evaluate_by_group(
    s: &ScoreSet,
    groups: &[String],
    acc_threshold: f64,
) -> Result<BTreeMap<String, GroupReport>> {
    if groups.len() != s.len() {
        return Err(Error::argument(format!(
            "{} group tags for {} scores",
            groups.len(),
            s.len()
        )));
    }
    let mut parts: BTreeMap<&str, (Vec<f64>, Vec<Label>)> = BTreeMap::new();
    for ((g, &score), &label) in groups.iter().zip(&s.scores).zip(&s.labels) {
        let e = parts.entry(g.as_str()).or_default();
        e.0.push(score);
        e.1.push(label);
    }
    parts
        .into_iter()
        .map(|(g, (scores, labels))| {
            let sub = ScoreSet::new(scores, labels)?;
            let metrics = if sub.n_pos > 0 && sub.n_neg > 0 {
                Some(evaluate(&sub, acc_threshold)?)
            } else {
                None
            };
            Ok((
                g.to_owned(),
                GroupReport {
                    count: sub.len(),
                    acc: accuracy(&sub, acc_threshold),
                    metrics,
                },
            ))
        })
        .collect()
}

/// `fpr,tpr,threshold` rows with a header; the leading threshold is `inf`.
pub fn write_roc_csv(path: &Path, roc: &[RocPoint]) -> Result<()> {
    let mut out = String::from("fpr,tpr,threshold\n");
    for p in roc {
        let thr = if p.threshold.is_infinite() {
            "inf".to_owned()
        } else {
            format!("{}", p.threshold)
        };
        out.push_str(&format!("{},{},{}\n", p.fpr, p.tpr, thr));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
