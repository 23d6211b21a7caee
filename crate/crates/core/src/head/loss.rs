//! Binary cross-entropy and supervised contrastive losses.

use crate::error::{Error, Result};
use crate::manifest::Label;

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy `-[y ln ŷ + (1 - y) ln(1 - ŷ)]` for a probability.
pub fn loss_ce(y: Label, y_hat: f64) -> f64 {
    match y {
        Label::Fake => -y_hat.ln(),
        Label::Real => -(-y_hat).ln_1p(),
    }
}

/// Binary cross-entropy evaluated from a logit: `softplus(z) - y z`.
pub fn loss_ce_logit(y: Label, logit: f64) -> f64 {
    softplus(logit) - y.as_target() * logit
}

/// A batch of L2-normalized representations with their labels. The positive
/// set of anchor `i` is every other sample sharing its label.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatchView {
    z: Vec<Vec<f64>>,
    labels: Vec<Label>,
}

impl ContrastiveBatchView {
    /// Normalizes each representation to unit length.
    pub fn new(raw: &[Vec<f64>], labels: &[Label]) -> Result<Self> {
        if raw.len() != labels.len() {
            return Err(Error::argument(format!(
                "{} representations but {} labels",
                raw.len(),
                labels.len()
            )));
        }
        if let Some(first) = raw.first() {
            if raw.iter().any(|r| r.len() != first.len()) {
                return Err(Error::argument("representations differ in dimension"));
            }
        }
        let z = raw
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n == 0.0 || !n.is_finite() {
                    return Err(Error::Domain(format!(
                        "representation {i} has norm {n} and cannot be normalized"
                    )));
                }
                Ok(r.iter().map(|v| v / n).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(Self {
            z,
            labels: labels.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn z(&self) -> &[Vec<f64>] {
        &self.z
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    /// `P(i)`: indices other than `i` with the same label.
    pub fn positives(&self, i: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&p| p != i && self.labels[p] == self.labels[i])
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Supervised contrastive loss with its gradient with respect to each
/// (normalized) `z_i`.
///
/// For anchor `i` with positives `P(i)`:
/// `l_i = logsumexp_{a≠i}(z_i·z_a/τ) − mean_{p∈P(i)}(z_i·z_p/τ)`,
/// averaged over anchors with a nonempty `P(i)`.
pub fn supcon_with_grad(batch: &ContrastiveBatchView, tau: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let b = batch.len();
    if b < 2 {
        return Err(Error::argument(format!("contrastive batch needs at least 2 samples, got {b}")));
    }
    if !(tau > 0.0) {
        return Err(Error::argument(format!("temperature must be positive, got {tau}")));
    }
    let z = batch.z();
    let dim = z[0].len();
    let sims: Vec<Vec<f64>> = (0..b)
        .map(|i| (0..b).map(|a| dot(&z[i], &z[a]) / tau).collect())
        .collect();

    let anchors: Vec<(usize, Vec<usize>)> = (0..b)
        .map(|i| (i, batch.positives(i)))
        .filter(|(_, p)| !p.is_empty())
        .collect();
    if anchors.is_empty() {
        return Err(Error::Domain(
            "no anchor in the contrastive batch has a positive".into(),
        ));
    }
    let scale = 1.0 / anchors.len() as f64;

    let mut loss = 0.0;
    let mut grad = vec![vec![0.0; dim]; b];
    for (i, positives) in &anchors {
        let i = *i;
        let row = &sims[i];
        let max = (0..b)
            .filter(|&a| a != i)
            .map(|a| row[a])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..b).filter(|&a| a != i).map(|a| (row[a] - max).exp()).sum();
        let log_denom = max + denom.ln();
        let inv_p = 1.0 / positives.len() as f64;
        let pos_mean: f64 = positives.iter().map(|&p| row[p]).sum::<f64>() * inv_p;
        loss += scale * (log_denom - pos_mean);

        // d l_i / d s_ia = q_ia − [a ∈ P(i)] / |P(i)|, and s_ia = z_i·z_a / τ.
        for a in 0..b {
            if a == i {
                continue;
            }
            let q = (row[a] - max).exp() / denom;
            let is_pos = positives.binary_search(&a).is_ok();
            let coeff = scale * (q - if is_pos { inv_p } else { 0.0 }) / tau;
            if coeff == 0.0 {
                continue;
            }
            for d in 0..dim {
                grad[i][d] += coeff * z[a][d];
                grad[a][d] += coeff * z[i][d];
            }
        }
    }
    Ok((loss, grad))
}

pub fn loss_supcon(batch: &ContrastiveBatchView, tau: f64) -> Result<f64> {
    supcon_with_grad(batch, tau).map(|(l, _)| l)
}

/// Hybrid objective: mean CE over the batch plus `lambda` times the
/// supervised contrastive loss of `z_batch`. With `lambda == 0` the
/// contrastive term is not evaluated.
pub fn loss_total(
    logits: &[f64],
    labels: &[Label],
    z_batch: &[Vec<f64>],
    lambda: f64,
    tau: f64,
) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::argument(format!(
            "{} logits for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let ce = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| loss_ce_logit(y, z))
        .sum::<f64>()
        / logits.len() as f64;
    if lambda == 0.0 {
        return Ok(ce);
    }
    let view = ContrastiveBatchView::new(z_batch, labels)?;
    Ok(ce + lambda * loss_supcon(&view, tau)?)
}
