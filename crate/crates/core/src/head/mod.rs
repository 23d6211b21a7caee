//! Trainable detection head over fused features.
//!
//! Three linear layers `F → 256 → 128 → 1` with LeakyReLU and inverted
//! dropout after each hidden layer, producing one binary logit. Trained with
//! `mean CE + λ · SupCon` using hand-derived gradients and Adam.

mod loss;
mod train;

pub use loss::{
    loss_ce, loss_ce_logit, loss_supcon, loss_total, sigmoid, softplus, supcon_with_grad,
    ContrastiveBatchView,
};
pub use train::{
    load_checkpoint, predict_proba, save_checkpoint, score_features, train, write_training_log,
    AdamState, EpochLog,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::Label;

/// Which vectors feed the supervised contrastive term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveSource {
    /// The L2-normalized fused input feature. Constant with respect to the
    /// head's parameters, so it contributes no gradient.
    Fused,
    /// The L2-normalized second hidden layer (after dropout in train mode).
    Hidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub tau: f64,
    pub dropout_rate: f64,
    pub leaky_slope: f64,
    pub seed: u64,
    pub contrastive: ContrastiveSource,
    pub hidden1: usize,
    pub hidden2: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            learning_rate: 1e-4,
            lambda: 0.1,
            tau: 0.1,
            dropout_rate: 0.2,
            leaky_slope: 0.01,
            seed: 0,
            contrastive: ContrastiveSource::Fused,
            hidden1: 256,
            hidden2: 128,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::argument(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if !(self.leaky_slope > 0.0) {
            return bad(format!("leaky_slope must be positive, got {}", self.leaky_slope));
        }
        if self.hidden1 == 0 || self.hidden2 == 0 {
            return bad("hidden layer widths must be positive".into());
        }
        Ok(())
    }
}

/// Weights are stored row-major as `[input][output]`, so `w1[i * hidden1 + k]`
/// connects input `i` to hidden unit `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParameters {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: f64,
}

impl HeadParameters {
    pub fn zeros(input: usize, hidden1: usize, hidden2: usize) -> Self {
        Self {
            input,
            hidden1,
            hidden2,
            w1: vec![0.0; input * hidden1],
            b1: vec![0.0; hidden1],
            w2: vec![0.0; hidden1 * hidden2],
            b2: vec![0.0; hidden2],
            w3: vec![0.0; hidden2],
            b3: 0.0,
        }
    }

    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    pub fn init(input: usize, hidden1: usize, hidden2: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input, hidden1, hidden2);
        let mut fill = |v: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for x in v {
                *x = rng.random_range(-bound..bound);
            }
        };
        fill(&mut p.w1, input);
        fill(&mut p.b1, input);
        fill(&mut p.w2, hidden1);
        fill(&mut p.b2, hidden1);
        fill(&mut p.w3, hidden2);
        let mut b3 = [0.0];
        fill(&mut b3, hidden2);
        p.b3 = b3[0];
        p
    }

    pub fn seeded(input: usize, cfg: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self::init(input, cfg.hidden1, cfg.hidden2, &mut rng)
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len() + self.w3.len() + 1
    }

    /// Visits every parameter in a fixed order: w1, b1, w2, b2, w3, b3.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let mut k = 0;
        for block in [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
        ] {
            for v in block.iter_mut() {
                f(k, v);
                k += 1;
            }
        }
        f(k, &mut self.b3);
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
        out.extend_from_slice(&self.w3);
        out.push(self.b3);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub x: Vec<f64>,
    pub pre1: Vec<f64>,
    /// Inverted-dropout multipliers (`0` or `1/(1-p)`); all ones in eval mode.
    pub mask1: Vec<f64>,
    pub h1: Vec<f64>,
    pub pre2: Vec<f64>,
    pub mask2: Vec<f64>,
    pub h2: Vec<f64>,
    pub logit: f64,
}

#[inline]
fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

#[inline]
fn leaky_grad(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        slope
    }
}

fn dropout_mask(n: usize, rate: f64, mode: Mode, rng: &mut impl Rng) -> Vec<f64> {
    if mode == Mode::Eval || rate == 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Full forward pass recording everything backward needs.
pub fn forward_trace(
    params: &HeadParameters,
    x: &[f32],
    mode: Mode,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<ForwardTrace> {
    if x.len() != params.input {
        return Err(Error::argument(format!(
            "feature dimension {} does not match head input {}",
            x.len(),
            params.input
        )));
    }
    let (h1n, h2n) = (params.hidden1, params.hidden2);
    let x: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();

    let mut pre1 = params.b1.clone();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &params.w1[i * h1n..(i + 1) * h1n];
        for (p, w) in pre1.iter_mut().zip(row) {
            *p += w * xi;
        }
    }
    let mask1 = dropout_mask(h1n, cfg.dropout_rate, mode, rng);
    let h1: Vec<f64> = pre1
        .iter()
        .zip(&mask1)
        .map(|(&p, &m)| leaky(p, cfg.leaky_slope) * m)
        .collect();

    let mut pre2 = params.b2.clone();
    for (k, &hk) in h1.iter().enumerate() {
        if hk == 0.0 {
            continue;
        }
        let row = &params.w2[k * h2n..(k + 1) * h2n];
        for (p, w) in pre2.iter_mut().zip(row) {
            *p += w * hk;
        }
    }
    let mask2 = dropout_mask(h2n, cfg.dropout_rate, mode, rng);
    let h2: Vec<f64> = pre2
        .iter()
        .zip(&mask2)
        .map(|(&p, &m)| leaky(p, cfg.leaky_slope) * m)
        .collect();

    let logit = params.b3 + params.w3.iter().zip(&h2).map(|(w, h)| w * h).sum::<f64>();
    Ok(ForwardTrace {
        x,
        pre1,
        mask1,
        h1,
        pre2,
        mask2,
        h2,
        logit,
    })
}

/// Returns `(logit, hidden2 activations)`. Eval mode is deterministic and
/// ignores `rng`.
pub fn forward(
    params: &HeadParameters,
    x: &[f32],
    mode: Mode,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<(f64, Vec<f64>)> {
    forward_trace(params, x, mode, cfg, rng).map(|t| (t.logit, t.h2))
}

/// Loss components of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub ce: f64,
    /// `None` when λ = 0 or the batch has no anchor with a positive.
    pub sc: Option<f64>,
    pub total: f64,
}

/// Representation fed to the contrastive term for one traced sample.
fn contrastive_input(trace: &ForwardTrace, source: ContrastiveSource) -> Vec<f64> {
    match source {
        ContrastiveSource::Fused => trace.x.clone(),
        ContrastiveSource::Hidden => trace.h2.clone(),
    }
}

/// Loss of a traced batch. With `strict`, a degenerate contrastive batch is an
/// error; otherwise the contrastive term is dropped for that batch.
pub fn batch_loss(
    traces: &[ForwardTrace],
    labels: &[Label],
    cfg: &TrainConfig,
    strict: bool,
) -> Result<LossParts> {
    backward_impl(None, traces, labels, cfg, strict).map(|(_, parts)| parts)
}

/// Exact gradients of `mean CE + λ · SupCon` over a traced batch, using the
/// dropout masks recorded in the traces.
pub fn backward(
    params: &HeadParameters,
    traces: &[ForwardTrace],
    labels: &[Label],
    cfg: &TrainConfig,
) -> Result<(HeadParameters, LossParts)> {
    let (grads, parts) = backward_impl(Some(params), traces, labels, cfg, true)?;
    Ok((grads.expect("params supplied"), parts))
}

pub(crate) fn backward_impl(
    params: Option<&HeadParameters>,
    traces: &[ForwardTrace],
    labels: &[Label],
    cfg: &TrainConfig,
    strict: bool,
) -> Result<(Option<HeadParameters>, LossParts)> {
    let b = traces.len();
    if b == 0 || labels.len() != b {
        return Err(Error::argument(format!("{b} traces for {} labels", labels.len())));
    }
    let inv_b = 1.0 / b as f64;
    let ce = traces
        .iter()
        .zip(labels)
        .map(|(t, &y)| loss_ce_logit(y, t.logit))
        .sum::<f64>()
        * inv_b;

    // Contrastive term and its gradient w.r.t. the raw representation.
    let mut sc = None;
    let mut rep_grads: Option<Vec<Vec<f64>>> = None;
    if cfg.lambda != 0.0 {
        let raw: Vec<Vec<f64>> = traces
            .iter()
            .map(|t| contrastive_input(t, cfg.contrastive))
            .collect();
        let attempt = ContrastiveBatchView::new(&raw, labels)
            .and_then(|view| supcon_with_grad(&view, cfg.tau).map(|r| (view, r)));
        match attempt {
            Ok((view, (value, gz))) => {
                sc = Some(value);
                if cfg.contrastive == ContrastiveSource::Hidden {
                    // z = r / |r|  ⇒  dL/dr = (g − z (z·g)) / |r|
                    let grads = raw
                        .iter()
                        .zip(view.z())
                        .zip(&gz)
                        .map(|((r, z), g)| {
                            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                            let zg: f64 = z.iter().zip(g).map(|(a, b)| a * b).sum();
                            z.iter()
                                .zip(g)
                                .map(|(zi, gi)| cfg.lambda * (gi - zi * zg) / norm)
                                .collect()
                        })
                        .collect();
                    rep_grads = Some(grads);
                }
            }
            Err(e) if strict => return Err(e),
            Err(_) => {}
        }
    }
    let total = ce + cfg.lambda * sc.unwrap_or(0.0);
    let parts = LossParts { ce, sc, total };

    let Some(params) = params else {
        return Ok((None, parts));
    };
    let (h1n, h2n) = (params.hidden1, params.hidden2);
    let mut g = HeadParameters::zeros(params.input, h1n, h2n);
    let slope = cfg.leaky_slope;
    let mut dh1 = vec![0.0; h1n];
    let mut dpre2 = vec![0.0; h2n];

    for (s, (t, &y)) in traces.iter().zip(labels).enumerate() {
        let g_logit = (sigmoid(t.logit) - y.as_target()) * inv_b;

        // Output layer.
        for (gw, &h) in g.w3.iter_mut().zip(&t.h2) {
            *gw += g_logit * h;
        }
        g.b3 += g_logit;

        // Second hidden layer.
        for l in 0..h2n {
            let mut dh2 = g_logit * params.w3[l];
            if let Some(rg) = &rep_grads {
                dh2 += rg[s][l];
            }
            dpre2[l] = dh2 * t.mask2[l] * leaky_grad(t.pre2[l], slope);
        }
        for (gb, &d) in g.b2.iter_mut().zip(&dpre2) {
            *gb += d;
        }
        for k in 0..h1n {
            let hk = t.h1[k];
            let w_row = &params.w2[k * h2n..(k + 1) * h2n];
            let g_row = &mut g.w2[k * h2n..(k + 1) * h2n];
            let mut acc = 0.0;
            for l in 0..h2n {
                g_row[l] += hk * dpre2[l];
                acc += w_row[l] * dpre2[l];
            }
            dh1[k] = acc * t.mask1[k] * leaky_grad(t.pre1[k], slope);
        }

        // First hidden layer.
        for (gb, &d) in g.b1.iter_mut().zip(&dh1) {
            *gb += d;
        }
        for (i, &xi) in t.x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let g_row = &mut g.w1[i * h1n..(i + 1) * h1n];
            for (gw, &d) in g_row.iter_mut().zip(&dh1) {
                *gw += xi * d;
            }
        }
    }
    Ok((Some(g), parts))
}
