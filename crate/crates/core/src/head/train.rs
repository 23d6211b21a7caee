use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{backward_impl, forward_trace, HeadParameters, Mode, TrainConfig};
use crate::error::{Error, Result};
use crate::fusion::FusedFeature;
use crate::manifest::write_jsonl;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_ce: f64,
    pub mean_sc: f64,
    pub total: f64,
}

/// First and second moment estimates for every parameter, in
/// [`HeadParameters::flatten`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut HeadParameters, grads: &HeadParameters, cfg: &TrainConfig) {
        self.t += 1;
        let g = grads.flatten();
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let (m, v) = (&mut self.m, &mut self.v);
        params.for_each_mut(|k, p| {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        });
    }
}

/// Trains a freshly initialized head.
///
/// One `ChaCha8Rng` seeded from `cfg.seed` drives initialization, the
/// per-epoch Fisher–Yates shuffle and the dropout masks, in that order, so a
/// run is bitwise reproducible. Batches whose contrastive term is undefined
/// (no anchor with a positive) train on CE alone.
pub fn train(
    features: &[FusedFeature],
    cfg: &TrainConfig,
) -> Result<(HeadParameters, Vec<EpochLog>)> {
    cfg.validate()?;
    let n_fake = features.iter().filter(|f| f.label.is_fake()).count();
    let n_real = features.len() - n_fake;
    if n_fake == 0 || n_real == 0 {
        return Err(Error::Domain("training needs both real and fake samples".into()));
    }
    if n_fake < 2 || n_real < 2 {
        return Err(Error::Domain(format!(
            "training needs at least 2 samples per class, got {n_real} real / {n_fake} fake"
        )));
    }
    let dim = features[0].vector.len();
    if let Some(bad) = features.iter().find(|f| f.vector.len() != dim) {
        return Err(Error::argument(format!(
            "feature `{}` has dimension {}, expected {dim}",
            bad.id,
            bad.vector.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = HeadParameters::init(dim, cfg.hidden1, cfg.hidden2, &mut rng);
    let mut adam = AdamState::new(params.param_count());
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut ce_sum, mut sc_sum, mut sc_weight) = (0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut traces = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &i in batch {
                traces.push(forward_trace(&params, &features[i].vector, Mode::Train, cfg, &mut rng)?);
                labels.push(features[i].label);
            }
            let (grads, parts) = backward_impl(Some(&params), &traces, &labels, cfg, false)?;
            adam.step(&mut params, &grads.expect("params supplied"), cfg);
            if !params.is_finite() {
                return Err(Error::Domain(format!(
                    "parameters became non-finite in epoch {}",
                    epoch + 1
                )));
            }
            ce_sum += parts.ce * batch.len() as f64;
            if let Some(sc) = parts.sc {
                sc_sum += sc * batch.len() as f64;
                sc_weight += batch.len();
            }
        }
        let mean_ce = ce_sum / features.len() as f64;
        let mean_sc = if sc_weight > 0 {
            sc_sum / sc_weight as f64
        } else {
            0.0
        };
        log.push(EpochLog {
            epoch: epoch + 1,
            mean_ce,
            mean_sc,
            total: mean_ce + cfg.lambda * mean_sc,
        });
    }
    Ok((params, log))
}

/// Eval-mode probability that `x` is fake.
pub fn predict_proba(params: &HeadParameters, x: &[f32], cfg: &TrainConfig) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    forward_trace(params, x, Mode::Eval, cfg, &mut rng).map(|t| super::sigmoid(t.logit))
}

/// Eval-mode probabilities for a feature list, in input order.
pub fn score_features(
    params: &HeadParameters,
    features: &[FusedFeature],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    features
        .par_iter()
        .map(|f| predict_proba(params, &f.vector, cfg))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    input: usize,
    hidden1: usize,
    hidden2: usize,
    dtype: String,
    config: TrainConfig,
}

/// Writes a header line of JSON (layer sizes and the training config)
/// followed by w1, b1, w2, b2, w3, b3 as little-endian f64.
pub fn save_checkpoint(path: &Path, params: &HeadParameters, cfg: &TrainConfig) -> Result<()> {
    let header = CheckpointHeader {
        kind: "head".into(),
        input: params.input,
        hidden1: params.hidden1,
        hidden2: params.hidden2,
        dtype: "f64".into(),
        config: *cfg,
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = serde_json::to_string(&header)?;
    line.push('\n');
    w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    for v in params.flatten() {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(HeadParameters, TrainConfig)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::format("header", e.to_string()))?;
    if header.kind != "head" || header.dtype != "f64" {
        return Err(Error::format("kind", "not a head checkpoint"));
    }
    let mut params = HeadParameters::zeros(header.input, header.hidden1, header.hidden2);
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != params.param_count() * 8 {
        return Err(Error::Integrity(format!(
            "checkpoint expects {} parameters, payload has {} bytes",
            params.param_count(),
            bytes.len()
        )));
    }
    let mut values = bytes.chunks_exact(8).map(|b| {
        f64::from_le_bytes(b.try_into().expect("8-byte chunk"))
    });
    params.for_each_mut(|_, p| *p = values.next().expect("length checked"));
    Ok((params, header.config))
}

pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    write_jsonl(path, log)
}
