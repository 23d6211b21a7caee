//! Pixel and spectrum embeddings that each carry half of the class signal,
//! fused and fed to the detection head. Compares single-branch heads with the
//! fused one on held-out data.
//!
//!     cargo run --release --example fuse_and_train

use divfuse::evaluator::{auc, ScoreSet};
use divfuse::fusion::join_blocks;
use divfuse::head::{score_features, train, TrainConfig};
use divfuse::manifest::{Branch, EmbeddingRecord, Label, Manifest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn branch(rng: &mut ChaCha8Rng, labels: &[Label], which: Branch, axis: usize) -> divfuse::Result<Manifest> {
    let records = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let sign = if l.is_fake() { 0.5 } else { -0.5 };
            let v = (0..32)
                .map(|k| Distribution::<f32>::sample(&StandardNormal, rng) + if k == axis { sign } else { 0.0 })
                .collect();
            EmbeddingRecord::new(format!("s{i:04}"), *l, "", which, v)
        })
        .collect();
    Manifest::from_records(32, records, "example")
}

fn main() -> divfuse::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let labels: Vec<Label> = (0..2000).map(|_| Label::from_fake(rng.random())).collect();
    let pixel = branch(&mut rng, &labels, Branch::Pixel, 0)?;
    let spectrum = branch(&mut rng, &labels, Branch::Spectrum, 5)?;
    let pairing = join_blocks(&[&pixel], &[&spectrum])?;
    println!("paired {} samples, fused dimension {}", pairing.features.len(), pairing.features.dimension());

    let cfg = TrainConfig { epochs: 20, batch_size: 64, learning_rate: 1e-3, ..TrainConfig::default() };
    for (name, p, s) in [("pixel only", true, false), ("spectrum only", false, true), ("fused", true, true)] {
        let set = pairing.features.select(p, s)?;
        let (tr, te) = set.features.split_at(1000);
        let (params, log) = train(tr, &cfg)?;
        let scores = score_features(&params, te, &cfg)?;
        let value = auc(&ScoreSet::new(scores, te.iter().map(|f| f.label).collect())?)?;
        let last = log.last().expect("epochs > 0");
        println!("{name:<14} held-out AUC {value:.4}  (final CE {:.4}, SupCon {:.4})", last.mean_ce, last.mean_sc);
    }
    Ok(())
}
