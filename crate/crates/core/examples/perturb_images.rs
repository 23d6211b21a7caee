//! Applies the train- and test-phase robustness protocols to a synthetic
//! corpus and summarizes the application logs.
//!
//!     cargo run --example perturb_images

use std::collections::BTreeMap;

use divfuse::perturb::{apply_protocol, Phase, PerturbSpec};
use divfuse::synth::{synth_corpus, CorpusSpec};

fn main() -> divfuse::Result<()> {
    let corpus = synth_corpus(&CorpusSpec { per_class: 50, size: 32, ..CorpusSpec::default() })?;
    let images: Vec<_> = corpus.into_iter().map(|(l, img)| (l.id, img)).collect();
    let spec = PerturbSpec { seed: 11, ..PerturbSpec::default() };

    for phase in [Phase::Train, Phase::Test] {
        let (out, log) = apply_protocol(&images, &spec, phase)?;
        let changed = images.iter().zip(&out).filter(|((_, a), b)| a != *b).count();
        println!("{phase:?}: {} of {} perturbed ({changed} changed)", log.len(), images.len());
        let mut sigmas: BTreeMap<String, usize> = BTreeMap::new();
        let mut qualities: BTreeMap<u8, usize> = BTreeMap::new();
        for e in &log {
            if let Some(s) = e.sigma {
                *sigmas.entry(format!("{:.1}", (s * 2.0).floor() / 2.0)).or_default() += 1;
            }
            if let Some(q) = e.quality {
                *qualities.entry(q / 10 * 10).or_default() += 1;
            }
        }
        println!("  sigma (by half-unit): {sigmas:?}");
        println!("  quality (by decade): {qualities:?}");
    }
    Ok(())
}
