//! Curates a synthetic embedding manifest whose fake class is mostly
//! near-copies, then prints what each stage removed.
//!
//!     cargo run --example curate_embeddings -- 0.8

use divfuse::curator::{curate, CurationConfig, Stage};
use divfuse::manifest::{Branch, EmbeddingRecord, Label, Manifest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> divfuse::Result<()> {
    let threshold: f64 = std::env::args().nth(1).map_or(0.8, |s| s.parse().expect("threshold"));
    let dim = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = |rng: &mut ChaCha8Rng| -> f32 { StandardNormal.sample(rng) };

    let mut records = vec![];
    for i in 0..300 {
        let v = (0..dim).map(|_| noise(&mut rng)).collect();
        records.push(EmbeddingRecord::new(format!("real-{i:03}"), Label::Real, "", Branch::Pixel, v));
    }
    let prototypes: Vec<Vec<f32>> = (0..30).map(|_| (0..dim).map(|_| noise(&mut rng)).collect()).collect();
    for i in 0..300 {
        let p = &prototypes[rng.random_range(0..prototypes.len())];
        let v = p.iter().map(|x| x + 0.2 * noise(&mut rng)).collect();
        records.push(EmbeddingRecord::new(format!("fake-{i:03}"), Label::Fake, "gan", Branch::Pixel, v));
    }
    let manifest = Manifest::from_records(dim, records, "example")?;

    let cfg = CurationConfig { balance_tolerance: 5, ..CurationConfig::with_threshold(threshold) };
    let (kept, report) = curate(&manifest, &cfg)?;
    let (real, fake) = kept.class_counts();
    println!("input           {}", report.input_count);
    println!("after global    {} ({} real, {} fake)", report.after_global, report.real_after_global, report.fake_after_global);
    match report.refined_threshold_used {
        Some(t) => println!("class refine    T' = {t:.4}"),
        None => println!("class refine    not needed"),
    }
    println!("final           {} ({real} real, {fake} fake)", report.final_count);
    for stage in [Stage::Global, Stage::ClassReal, Stage::ClassFake, Stage::Balance] {
        let n = report.discards.iter().filter(|d| d.stage == stage).count();
        println!("  discarded at {stage:?}: {n}");
    }
    if let Some(d) = report.discards.first() {
        println!("first discard: {} (kept {:?}, cos {:.4})", d.discarded_id, d.kept_id, d.similarity);
    }
    Ok(())
}
