//! Pools embeddings from several sources with a per-(source, class) cap, the
//! dataset-combination workflow, then curates the pool.
//!
//!     cargo run --example combine_datasets -- 20

use divfuse::curator::{curate, CurationConfig};
use divfuse::manifest::{embed_directory, Branch, Manifest};
use divfuse::pipeline::combine_datasets;
use divfuse::synth::{write_corpus, CorpusSpec};

fn main() -> divfuse::Result<()> {
    let cap: Option<usize> = std::env::args().nth(1).map(|s| s.parse().expect("cap"));
    let root = tempfile::tempdir().map_err(|e| divfuse::Error::io(std::env::temp_dir(), e))?;

    let mut sources: Vec<Manifest> = vec![];
    for (k, (per_class, dup)) in [(40, 0.5), (25, 0.0), (60, 0.3)].into_iter().enumerate() {
        let dir = root.path().join(format!("source-{k}"));
        let spec = CorpusSpec {
            per_class,
            duplicate_fraction: dup,
            seed: k as u64,
            prefix: format!("src{k}"),
            ..CorpusSpec::default()
        };
        write_corpus(&dir, &spec)?;
        let m = embed_directory(&dir, Branch::Pixel, 32, 0)?;
        let (r, f) = m.class_counts();
        println!("source {k}: {r} real, {f} fake");
        sources.push(m);
    }

    let pool = combine_datasets(&sources, cap, 9)?;
    let (r, f) = pool.class_counts();
    println!("pool (cap {cap:?}): {} records, {r} real, {f} fake", pool.count());
    let (kept, report) = curate(&pool, &CurationConfig::with_threshold(0.999))?;
    println!("curated: {} kept, {} discarded", kept.count(), report.discards.len());
    Ok(())
}
