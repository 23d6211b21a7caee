//! Renders centered log-magnitude spectra for a small synthetic corpus and
//! reports where the strongest off-center peak of each class lies.
//!
//!     cargo run --example spectrum_images

use divfuse::spectrum::to_spectrum_image;
use divfuse::synth::{synth_corpus, CorpusSpec};

fn main() -> divfuse::Result<()> {
    let spec = CorpusSpec { per_class: 4, size: 64, artifact_strength: 0.1, ..CorpusSpec::default() };
    let out = std::env::temp_dir().join("divfuse-spectra");
    std::fs::create_dir_all(&out).map_err(|e| divfuse::Error::io(&out, e))?;

    for (label, image) in synth_corpus(&spec)? {
        let s = to_spectrum_image(&image, 64, label.id.clone())?;
        let g = &s.grid;
        let (cx, cy) = (g.width() / 2, g.height() / 2);
        let mut best = (0.0f32, (0, 0));
        for y in 0..g.height() {
            for x in 0..g.width() {
                let near_dc = x.abs_diff(cx) <= 2 && y.abs_diff(cy) <= 2;
                if !near_dc && g.get(x, y, 0) > best.0 {
                    best = (g.get(x, y, 0), (x, y));
                }
            }
        }
        let tag = if label.generator.is_empty() { "real" } else { label.generator.as_str() };
        println!("{:<16} {:<10} peak {:.3} at {:?}", label.id, tag, best.0, best.1);
        s.grid.save_png16(&out.join(format!("{}.spec.png", label.id)))?;
    }
    println!("spectra written to {}", out.display());
    Ok(())
}
