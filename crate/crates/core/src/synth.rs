//! Synthetic toy image corpora for examples, tests and the toy pipeline.
//!
//! Real images are smooth random fields. Fake images come from the same
//! distribution with a faint generator fingerprint added on top: a pixel
//! checkerboard (`gan`) or a period-4 grid (`diffusion`), plus a small tone
//! shift. Near-duplicates are re-noised copies of an earlier image of the
//! same class.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{write_labels, ImageLabel, Label, LABELS_FILE};
use crate::raster::Raster;

pub const GENERATORS: [&str; 2] = ["gan", "diffusion"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    /// Images per class.
    pub per_class: usize,
    pub size: usize,
    /// Share of each class generated as near-copies of earlier images.
    pub duplicate_fraction: f64,
    pub artifact_strength: f64,
    pub tone_shift: f64,
    pub seed: u64,
    /// Prefix for generated ids, e.g. `train`.
    pub prefix: String,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            per_class: 40,
            size: 32,
            duplicate_fraction: 0.0,
            artifact_strength: 0.06,
            tone_shift: 0.04,
            seed: 0,
            prefix: "img".into(),
        }
    }
}

fn smooth_field(size: usize, rng: &mut ChaCha8Rng) -> Raster {
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.7));
    let waves: Vec<(f64, f64, f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..TAU),
                rng.random_range(0.05..0.15),
                std::array::from_fn(|_| rng.random_range(0.5..1.0)),
            )
        })
        .collect();
    let n = size as f64;
    Raster::from_fn(size, size, 3, |x, y, c| {
        let mut v = base[c];
        for (fx, fy, phase, amp, tint) in &waves {
            v += amp * tint[c] * (TAU * (fx * x as f64 + fy * y as f64) / n + phase).sin();
        }
        v as f32
    })
}

fn fingerprint(generator: &str, x: usize, y: usize) -> f64 {
    match generator {
        "gan" => {
            if (x + y) % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        }
        _ => {
            if x % 4 == 0 || y % 4 == 0 {
                1.0
            } else {
                -0.6
            }
        }
    }
}

/// One image. `generator` is ignored for real images.
pub fn synth_image(label: Label, generator: &str, spec: &CorpusSpec, rng: &mut ChaCha8Rng) -> Raster {
    let mut img = smooth_field(spec.size, rng);
    let noise = Normal::new(0.0, 0.02).expect("valid std");
    let (w, h) = (img.width(), img.height());
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut v = f64::from(img.get(x, y, c)) + noise.sample(rng);
                if label.is_fake() {
                    v += spec.artifact_strength * fingerprint(generator, x, y) + spec.tone_shift;
                }
                img.set(x, y, c, v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    img
}

fn renoise(img: &Raster, rng: &mut ChaCha8Rng) -> Raster {
    let noise = Normal::new(0.0, 0.004).expect("valid std");
    let data = img
        .data()
        .iter()
        .map(|&v| (f64::from(v) + noise.sample(rng)).clamp(0.0, 1.0) as f32)
        .collect();
    Raster::new(img.width(), img.height(), img.channels(), data).expect("same shape")
}

/// Generates the corpus in memory: real images first, then fakes split evenly
/// over [`GENERATORS`].
pub fn synth_corpus(spec: &CorpusSpec) -> Result<Vec<(ImageLabel, Raster)>> {
    if spec.size < 4 || spec.per_class == 0 {
        return Err(Error::argument("corpus needs size >= 4 and at least one image per class"));
    }
    if !(0.0..1.0).contains(&spec.duplicate_fraction) {
        return Err(Error::argument("duplicate_fraction must lie in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out: Vec<(ImageLabel, Raster)> = Vec::with_capacity(2 * spec.per_class);
    for label in [Label::Real, Label::Fake] {
        let first = out.len();
        for i in 0..spec.per_class {
            let generator = match label {
                Label::Real => "real",
                Label::Fake => GENERATORS[i % GENERATORS.len()],
            };
            let dup = i > 0 && rng.random::<f64>() < spec.duplicate_fraction;
            let (image, generator) = if dup {
                let (src_label, src) = &out[first + rng.random_range(0..i)];
                (renoise(src, &mut rng), src_label.generator.clone())
            } else {
                (synth_image(label, generator, spec, &mut rng), generator.to_owned())
            };
            let id = format!("{}-{}-{i:04}", spec.prefix, label);
            out.push((
                ImageLabel {
                    file: format!("{id}.png"),
                    id,
                    label,
                    generator,
                },
                image,
            ));
        }
    }
    Ok(out)
}

/// Writes [`synth_corpus`] as 8-bit PNGs plus `labels.jsonl`.
pub fn write_corpus(dir: &Path, spec: &CorpusSpec) -> Result<Vec<ImageLabel>> {
    let corpus = synth_corpus(spec)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (label, image) in &corpus {
        image.save_png(&dir.join(&label.file))?;
    }
    let labels: Vec<ImageLabel> = corpus.into_iter().map(|(l, _)| l).collect();
    write_labels(&dir.join(LABELS_FILE), &labels)?;
    Ok(labels)
}
