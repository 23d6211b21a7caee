//! Robustness perturbations: Gaussian blur, JPEG re-encoding, and the seeded
//! train/test application protocol.

use std::io::Cursor;
use std::path::Path;

use image::codecs::jpeg::JpegEncoder;
use image::{ExtendedColorType, ImageFormat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curator::seeded_subset;
use crate::error::{Error, Result};
use crate::manifest::{read_labels, write_jsonl, write_labels, ImageLabel, LABELS_FILE};
use crate::raster::Raster;

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Mirror index without repeating the edge sample (`-1 → 1`, `n → n-2`).
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Separable Gaussian blur with reflected borders. `sigma == 0` returns the
/// input unchanged.
pub fn gaussian_blur(image: &Raster, sigma: f64) -> Result<Raster> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::argument(format!("sigma must be a finite value >= 0, got {sigma}")));
    }
    if sigma == 0.0 || image.is_empty() {
        return Ok(image.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let src = image.data();

    let mut horizontal = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, &tap) in kernel.iter().enumerate() {
                    let sx = reflect_index(x as isize + k as isize - radius, w);
                    acc += tap * f64::from(src[(y * w + sx) * ch + c]);
                }
                horizontal[(y * w + x) * ch + c] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, &tap) in kernel.iter().enumerate() {
                    let sy = reflect_index(y as isize + k as isize - radius, h);
                    acc += tap * horizontal[(sy * w + x) * ch + c];
                }
                out[(y * w + x) * ch + c] = acc as f32;
            }
        }
    }
    Raster::new(w, h, ch, out)
}

fn rgb_to_ycbcr(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    (
        0.299 * r + 0.587 * g + 0.114 * b,
        128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b,
        128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b,
    )
}

fn ycbcr_to_rgb(y: f64, cb: f64, cr: f64) -> (f64, f64, f64) {
    (
        y + 1.402 * (cr - 128.0),
        y - 0.344136 * (cb - 128.0) - 0.714136 * (cr - 128.0),
        y + 1.772 * (cb - 128.0),
    )
}

/// Averages chroma over 2×2 blocks and replicates it back, which is the
/// information loss of 4:2:0 subsampling.
fn subsample_chroma_420(rgb: &mut [u8], w: usize, h: usize) {
    let ycc: Vec<(f64, f64, f64)> = rgb
        .chunks_exact(3)
        .map(|p| rgb_to_ycbcr(f64::from(p[0]), f64::from(p[1]), f64::from(p[2])))
        .collect();
    for by in (0..h).step_by(2) {
        for bx in (0..w).step_by(2) {
            let (mut cb, mut cr, mut n) = (0.0, 0.0, 0.0);
            for y in by..(by + 2).min(h) {
                for x in bx..(bx + 2).min(w) {
                    let p = ycc[y * w + x];
                    cb += p.1;
                    cr += p.2;
                    n += 1.0;
                }
            }
            let (cb, cr) = (cb / n, cr / n);
            for y in by..(by + 2).min(h) {
                for x in bx..(bx + 2).min(w) {
                    let (r, g, b) = ycbcr_to_rgb(ycc[y * w + x].0, cb, cr);
                    let i = (y * w + x) * 3;
                    rgb[i] = r.round().clamp(0.0, 255.0) as u8;
                    rgb[i + 1] = g.round().clamp(0.0, 255.0) as u8;
                    rgb[i + 2] = b.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
}

/// Encodes to baseline JPEG at `quality` (libjpeg table scaling) and decodes
/// back. Color images get 4:2:0 chroma; single-channel images are encoded as
/// grayscale.
pub fn jpeg_roundtrip(image: &Raster, quality: u8) -> Result<Raster> {
    if !(1..=100).contains(&quality) {
        return Err(Error::argument(format!("JPEG quality must lie in [1, 100], got {quality}")));
    }
    if image.is_empty() {
        return Err(Error::argument("cannot JPEG-encode an empty image"));
    }
    let (w, h) = (image.width(), image.height());
    let dynamic = image.to_dynamic8();
    let mut bytes = Vec::new();
    {
        let mut encoder = JpegEncoder::new_with_quality(Cursor::new(&mut bytes), quality);
        if image.channels() == 3 {
            let mut rgb = dynamic.to_rgb8().into_raw();
            subsample_chroma_420(&mut rgb, w, h);
            encoder.encode(&rgb, w as u32, h as u32, ExtendedColorType::Rgb8)?;
        } else {
            let luma = dynamic.to_luma8().into_raw();
            encoder.encode(&luma, w as u32, h as u32, ExtendedColorType::L8)?;
        }
    }
    let decoded = image::load_from_memory_with_format(&bytes, ImageFormat::Jpeg)?;
    Ok(Raster::from_dynamic(&decoded))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbKind {
    Gaussian,
    Jpeg,
    Both,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Test,
}

/// Application order when `kind = both`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    BlurThenJpeg,
    JpegThenBlur,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbSpec {
    pub kind: PerturbKind,
    pub train_sigmas: Vec<f64>,
    pub train_qualities: Vec<u8>,
    pub test_sigma_range: (f64, f64),
    pub test_quality_range: (u8, u8),
    pub apply_fraction: f64,
    pub composition: Composition,
    pub seed: u64,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        Self {
            kind: PerturbKind::Both,
            train_sigmas: vec![0.5, 1.0],
            train_qualities: vec![50, 70],
            test_sigma_range: (0.0, 3.0),
            test_quality_range: (30, 100),
            apply_fraction: 0.5,
            composition: Composition::BlurThenJpeg,
            seed: 0,
        }
    }
}

impl PerturbSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.apply_fraction) {
            return Err(Error::argument(format!(
                "apply_fraction must lie in [0, 1], got {}",
                self.apply_fraction
            )));
        }
        if self.train_sigmas.is_empty() || self.train_sigmas.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::argument("train_sigmas must be a nonempty set of values >= 0"));
        }
        if self.train_qualities.is_empty()
            || self.train_qualities.iter().any(|q| !(1..=100).contains(q))
        {
            return Err(Error::argument("train_qualities must be a nonempty set within [1, 100]"));
        }
        let (s0, s1) = self.test_sigma_range;
        if !(s0 >= 0.0 && s1 >= s0) {
            return Err(Error::argument(format!("invalid test_sigma_range ({s0}, {s1})")));
        }
        let (q0, q1) = self.test_quality_range;
        if !(q0 >= 1 && q1 <= 100 && q0 <= q1) {
            return Err(Error::argument(format!("invalid test_quality_range ({q0}, {q1})")));
        }
        Ok(())
    }
}

/// One perturbed sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub id: String,
    pub kind: PerturbKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quality: Option<u8>,
}

/// Decides which samples are perturbed and with which parameters.
///
/// Train phase: exactly `round(apply_fraction · n)` samples, chosen by
/// [`seeded_subset`], each with parameters drawn uniformly from the discrete
/// train sets. Test phase: every sample, parameters drawn uniformly from the
/// continuous sigma range and the inclusive integer quality range. An
/// `apply_fraction` of 0 disables both phases. Entries are in input order.
pub fn plan_protocol(ids: &[String], spec: &PerturbSpec, phase: Phase) -> Result<Vec<LogEntry>> {
    spec.validate()?;
    if spec.kind == PerturbKind::None || spec.apply_fraction == 0.0 {
        return Ok(Vec::new());
    }
    let n = ids.len();
    let selected: Vec<usize> = match phase {
        Phase::Train => {
            let k = (spec.apply_fraction * n as f64).round() as usize;
            seeded_subset(n, k, spec.seed)
        }
        Phase::Test => (0..n).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let blur = matches!(spec.kind, PerturbKind::Gaussian | PerturbKind::Both);
    let jpeg = matches!(spec.kind, PerturbKind::Jpeg | PerturbKind::Both);
    Ok(selected
        .into_iter()
        .map(|i| {
            let sigma = blur.then(|| match phase {
                Phase::Train => spec.train_sigmas[rng.random_range(0..spec.train_sigmas.len())],
                Phase::Test => {
                    let (lo, hi) = spec.test_sigma_range;
                    rng.random_range(lo..=hi)
                }
            });
            let quality = jpeg.then(|| match phase {
                Phase::Train => {
                    spec.train_qualities[rng.random_range(0..spec.train_qualities.len())]
                }
                Phase::Test => {
                    let (lo, hi) = spec.test_quality_range;
                    rng.random_range(lo..=hi)
                }
            });
            LogEntry {
                id: ids[i].clone(),
                kind: spec.kind,
                sigma,
                quality,
            }
        })
        .collect())
}

/// Applies one logged perturbation.
pub fn apply_entry(image: &Raster, entry: &LogEntry, composition: Composition) -> Result<Raster> {
    let blur = |img: &Raster| match entry.sigma {
        Some(s) => gaussian_blur(img, s),
        None => Ok(img.clone()),
    };
    let jpeg = |img: &Raster| match entry.quality {
        Some(q) => jpeg_roundtrip(img, q),
        None => Ok(img.clone()),
    };
    match composition {
        Composition::BlurThenJpeg => jpeg(&blur(image)?),
        Composition::JpegThenBlur => blur(&jpeg(image)?),
    }
}

/// Runs the protocol over `(id, image)` pairs. Untouched samples are returned
/// bitwise unchanged.
pub fn apply_protocol(
    images: &[(String, Raster)],
    spec: &PerturbSpec,
    phase: Phase,
) -> Result<(Vec<Raster>, Vec<LogEntry>)> {
    let ids: Vec<String> = images.iter().map(|(id, _)| id.clone()).collect();
    let log = plan_protocol(&ids, spec, phase)?;
    let mut entry_for = vec![None; images.len()];
    {
        let mut e = log.iter().peekable();
        for (i, id) in ids.iter().enumerate() {
            if e.peek().is_some_and(|entry| &entry.id == id) {
                entry_for[i] = e.next();
            }
        }
    }
    let out = images
        .par_iter()
        .zip(entry_for.par_iter())
        .map(|((_, img), entry)| match entry {
            Some(entry) => apply_entry(img, entry, spec.composition),
            None => Ok(img.clone()),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((out, log))
}

/// Perturbs every image listed in `<input>/labels.jsonl`, writing lossless
/// PNGs named `<id>.png` and a new `labels.jsonl` to `output`, and the
/// application log to `log_path`.
pub fn perturb_directory(
    input: &Path,
    output: &Path,
    spec: &PerturbSpec,
    phase: Phase,
    log_path: &Path,
) -> Result<Vec<LogEntry>> {
    let labels = read_labels(&input.join(LABELS_FILE))?;
    let images = labels
        .iter()
        .map(|l| Ok((l.id.clone(), Raster::load(&input.join(&l.file))?)))
        .collect::<Result<Vec<_>>>()?;
    let (perturbed, log) = apply_protocol(&images, spec, phase)?;
    std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let out_labels = labels
        .par_iter()
        .zip(perturbed.par_iter())
        .map(|(l, img)| {
            let file = format!("{}.png", l.id);
            img.save_png(&output.join(&file))?;
            Ok(ImageLabel {
                file,
                ..l.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_labels(&output.join(LABELS_FILE), &out_labels)?;
    write_jsonl(log_path, &log)?;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_radius_and_sum() {
        let k = gaussian_kernel(1.0);
        assert_eq!(k.len(), 7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(gaussian_kernel(0.5).len(), 5);
    }

    #[test]
    fn reflection_indices() {
        let got: Vec<usize> = (-3..8).map(|i| reflect_index(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(reflect_index(-7, 1), 0);
    }

    #[test]
    fn zero_sigma_is_identity() {
        let img = Raster::from_fn(7, 5, 3, |x, y, c| ((x * 13 + y * 7 + c) % 17) as f32 / 16.0);
        assert_eq!(gaussian_blur(&img, 0.0).unwrap(), img);
    }

    #[test]
    fn constant_image_survives_blur() {
        let img = Raster::filled(9, 6, 3, 0.42);
        for sigma in [0.3, 1.0, 2.5, 7.0] {
            let out = gaussian_blur(&img, sigma).unwrap();
            assert!(out.data().iter().all(|&v| (f64::from(v) - f64::from(0.42f32)).abs() < 1e-9));
        }
    }

    #[test]
    fn negative_sigma_rejected() {
        let img = Raster::filled(2, 2, 1, 0.0);
        assert!(matches!(gaussian_blur(&img, -0.1), Err(Error::Argument(_))));
        assert!(gaussian_blur(&img, f64::NAN).is_err());
    }

    #[test]
    fn jpeg_quality_bounds() {
        let img = Raster::filled(8, 8, 3, 0.5);
        assert!(matches!(jpeg_roundtrip(&img, 0), Err(Error::Argument(_))));
        assert!(matches!(jpeg_roundtrip(&img, 101), Err(Error::Argument(_))));
    }

    #[test]
    fn jpeg_flat_gray_near_lossless() {
        let img = Raster::filled(8, 8, 3, 0.5);
        let out = jpeg_roundtrip(&img, 100).unwrap();
        let q = img.quantized8();
        let mae: f64 = out
            .data()
            .iter()
            .zip(q.data())
            .map(|(a, b)| f64::from((a - b).abs()) * 255.0)
            .sum::<f64>()
            / out.data().len() as f64;
        assert!(mae < 1.0, "mae {mae}");
        assert_eq!(out.shape(), img.shape());
    }

    #[test]
    fn grayscale_jpeg_keeps_one_channel() {
        let img = Raster::from_fn(16, 16, 1, |x, y, _| ((x + y) % 2) as f32);
        assert_eq!(jpeg_roundtrip(&img, 60).unwrap().channels(), 1);
    }

    #[test]
    fn zero_fraction_plans_nothing() {
        let ids: Vec<String> = (0..20).map(|i| i.to_string()).collect();
        let spec = PerturbSpec {
            apply_fraction: 0.0,
            ..PerturbSpec::default()
        };
        assert!(plan_protocol(&ids, &spec, Phase::Train).unwrap().is_empty());
        assert!(plan_protocol(&ids, &spec, Phase::Test).unwrap().is_empty());
    }

    #[test]
    fn test_phase_covers_every_sample_within_ranges() {
        let ids: Vec<String> = (0..200).map(|i| i.to_string()).collect();
        let log = plan_protocol(&ids, &PerturbSpec::default(), Phase::Test).unwrap();
        assert_eq!(log.len(), 200);
        for e in &log {
            let s = e.sigma.unwrap();
            let q = e.quality.unwrap();
            assert!((0.0..=3.0).contains(&s));
            assert!((30..=100).contains(&q));
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = PerturbSpec {
            apply_fraction: 1.5,
            ..PerturbSpec::default()
        };
        assert!(plan_protocol(&[], &spec, Phase::Train).is_err());
    }
}
