//! Frequency-domain magnitude spectra for the spectrum branch.
//!
//! Each channel goes through a 2-D DFT (row/column 1-D FFTs), has its
//! zero-frequency bin moved to the grid center, is compressed with
//! `ln(1 + m)`, min-max normalized to `[0, 1]`, and bilinearly resized to the
//! encoder resolution.

use std::path::Path;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{read_labels, write_labels, ImageLabel, LABELS_FILE};
use crate::raster::Raster;

/// A single real-valued channel, row-major `height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::argument("plane dimensions must be at least 1x1"));
        }
        if data.len() != width * height {
            return Err(Error::Integrity(format!(
                "plane {width}x{height} expects {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Raw 2-D DFT of a real plane, unshifted, row-major.
pub fn dft2(plane: &Plane) -> Vec<Complex<f64>> {
    let (w, h) = (plane.width, plane.height);
    let mut buf: Vec<Complex<f64>> = plane.data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(w);
    row_fft.process(&mut buf);
    let col_fft = planner.plan_fft_forward(h);
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col_fft.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
    buf
}

/// `|DFT2(plane)|` with the zero-frequency bin relocated to
/// `(height / 2, width / 2)`.
pub fn dft2_magnitude(plane: &Plane) -> Plane {
    let (w, h) = (plane.width, plane.height);
    let spec = dft2(plane);
    let mut out = vec![0.0; w * h];
    for v in 0..h {
        let sv = (v + h / 2) % h;
        for u in 0..w {
            let su = (u + w / 2) % w;
            out[sv * w + su] = spec[v * w + u].norm();
        }
    }
    Plane {
        width: w,
        height: h,
        data: out,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpectrumParams {
    pub log_scaled: bool,
    pub center_shifted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumImage {
    pub grid: Raster,
    pub source_id: String,
    pub params: SpectrumParams,
}

/// Half-pixel-centered bilinear resampling with edge clamping. Resizing to
/// the same size is the identity.
pub fn resize_bilinear(plane: &Plane, out_w: usize, out_h: usize) -> Plane {
    let (w, h) = (plane.width, plane.height);
    if w == out_w && h == out_h {
        return plane.clone();
    }
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    let mut data = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let top = plane.at(x0, y0) * (1.0 - tx) + plane.at(x1, y0) * tx;
            let bottom = plane.at(x0, y1) * (1.0 - tx) + plane.at(x1, y1) * tx;
            data.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    Plane {
        width: out_w,
        height: out_h,
        data,
    }
}

/// Min-max normalizes in place; a constant plane becomes all zeros.
fn min_max_normalize(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if range > 0.0 {
        for v in values.iter_mut() {
            *v = (*v - lo) / range;
        }
    } else {
        values.fill(0.0);
    }
}

/// Conditioned spectrum of one channel at its native resolution.
pub fn channel_spectrum(plane: &Plane) -> Plane {
    let mut mag = dft2_magnitude(plane);
    for v in &mut mag.data {
        *v = v.ln_1p();
    }
    min_max_normalize(&mut mag.data);
    mag
}

pub fn to_spectrum_image(
    image: &Raster,
    target_resolution: usize,
    source_id: impl Into<String>,
) -> Result<SpectrumImage> {
    if image.is_empty() {
        return Err(Error::argument("cannot take the spectrum of an empty image"));
    }
    if target_resolution == 0 {
        return Err(Error::argument("target resolution must be positive"));
    }
    let channels = image.channels();
    let planes: Vec<Plane> = (0..channels)
        .map(|c| {
            let p = Plane {
                width: image.width(),
                height: image.height(),
                data: image.plane(c),
            };
            let spec = channel_spectrum(&p);
            let mut resized = resize_bilinear(&spec, target_resolution, target_resolution);
            // Bilinear weights are convex, so this only trims rounding noise.
            for v in &mut resized.data {
                *v = v.clamp(0.0, 1.0);
            }
            resized
        })
        .collect();
    let grid = Raster::from_fn(target_resolution, target_resolution, channels, |x, y, c| {
        planes[c].at(x, y) as f32
    });
    Ok(SpectrumImage {
        grid,
        source_id: source_id.into(),
        params: SpectrumParams {
            log_scaled: true,
            center_shifted: true,
        },
    })
}

/// File name used for a spectrum image written by [`spectrum_directory`].
pub fn spectrum_file_name(id: &str) -> String {
    format!("{id}.spec.png")
}

/// Converts every image listed in `<input>/labels.jsonl` to a 16-bit PNG
/// spectrum image in `output`, and writes a matching `labels.jsonl` there so
/// the spectrum directory can be embedded like any image directory.
pub fn spectrum_directory(input: &Path, output: &Path, resolution: usize) -> Result<Vec<ImageLabel>> {
    let labels = read_labels(&input.join(LABELS_FILE))?;
    std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let out_labels = labels
        .par_iter()
        .map(|entry| {
            let image = Raster::load(&input.join(&entry.file))?;
            let spec = to_spectrum_image(&image, resolution, entry.id.clone())?;
            let file = spectrum_file_name(&entry.id);
            spec.grid.save_png16(&output.join(&file))?;
            Ok(ImageLabel {
                id: entry.id.clone(),
                file,
                label: entry.label,
                generator: entry.generator.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_labels(&output.join(LABELS_FILE), &out_labels)?;
    Ok(out_labels)
}
