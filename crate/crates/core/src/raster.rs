//! Floating-point pixel grids shared by the spectrum, perturbation and toy
//! embedding stages.
//!
//! Samples are stored row-major with interleaved channels, nominally in
//! `[0, 1]`.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::argument("raster needs at least one channel"));
        }
        if data.len() != width * height * channels {
            return Err(Error::Integrity(format!(
                "raster {width}x{height}x{channels} expects {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Builds a raster by evaluating `f(x, y, c)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Extracts one channel as a row-major `height × width` plane in f64.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .map(|&v| f64::from(v))
            .collect()
    }

    /// Channel mean per pixel, row-major.
    pub fn grayscale(&self) -> Vec<f64> {
        self.data
            .chunks_exact(self.channels)
            .map(|px| px.iter().map(|&v| f64::from(v)).sum::<f64>() / self.channels as f64)
            .collect()
    }

    pub fn from_dynamic(img: &DynamicImage) -> Self {
        match img {
            DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) => {
                let g = img.to_luma32f();
                let (w, h) = g.dimensions();
                Self {
                    width: w as usize,
                    height: h as usize,
                    channels: 1,
                    data: g.into_raw(),
                }
            }
            _ => {
                let rgb = img.to_rgb32f();
                let (w, h) = rgb.dimensions();
                Self {
                    width: w as usize,
                    height: h as usize,
                    channels: 3,
                    data: rgb.into_raw(),
                }
            }
        }
    }

    /// Quantizes to 8 bits per sample (RGB or luma, other channel counts are
    /// collapsed to luma).
    pub fn to_dynamic8(&self) -> DynamicImage {
        let (w, h) = (self.width as u32, self.height as u32);
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        if self.channels == 3 {
            let raw: Vec<u8> = self.data.iter().map(|&v| q(v)).collect();
            DynamicImage::ImageRgb8(ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw).expect("size"))
        } else {
            let raw: Vec<u8> = self.grayscale().iter().map(|&v| q(v as f32)).collect();
            DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).expect("size"))
        }
    }

    /// 16-bit quantization, used for lossless spectrum output.
    pub fn to_dynamic16(&self) -> DynamicImage {
        let (w, h) = (self.width as u32, self.height as u32);
        let q = |v: f32| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        if self.channels == 3 {
            let raw: Vec<u16> = self.data.iter().map(|&v| q(v)).collect();
            DynamicImage::ImageRgb16(ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw).expect("size"))
        } else {
            let raw: Vec<u16> = self.grayscale().iter().map(|&v| q(v as f32)).collect();
            DynamicImage::ImageLuma16(
                ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).expect("size"),
            )
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        Ok(Self::from_dynamic(&img))
    }

    /// Writes an 8-bit PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_dynamic8()
            .save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// Writes a 16-bit PNG.
    pub fn save_png16(&self, path: &Path) -> Result<()> {
        self.to_dynamic16()
            .save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// Rounds every sample to the nearest 8-bit level, matching what a PNG
    /// round trip would produce.
    pub fn quantized8(&self) -> Self {
        let data = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
            .collect();
        Self { data, ..*self }
    }
}

/// Width/height/channel triple, handy for shape assertions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RasterShape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl Raster {
    pub fn shape(&self) -> RasterShape {
        RasterShape {
            width: self.width,
            height: self.height,
            channels: self.channels,
        }
    }
}
