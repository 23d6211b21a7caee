//! Exact pairwise cosine similarity over unit-norm embeddings.
//!
//! Dot products accumulate in f64 with a fixed four-lane reduction order, so
//! every value is bitwise independent of tiling and of the parallel schedule.
//! Results are clamped into `[-1, 1]`.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_TILE: usize = 64;

/// Dot product of two equal-length slices accumulated in f64.
#[inline]
pub(crate) fn dot_f64(u: &[f32], v: &[f32]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let mut acc = [0.0f64; 4];
    let chunks = u.len() / 4;
    for k in 0..chunks {
        let b = 4 * k;
        for lane in 0..4 {
            acc[lane] += f64::from(u[b + lane]) * f64::from(v[b + lane]);
        }
    }
    let mut tail = 0.0;
    for k in 4 * chunks..u.len() {
        tail += f64::from(u[k]) * f64::from(v[k]);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Cosine similarity of two unit vectors, `dot(u, v)` clamped into `[-1, 1]`.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::argument(format!(
            "dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    Ok(clamp_unit(dot_f64(u, v)))
}

#[inline]
pub(crate) fn cosine_unchecked(u: &[f32], v: &[f32]) -> f64 {
    clamp_unit(dot_f64(u, v))
}

/// Borrowed row-major matrix of `len` vectors of dimension `dim`.
#[derive(Debug, Clone, Copy)]
pub struct VectorSet<'a> {
    dim: usize,
    data: &'a [f32],
}

impl<'a> VectorSet<'a> {
    pub fn new(dim: usize, data: &'a [f32]) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::argument(format!(
                "{} values do not form rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// A materialized rectangular tile `rows × cols` of the similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBlock {
    rows: Range<usize>,
    cols: Range<usize>,
    values: Vec<f64>,
}

impl SimilarityBlock {
    pub fn rows(&self) -> Range<usize> {
        self.rows.clone()
    }

    pub fn cols(&self) -> Range<usize> {
        self.cols.clone()
    }

    /// Value at absolute indices `(i, j)`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(self.rows.contains(&i) && self.cols.contains(&j));
        self.values[(i - self.rows.start) * self.cols.len() + (j - self.cols.start)]
    }

    /// Row of the block at absolute row index `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.cols.len();
        let r = i - self.rows.start;
        &self.values[r * w..(r + 1) * w]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn check_range(name: &str, r: &Range<usize>, len: usize) -> Result<()> {
    if r.start > r.end || r.end > len {
        return Err(Error::argument(format!(
            "{name} range {}..{} out of bounds for {len} vectors",
            r.start, r.end
        )));
    }
    Ok(())
}

/// Similarities between `set[rows]` and `set[cols]`.
pub fn pairwise_block(
    set: &VectorSet<'_>,
    rows: Range<usize>,
    cols: Range<usize>,
    tile: usize,
) -> Result<SimilarityBlock> {
    cross_block(set, rows, set, cols, tile)
}

/// Similarities between `a[rows]` and `b[cols]`, computed tile by tile with
/// row tiles distributed across threads.
pub fn cross_block(
    a: &VectorSet<'_>,
    rows: Range<usize>,
    b: &VectorSet<'_>,
    cols: Range<usize>,
    tile: usize,
) -> Result<SimilarityBlock> {
    if a.dim != b.dim {
        return Err(Error::argument(format!(
            "dimension mismatch: {} vs {}",
            a.dim, b.dim
        )));
    }
    check_range("row", &rows, a.len())?;
    check_range("column", &cols, b.len())?;
    let tile = tile.max(1);
    let width = cols.len();
    let mut values = vec![0.0; rows.len() * width];
    if width > 0 {
        values
            .par_chunks_mut(tile * width)
            .enumerate()
            .for_each(|(t, out)| {
                let i0 = rows.start + t * tile;
                let n_rows = out.len() / width;
                for j0 in (cols.start..cols.end).step_by(tile) {
                    let j1 = (j0 + tile).min(cols.end);
                    for di in 0..n_rows {
                        let u = a.row(i0 + di);
                        let line = &mut out[di * width..(di + 1) * width];
                        for j in j0..j1 {
                            line[j - cols.start] = cosine_unchecked(u, b.row(j));
                        }
                    }
                }
            });
    }
    Ok(SimilarityBlock { rows, cols, values })
}
