//! Embedding manifests: the interchange format between encoders and the
//! numeric pipeline.
//!
//! A manifest is two files:
//!
//! * the payload at `<path>`: one line of JSON
//!   (`{"dimension": D, "count": N, "dtype": "f32", "source_note": "..."}`)
//!   terminated by `\n`, followed by `N * D` little-endian `f32` values, one
//!   fixed-size row per record;
//! * the sidecar at `<path>.meta.jsonl`: `N` lines, one JSON object per record
//!   with `id`, `label` (`"real"`/`"fake"`), `generator`, `branch`
//!   (`"pixel"`/`"spectrum"`) and `source_path`.
//!
//! Vectors are L2-normalized exactly once, when a manifest is built or read.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Ingested vectors whose norm is already this close to 1 are kept as stored,
/// which makes write→read bit-exact.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Side length of the grayscale grid used by [`toy_embed`].
pub const TOY_GRID: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// `0` for real, `1` for fake.
    pub fn as_target(self) -> f64 {
        match self {
            Label::Real => 0.0,
            Label::Fake => 1.0,
        }
    }

    pub fn is_fake(self) -> bool {
        self == Label::Fake
    }

    pub fn from_fake(fake: bool) -> Self {
        if fake {
            Label::Fake
        } else {
            Label::Real
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Real => "real",
            Label::Fake => "fake",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Pixel,
    Spectrum,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Pixel => "pixel",
            Branch::Spectrum => "spectrum",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub label: Label,
    pub generator: String,
    pub branch: Branch,
    pub source_path: String,
    pub vector: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn new(
        id: impl Into<String>,
        label: Label,
        generator: impl Into<String>,
        branch: Branch,
        vector: Vec<f32>,
    ) -> Self {
        Self {
            id: id.into(),
            label,
            generator: generator.into(),
            branch,
            source_path: String::new(),
            vector,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SidecarLine {
    id: String,
    label: Label,
    generator: String,
    branch: Branch,
    #[serde(default)]
    source_path: String,
}

/// An ordered, validated collection of unit-norm embeddings.
///
/// Record order is the canonical processing order for every downstream
/// deterministic operation.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    dimension: usize,
    records: Vec<EmbeddingRecord>,
    source_note: String,
}

impl Manifest {
    /// Validates records and normalizes their vectors.
    pub fn from_records(
        dimension: usize,
        mut records: Vec<EmbeddingRecord>,
        source_note: impl Into<String>,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::format("dimension", "must be a positive integer"));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for rec in &mut records {
            if rec.vector.len() != dimension {
                return Err(Error::Integrity(format!(
                    "record `{}` has {} values, manifest dimension is {dimension}",
                    rec.id,
                    rec.vector.len()
                )));
            }
            if !seen.insert((rec.branch, rec.id.as_str())) {
                return Err(Error::Integrity(format!(
                    "duplicate id `{}` in {} branch",
                    rec.id, rec.branch
                )));
            }
            normalize_in_place(&rec.id, &mut rec.vector)?;
        }
        Ok(Self {
            dimension,
            records,
            source_note: source_note.into(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn count(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn source_note(&self) -> &str {
        &self.source_note
    }

    pub fn into_records(self) -> Vec<EmbeddingRecord> {
        self.records
    }

    /// Row-major copy of all vectors (`count * dimension`).
    pub fn matrix(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.count() * self.dimension);
        for r in &self.records {
            out.extend_from_slice(&r.vector);
        }
        out
    }

    /// Keeps the records whose index is in `keep` (which must be ascending),
    /// preserving order.
    pub fn subset(&self, keep: &[usize], source_note: impl Into<String>) -> Self {
        debug_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        Self {
            dimension: self.dimension,
            records: keep.iter().map(|&i| self.records[i].clone()).collect(),
            source_note: source_note.into(),
        }
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let fake = self.records.iter().filter(|r| r.label.is_fake()).count();
        (self.records.len() - fake, fake)
    }
}

/// L2-normalizes in f64 and rounds back to f32. Vectors already within
/// [`NORM_TOLERANCE`] of unit length are left untouched.
fn normalize_in_place(id: &str, v: &mut [f32]) -> Result<()> {
    let norm = v
        .iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt();
    if !norm.is_finite() {
        return Err(Error::Data {
            id: id.to_owned(),
            message: "vector contains non-finite values".into(),
        });
    }
    if norm == 0.0 {
        return Err(Error::Data {
            id: id.to_owned(),
            message: "zero-norm vector cannot be normalized".into(),
        });
    }
    if (norm - 1.0).abs() > NORM_TOLERANCE {
        for x in v.iter_mut() {
            *x = (f64::from(*x) / norm) as f32;
        }
    }
    Ok(())
}

/// Location of the metadata sidecar for a manifest payload path.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.jsonl");
    PathBuf::from(s)
}

#[derive(Debug, Serialize)]
struct Header<'a> {
    dimension: usize,
    count: usize,
    dtype: &'static str,
    source_note: &'a str,
}

/// Parsed payload header. Shared with the fused-feature file format.
pub(crate) struct RawHeader {
    pub dimension: usize,
    pub count: usize,
    pub fields: serde_json::Map<String, serde_json::Value>,
}

pub(crate) fn parse_header(line: &str) -> Result<RawHeader> {
    let value: serde_json::Value = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::format("header", format!("not a JSON object: {e}")))?;
    let fields = match value {
        serde_json::Value::Object(m) => m,
        _ => return Err(Error::format("header", "not a JSON object")),
    };
    let positive = |name: &str| -> Result<usize> {
        let v = fields
            .get(name)
            .ok_or_else(|| Error::format(name, "missing"))?;
        v.as_u64()
            .map(|n| n as usize)
            .ok_or_else(|| Error::format(name, format!("expected a nonnegative integer, got {v}")))
    };
    let dimension = positive("dimension")?;
    if dimension == 0 {
        return Err(Error::format("dimension", "must be positive"));
    }
    let count = positive("count")?;
    match fields.get("dtype") {
        Some(serde_json::Value::String(s)) if s == "f32" => {}
        Some(other) => return Err(Error::format("dtype", format!("expected \"f32\", got {other}"))),
        None => return Err(Error::format("dtype", "missing")),
    }
    Ok(RawHeader {
        dimension,
        count,
        fields,
    })
}

/// Reads the header line and the `count * dimension` f32 payload.
pub(crate) fn read_payload(path: &Path) -> Result<(RawHeader, Vec<f32>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    reader
        .read_line(&mut line)
        .map_err(|e| Error::io(path, e))?;
    if !line.ends_with('\n') {
        return Err(Error::format("header", "missing newline terminator"));
    }
    let header = parse_header(&line)?;
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let expected = header.count * header.dimension * 4;
    if bytes.len() != expected {
        return Err(Error::Integrity(format!(
            "header declares {} rows of dimension {} ({expected} bytes), payload has {} bytes",
            header.count,
            header.dimension,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((header, values))
}

pub(crate) fn write_payload<'a>(
    path: &Path,
    header: &impl Serialize,
    rows: impl Iterator<Item = &'a [f32]>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = serde_json::to_string(header)?;
    line.push('\n');
    w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    for row in rows {
        for v in row {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            Error::format(
                format!("{}:{}", path.display(), lineno + 1),
                e.to_string(),
            )
        })?;
        out.push(item);
    }
    Ok(out)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let (header, values) = read_payload(path)?;
    let source_note = match header.fields.get("source_note") {
        None => String::new(),
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(other) => {
            return Err(Error::format("source_note", format!("expected a string, got {other}")))
        }
    };
    let meta: Vec<SidecarLine> = read_jsonl(&sidecar_path(path))?;
    if meta.len() != header.count {
        return Err(Error::Integrity(format!(
            "header declares {} records, sidecar has {}",
            header.count,
            meta.len()
        )));
    }
    let records = meta
        .into_iter()
        .zip(values.chunks_exact(header.dimension))
        .map(|(m, row)| EmbeddingRecord {
            id: m.id,
            label: m.label,
            generator: m.generator,
            branch: m.branch,
            source_path: m.source_path,
            vector: row.to_vec(),
        })
        .collect();
    Manifest::from_records(header.dimension, records, source_note)
}

pub fn write_manifest(m: &Manifest, path: &Path) -> Result<()> {
    let header = Header {
        dimension: m.dimension,
        count: m.count(),
        dtype: "f32",
        source_note: &m.source_note,
    };
    write_payload(path, &header, m.records.iter().map(|r| r.vector.as_slice()))?;
    write_jsonl(
        &sidecar_path(path),
        m.records.iter().map(|r| SidecarLine {
            id: r.id.clone(),
            label: r.label,
            generator: r.generator.clone(),
            branch: r.branch,
            source_path: r.source_path.clone(),
        }),
    )
}

/// Area-averages the channel mean of `image` onto a `TOY_GRID × TOY_GRID`
/// grid. Cell `(r, c)` covers source rows `[⌊rH/16⌋, max(⌊(r+1)H/16⌋, ⌊rH/16⌋+1))`
/// and the analogous columns, so images smaller than the grid replicate.
pub fn toy_grid(image: &Raster) -> Vec<f64> {
    let (w, h) = (image.width(), image.height());
    let gray = image.grayscale();
    let span = |i: usize, n: usize| {
        let lo = i * n / TOY_GRID;
        let hi = ((i + 1) * n / TOY_GRID).max(lo + 1);
        lo..hi
    };
    let mut out = Vec::with_capacity(TOY_GRID * TOY_GRID);
    for r in 0..TOY_GRID {
        let rows = span(r, h);
        for c in 0..TOY_GRID {
            let cols = span(c, w);
            let mut sum = 0.0;
            for y in rows.clone() {
                for x in cols.clone() {
                    sum += gray[y * w + x];
                }
            }
            out.push(sum / (rows.len() * cols.len()) as f64);
        }
    }
    out
}

/// Deterministic stand-in encoder.
///
/// The 16×16 grid from [`toy_grid`] plus a constant bias input (257 values)
/// is projected through a `dim × 257` standard-normal matrix drawn row-major
/// from `ChaCha8Rng::seed_from_u64(seed)`, then L2-normalized.
pub fn toy_embed(image: &Raster, dim: usize, seed: u64) -> Result<Vec<f32>> {
    if image.is_empty() {
        return Err(Error::argument("toy_embed needs a nonempty image"));
    }
    if dim < 2 {
        return Err(Error::argument(format!("embedding dimension must be >= 2, got {dim}")));
    }
    let mut input = toy_grid(image);
    input.push(1.0);
    ToyProjection::new(dim, seed).embed_features(&input)
}

/// The seeded projection matrix behind [`toy_embed`], reusable across a batch.
#[derive(Debug, Clone)]
pub struct ToyProjection {
    dim: usize,
    weights: Vec<f64>,
}

impl ToyProjection {
    pub const INPUTS: usize = TOY_GRID * TOY_GRID + 1;

    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..dim * Self::INPUTS)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self { dim, weights }
    }

    pub fn embed(&self, image: &Raster) -> Result<Vec<f32>> {
        if image.is_empty() {
            return Err(Error::argument("toy_embed needs a nonempty image"));
        }
        let mut input = toy_grid(image);
        input.push(1.0);
        self.embed_features(&input)
    }

    fn embed_features(&self, input: &[f64]) -> Result<Vec<f32>> {
        let projected: Vec<f64> = self
            .weights
            .chunks_exact(Self::INPUTS)
            .map(|row| row.iter().zip(input).map(|(w, x)| w * x).sum())
            .collect();
        let norm = projected.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Data {
                id: "<toy_embed>".into(),
                message: "projection produced a degenerate vector".into(),
            });
        }
        debug_assert_eq!(projected.len(), self.dim);
        Ok(projected.iter().map(|v| (v / norm) as f32).collect())
    }
}

/// One entry of an image directory's `labels.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageLabel {
    pub id: String,
    /// File name relative to the labels file's directory.
    pub file: String,
    pub label: Label,
    #[serde(default)]
    pub generator: String,
}

pub const LABELS_FILE: &str = "labels.jsonl";

pub fn read_labels(path: &Path) -> Result<Vec<ImageLabel>> {
    read_jsonl(path)
}

pub fn write_labels(path: &Path, labels: &[ImageLabel]) -> Result<()> {
    write_jsonl(path, labels)
}

/// Embeds every image listed in `<dir>/labels.jsonl` with [`toy_embed`], in
/// label-file order.
pub fn embed_directory(dir: &Path, branch: Branch, dim: usize, seed: u64) -> Result<Manifest> {
    use rayon::prelude::*;

    if dim < 2 {
        return Err(Error::argument(format!("embedding dimension must be >= 2, got {dim}")));
    }
    let labels = read_labels(&dir.join(LABELS_FILE))?;
    let projection = ToyProjection::new(dim, seed);
    let records = labels
        .par_iter()
        .map(|entry| {
            let path = dir.join(&entry.file);
            let image = Raster::load(&path)?;
            let vector = projection.embed(&image).map_err(|e| match e {
                Error::Data { message, .. } => Error::Data {
                    id: entry.id.clone(),
                    message,
                },
                other => other,
            })?;
            Ok(EmbeddingRecord {
                id: entry.id.clone(),
                label: entry.label,
                generator: entry.generator.clone(),
                branch,
                source_path: entry.file.clone(),
                vector,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Manifest::from_records(dim, records, format!("toy_embed dim={dim} seed={seed}"))
}
