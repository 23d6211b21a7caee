//! Token-level fusion of pixel and spectrum branch features.
//!
//! A fused vector is the pixel branch's class tokens in block order followed
//! by the spectrum branch's class tokens in block order, with no projection in
//! between. With `B_p` pixel blocks, `B_s` spectrum blocks and token width `D`
//! the fused dimension is `(B_p + B_s) * D`.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{read_jsonl, read_payload, sidecar_path, write_jsonl, write_payload};
use crate::manifest::{Branch, Label, Manifest};

#[derive(Debug, Clone, PartialEq)]
pub struct BranchFeature {
    pub id: String,
    pub branch: Branch,
    /// One class token per selected encoder block, in block order.
    pub tokens: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeature {
    pub id: String,
    pub label: Label,
    pub generator: String,
    pub vector: Vec<f32>,
}

fn token_dim(f: &BranchFeature) -> Result<Option<usize>> {
    let Some(first) = f.tokens.first() else {
        return Ok(None);
    };
    if f.tokens.iter().any(|t| t.len() != first.len()) {
        return Err(Error::Integrity(format!(
            "{} tokens of `{}` have inconsistent dimensions",
            f.branch, f.id
        )));
    }
    Ok(Some(first.len()))
}

/// Concatenates `pixel` tokens then `spectrum` tokens.
pub fn fuse(pixel: &BranchFeature, spectrum: &BranchFeature, label: Label) -> Result<FusedFeature> {
    if pixel.branch != Branch::Pixel {
        return Err(Error::Availability {
            id: pixel.id.clone(),
            branch: Branch::Pixel.to_string(),
        });
    }
    if spectrum.branch != Branch::Spectrum {
        return Err(Error::Availability {
            id: spectrum.id.clone(),
            branch: Branch::Spectrum.to_string(),
        });
    }
    if pixel.id != spectrum.id {
        return Err(Error::Pairing(format!(
            "pixel feature `{}` paired with spectrum feature `{}`",
            pixel.id, spectrum.id
        )));
    }
    if pixel.tokens.is_empty() && spectrum.tokens.is_empty() {
        return Err(Error::Availability {
            id: pixel.id.clone(),
            branch: "pixel+spectrum".into(),
        });
    }
    if let (Some(dp), Some(ds)) = (token_dim(pixel)?, token_dim(spectrum)?) {
        if dp != ds {
            return Err(Error::Integrity(format!(
                "`{}`: pixel token width {dp} differs from spectrum token width {ds}",
                pixel.id
            )));
        }
    }
    let vector = pixel
        .tokens
        .iter()
        .chain(&spectrum.tokens)
        .flat_map(|t| t.iter().copied())
        .collect();
    Ok(FusedFeature {
        id: pixel.id.clone(),
        label,
        generator: String::new(),
        vector,
    })
}

/// A dataset of fused features with a fixed layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub token_dim: usize,
    pub pixel_blocks: usize,
    pub spectrum_blocks: usize,
    pub features: Vec<FusedFeature>,
}

impl FeatureSet {
    pub fn dimension(&self) -> usize {
        (self.pixel_blocks + self.spectrum_blocks) * self.token_dim
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Keeps only the pixel and/or spectrum portion of every vector. This is
    /// the single-branch ablation.
    pub fn select(&self, keep_pixel: bool, keep_spectrum: bool) -> Result<Self> {
        if !keep_pixel && !keep_spectrum {
            return Err(Error::argument("at least one branch must be kept"));
        }
        let split = self.pixel_blocks * self.token_dim;
        let features = self
            .features
            .iter()
            .map(|f| {
                let mut vector = Vec::new();
                if keep_pixel {
                    vector.extend_from_slice(&f.vector[..split]);
                }
                if keep_spectrum {
                    vector.extend_from_slice(&f.vector[split..]);
                }
                FusedFeature {
                    vector,
                    ..f.clone()
                }
            })
            .collect();
        Ok(Self {
            token_dim: self.token_dim,
            pixel_blocks: if keep_pixel { self.pixel_blocks } else { 0 },
            spectrum_blocks: if keep_spectrum { self.spectrum_blocks } else { 0 },
            features,
        })
    }

    pub fn labels(&self) -> Vec<Label> {
        self.features.iter().map(|f| f.label).collect()
    }
}

/// Output of a manifest join.
#[derive(Debug, Clone, PartialEq)]
pub struct Pairing {
    pub features: FeatureSet,
    /// Ids present in some but not all of the joined manifests.
    pub unmatched: usize,
}

/// Inner join of one pixel and one spectrum manifest on id, in pixel order.
pub fn pair_manifests(pixel: &Manifest, spectrum: &Manifest) -> Result<Pairing> {
    join_blocks(&[pixel], &[spectrum])
}

/// Inner join of per-block manifests. Each manifest holds one block's class
/// tokens for one branch; `pixel` and `spectrum` list them in block order.
/// Either list may be empty for single-branch features. Output follows the
/// first manifest's order.
pub fn join_blocks(pixel: &[&Manifest], spectrum: &[&Manifest]) -> Result<Pairing> {
    let all: Vec<(&Manifest, Branch)> = pixel
        .iter()
        .map(|m| (*m, Branch::Pixel))
        .chain(spectrum.iter().map(|m| (*m, Branch::Spectrum)))
        .collect();
    let Some(&(lead, _)) = all.first() else {
        return Err(Error::argument("join needs at least one manifest"));
    };
    let dim = lead.dimension();
    for (m, branch) in &all {
        if m.dimension() != dim {
            return Err(Error::Integrity(format!(
                "{branch} manifest has dimension {}, expected {dim}",
                m.dimension()
            )));
        }
    }
    let indexes: Vec<HashMap<&str, usize>> = all
        .iter()
        .map(|(m, _)| {
            m.records()
                .iter()
                .enumerate()
                .map(|(i, r)| (r.id.as_str(), i))
                .collect()
        })
        .collect();

    let mut union: HashSet<&str> = HashSet::new();
    for (m, _) in &all {
        union.extend(m.records().iter().map(|r| r.id.as_str()));
    }

    let mut features = Vec::new();
    for lead_rec in lead.records() {
        let id = lead_rec.id.as_str();
        let Some(rows) = indexes
            .iter()
            .map(|ix| ix.get(id).copied())
            .collect::<Option<Vec<usize>>>()
        else {
            continue;
        };
        let mut vector = Vec::with_capacity(all.len() * dim);
        for ((m, _), &row) in all.iter().zip(&rows) {
            let rec = &m.records()[row];
            if rec.label != lead_rec.label {
                return Err(Error::Integrity(format!(
                    "id `{id}` is labeled {} in one manifest and {} in another",
                    lead_rec.label, rec.label
                )));
            }
            vector.extend_from_slice(&rec.vector);
        }
        features.push(FusedFeature {
            id: id.to_owned(),
            label: lead_rec.label,
            generator: lead_rec.generator.clone(),
            vector,
        });
    }
    if features.is_empty() {
        return Err(Error::Domain("manifests share no ids".into()));
    }
    let unmatched = union.len() - features.len();
    Ok(Pairing {
        features: FeatureSet {
            token_dim: dim,
            pixel_blocks: pixel.len(),
            spectrum_blocks: spectrum.len(),
            features,
        },
        unmatched,
    })
}

#[derive(Debug, Serialize)]
struct FeatureHeader {
    dimension: usize,
    count: usize,
    dtype: &'static str,
    kind: &'static str,
    token_dim: usize,
    pixel_blocks: usize,
    spectrum_blocks: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureMeta {
    id: String,
    label: Label,
    #[serde(default)]
    generator: String,
}

/// Writes a fused feature file: same payload layout as a manifest (JSON
/// header line plus little-endian f32 rows, `kind: "fused"`) with a
/// `.meta.jsonl` sidecar of `id`, `label`, `generator`. Vectors are stored as
/// is, without normalization.
pub fn write_features(set: &FeatureSet, path: &Path) -> Result<()> {
    let header = FeatureHeader {
        dimension: set.dimension(),
        count: set.len(),
        dtype: "f32",
        kind: "fused",
        token_dim: set.token_dim,
        pixel_blocks: set.pixel_blocks,
        spectrum_blocks: set.spectrum_blocks,
    };
    write_payload(path, &header, set.features.iter().map(|f| f.vector.as_slice()))?;
    write_jsonl(
        &sidecar_path(path),
        set.features.iter().map(|f| FeatureMeta {
            id: f.id.clone(),
            label: f.label,
            generator: f.generator.clone(),
        }),
    )
}

pub fn read_features(path: &Path) -> Result<FeatureSet> {
    let (header, values) = read_payload(path)?;
    let field = |name: &str| -> Result<usize> {
        header
            .fields
            .get(name)
            .and_then(|v| v.as_u64())
            .map(|v| v as usize)
            .ok_or_else(|| Error::format(name, "missing or not a nonnegative integer"))
    };
    match header.fields.get("kind").and_then(|v| v.as_str()) {
        Some("fused") => {}
        _ => return Err(Error::format("kind", "expected \"fused\"")),
    }
    let token_dim = field("token_dim")?;
    let pixel_blocks = field("pixel_blocks")?;
    let spectrum_blocks = field("spectrum_blocks")?;
    if (pixel_blocks + spectrum_blocks) * token_dim != header.dimension {
        return Err(Error::Integrity(format!(
            "layout ({pixel_blocks} + {spectrum_blocks}) x {token_dim} does not match dimension {}",
            header.dimension
        )));
    }
    let meta: Vec<FeatureMeta> = read_jsonl(&sidecar_path(path))?;
    if meta.len() != header.count {
        return Err(Error::Integrity(format!(
            "header declares {} features, sidecar has {}",
            header.count,
            meta.len()
        )));
    }
    let features = meta
        .into_iter()
        .zip(values.chunks_exact(header.dimension))
        .map(|(m, row)| FusedFeature {
            id: m.id,
            label: m.label,
            generator: m.generator,
            vector: row.to_vec(),
        })
        .collect();
    Ok(FeatureSet {
        token_dim,
        pixel_blocks,
        spectrum_blocks,
        features,
    })
}
