//! Declarative multi-stage runs and dataset combination.
//!
//! A run config is a TOML file:
//!
//! ```toml
//! seed = 7
//! run_dir = "runs/toy"
//!
//! [inputs]
//! pixel = "data/pixel.emb"
//!
//! [[stages]]
//! name = "curated"
//! kind = "dedup"
//! input = "@pixel"
//! [stages.config]
//! threshold = 0.9
//! ```
//!
//! Every stage input is an `@name` reference to a declared input or to an
//! earlier stage's primary output. Relative paths resolve against the config
//! file's directory. Each stage writes into `<run_dir>/<stage name>/`, and
//! `<run_dir>/summary.json` records per-stage input hashes and outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curator::{curate, seeded_subset, CurationConfig};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, evaluate_by_group, write_roc_csv, ScoreSet, DEFAULT_ACC_THRESHOLD};
use crate::fusion::{join_blocks, read_features, write_features};
use crate::head::{load_checkpoint, save_checkpoint, score_features, train, write_training_log, TrainConfig};
use crate::manifest::{embed_directory, read_manifest, write_manifest, Branch, Label, Manifest};
use crate::perturb::{perturb_directory, Phase, PerturbSpec};
use crate::spectrum::spectrum_directory;
use crate::synth::{write_corpus, CorpusSpec};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Default seed for every stage that does not set its own.
    #[serde(default)]
    pub seed: u64,
    pub run_dir: PathBuf,
    #[serde(default)]
    pub inputs: BTreeMap<String, PathBuf>,
    pub stages: Vec<StageConfig>,
    /// Directory relative paths resolve against; set by [`PipelineConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub name: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub op: StageOp,
}

fn default_dim() -> usize {
    64
}

fn default_resolution() -> usize {
    64
}

fn default_acc_threshold() -> f64 {
    DEFAULT_ACC_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StageOp {
    /// Writes a synthetic image folder.
    Synth {
        #[serde(default)]
        config: CorpusSpec,
    },
    Spectrum {
        input: String,
        #[serde(default = "default_resolution")]
        resolution: usize,
    },
    EmbedToy {
        input: String,
        branch: Branch,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Dedup {
        input: String,
        #[serde(default)]
        config: CurationConfig,
    },
    Fuse {
        pixel: Vec<String>,
        spectrum: Vec<String>,
    },
    Train {
        features: String,
        #[serde(default)]
        config: TrainConfig,
    },
    Eval {
        model: String,
        features: String,
        #[serde(default = "default_acc_threshold")]
        threshold: f64,
    },
    Perturb {
        input: String,
        phase: Phase,
        #[serde(default)]
        config: PerturbSpec,
    },
    Combine {
        inputs: Vec<String>,
        #[serde(default)]
        cap: Option<usize>,
    },
}

impl StageOp {
    pub fn kind(&self) -> &'static str {
        match self {
            StageOp::Synth { .. } => "synth",
            StageOp::Spectrum { .. } => "spectrum",
            StageOp::EmbedToy { .. } => "embed-toy",
            StageOp::Dedup { .. } => "dedup",
            StageOp::Fuse { .. } => "fuse",
            StageOp::Train { .. } => "train",
            StageOp::Eval { .. } => "eval",
            StageOp::Perturb { .. } => "perturb",
            StageOp::Combine { .. } => "combine",
        }
    }

    /// Every `@name` reference, in field order.
    pub fn references(&self) -> Vec<&str> {
        match self {
            StageOp::Synth { .. } => vec![],
            StageOp::Spectrum { input, .. }
            | StageOp::EmbedToy { input, .. }
            | StageOp::Dedup { input, .. }
            | StageOp::Perturb { input, .. } => vec![input],
            StageOp::Fuse { pixel, spectrum } => {
                pixel.iter().chain(spectrum).map(String::as_str).collect()
            }
            StageOp::Train { features, .. } => vec![features],
            StageOp::Eval { model, features, .. } => vec![model, features],
            StageOp::Combine { inputs, .. } => inputs.iter().map(String::as_str).collect(),
        }
    }

    /// File or directory name of the primary output inside the stage directory.
    fn primary_output(&self) -> &'static str {
        match self {
            StageOp::Synth { .. } | StageOp::Spectrum { .. } | StageOp::Perturb { .. } => "images",
            StageOp::EmbedToy { .. } | StageOp::Dedup { .. } | StageOp::Combine { .. } => {
                "manifest.emb"
            }
            StageOp::Fuse { .. } => "features.fused",
            StageOp::Train { .. } => "head.ckpt",
            StageOp::Eval { .. } => "report.json",
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text)
            .map_err(|e| Error::Validation(format!("config does not parse: {e}")))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.resolve(&self.run_dir)
    }

    fn stage_seed(&self, stage: &StageConfig) -> u64 {
        stage.seed.unwrap_or(self.seed)
    }

    /// Checks names, references, declared inputs and stage parameters without
    /// touching the filesystem beyond existence checks.
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Validation("no stages declared".into()));
        }
        for (name, path) in &self.inputs {
            let p = self.resolve(path);
            if !p.exists() {
                return Err(Error::Validation(format!(
                    "declared input `{name}` does not exist: {}",
                    p.display()
                )));
            }
        }
        let mut defined: BTreeSet<&str> = self.inputs.keys().map(String::as_str).collect();
        for stage in &self.stages {
            if stage.name.is_empty()
                || stage.name == SUMMARY_FILE
                || stage.name.contains(['/', '\\'])
                || stage.name.starts_with('.')
            {
                return Err(Error::Validation(format!("invalid stage name `{}`", stage.name)));
            }
            if defined.contains(stage.name.as_str()) {
                return Err(Error::Validation(format!(
                    "stage name `{}` is already defined",
                    stage.name
                )));
            }
            for r in stage.op.references() {
                let Some(target) = r.strip_prefix('@') else {
                    return Err(Error::Validation(format!(
                        "stage `{}` uses undeclared path `{r}`; declare it under [inputs] and refer to it as `@name`",
                        stage.name
                    )));
                };
                if !defined.contains(target) {
                    let later = self.stages.iter().any(|s| s.name == target);
                    return Err(Error::Validation(if later {
                        format!(
                            "stage `{}` references `{target}`, which runs after it",
                            stage.name
                        )
                    } else {
                        format!("stage `{}` references unknown artifact `{target}`", stage.name)
                    }));
                }
            }
            self.validate_params(stage)
                .map_err(|e| Error::Validation(format!("stage `{}`: {e}", stage.name)))?;
            defined.insert(&stage.name);
        }
        Ok(())
    }

    fn validate_params(&self, stage: &StageConfig) -> Result<()> {
        match &stage.op {
            StageOp::Dedup { config, .. } => config.validate(),
            StageOp::Train { config, .. } => config.validate(),
            StageOp::Perturb { config, .. } => config.validate(),
            StageOp::Fuse { pixel, spectrum } if pixel.is_empty() && spectrum.is_empty() => {
                Err(Error::argument("fuse needs at least one pixel or spectrum input"))
            }
            StageOp::Combine { inputs, .. } if inputs.is_empty() => {
                Err(Error::argument("combine needs at least one input"))
            }
            StageOp::EmbedToy { dim, .. } if *dim < 2 => {
                Err(Error::argument("embedding dimension must be >= 2"))
            }
            StageOp::Spectrum { resolution, .. } if *resolution == 0 => {
                Err(Error::argument("resolution must be positive"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub reference: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub name: String,
    pub kind: String,
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
    /// Paths relative to the run directory, sorted.
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub stages: Vec<StageSummary>,
    /// Wall-clock information; the only part of a run that varies between
    /// identical reruns.
    pub metadata: RunMetadata,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn walk_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            walk_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// Files under `dir` as sorted relative paths.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    walk_files(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

fn sibling_files(path: &Path) -> Vec<PathBuf> {
    let sidecar = crate::manifest::sidecar_path(path);
    if sidecar.exists() {
        vec![path.to_path_buf(), sidecar]
    } else {
        vec![path.to_path_buf()]
    }
}

/// SHA-256 over a file (and its sidecar, if any) or over every file in a
/// directory, each prefixed by its relative path.
pub fn content_hash(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        for rel in list_files(path)? {
            let full = path.join(&rel);
            hasher.update(rel.to_string_lossy().as_bytes());
            hasher.update([0u8]);
            hasher.update(std::fs::read(&full).map_err(|e| Error::io(&full, e))?);
        }
    } else {
        for file in sibling_files(path) {
            let name = file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            hasher.update(std::fs::read(&file).map_err(|e| Error::io(&file, e))?);
        }
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Validates, then executes every stage in order. Existing stage directories
/// are replaced.
pub fn run(cfg: &PipelineConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let started = unix_now();
    let run_dir = cfg.run_dir();
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;

    let mut artifacts: BTreeMap<String, PathBuf> = cfg
        .inputs
        .iter()
        .map(|(k, v)| (k.clone(), cfg.resolve(v)))
        .collect();
    let mut stages = Vec::with_capacity(cfg.stages.len());
    for stage in &cfg.stages {
        let summary = run_stage(cfg, stage, &run_dir, &artifacts).map_err(|e| Error::Stage {
            stage: stage.name.clone(),
            source: Box::new(e),
        })?;
        artifacts.insert(
            stage.name.clone(),
            run_dir.join(&stage.name).join(stage.op.primary_output()),
        );
        stages.push(summary);
    }
    let summary = RunSummary {
        stages,
        metadata: RunMetadata {
            started_unix: started,
            finished_unix: unix_now(),
        },
    };
    let path = run_dir.join(SUMMARY_FILE);
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

fn run_stage(
    cfg: &PipelineConfig,
    stage: &StageConfig,
    run_dir: &Path,
    artifacts: &BTreeMap<String, PathBuf>,
) -> Result<StageSummary> {
    let seed = cfg.stage_seed(stage);
    let lookup = |r: &str| -> PathBuf { artifacts[r.trim_start_matches('@')].clone() };
    let mut inputs = Vec::new();
    for r in stage.op.references() {
        inputs.push(InputDigest {
            reference: r.to_owned(),
            sha256: content_hash(&lookup(r))?,
        });
    }

    let out_dir = run_dir.join(&stage.name);
    if out_dir.exists() {
        std::fs::remove_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    }
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let primary = out_dir.join(stage.op.primary_output());

    match &stage.op {
        StageOp::Synth { config } => {
            let spec = CorpusSpec {
                seed,
                ..config.clone()
            };
            write_corpus(&primary, &spec)?;
        }
        StageOp::Spectrum { input, resolution } => {
            spectrum_directory(&lookup(input), &primary, *resolution)?;
        }
        StageOp::EmbedToy { input, branch, dim } => {
            let m = embed_directory(&lookup(input), *branch, *dim, seed)?;
            write_manifest(&m, &primary)?;
        }
        StageOp::Dedup { input, config } => {
            let m = read_manifest(&lookup(input))?;
            let (curated, report) = curate(&m, &CurationConfig { seed, ..*config })?;
            write_manifest(&curated, &primary)?;
            report.write_jsonl(&out_dir.join("report.jsonl"))?;
        }
        StageOp::Fuse { pixel, spectrum } => {
            let load = |refs: &[String]| -> Result<Vec<Manifest>> {
                refs.iter().map(|r| read_manifest(&lookup(r))).collect()
            };
            let (p, s) = (load(pixel)?, load(spectrum)?);
            let pairing = join_blocks(&p.iter().collect::<Vec<_>>(), &s.iter().collect::<Vec<_>>())?;
            write_features(&pairing.features, &primary)?;
            write_json(
                &out_dir.join("pairing.json"),
                &serde_json::json!({
                    "paired": pairing.features.len(),
                    "unmatched": pairing.unmatched,
                }),
            )?;
        }
        StageOp::Train { features, config } => {
            let set = read_features(&lookup(features))?;
            let tc = TrainConfig { seed, ..*config };
            let (params, log) = train(&set.features, &tc)?;
            save_checkpoint(&primary, &params, &tc)?;
            write_training_log(&out_dir.join("train_log.jsonl"), &log)?;
        }
        StageOp::Eval {
            model,
            features,
            threshold,
        } => {
            let (params, tc) = load_checkpoint(&lookup(model))?;
            let set = read_features(&lookup(features))?;
            let scores = score_features(&params, &set.features, &tc)?;
            let labels: Vec<Label> = set.labels();
            let groups: Vec<String> = set.features.iter().map(|f| f.generator.clone()).collect();
            let s = ScoreSet::new(scores, labels)?;
            let report = evaluate(&s, *threshold)?;
            let by_group = evaluate_by_group(&s, &groups, *threshold)?;
            write_json(
                &primary,
                &serde_json::json!({ "overall": report, "by_generator": by_group }),
            )?;
            write_roc_csv(&out_dir.join("roc.csv"), &report.roc)?;
        }
        StageOp::Perturb {
            input,
            phase,
            config,
        } => {
            let spec = PerturbSpec {
                seed,
                ..config.clone()
            };
            perturb_directory(&lookup(input), &primary, &spec, *phase, &out_dir.join("perturb_log.jsonl"))?;
        }
        StageOp::Combine { inputs, cap } => {
            let ms = inputs
                .iter()
                .map(|r| read_manifest(&lookup(r)))
                .collect::<Result<Vec<_>>>()?;
            let combined = combine_datasets(&ms, *cap, seed)?;
            write_manifest(&combined, &primary)?;
        }
    }

    let outputs = list_files(&out_dir)?
        .into_iter()
        .map(|p| format!("{}/{}", stage.name, p.to_string_lossy().replace('\\', "/")))
        .collect();
    Ok(StageSummary {
        name: stage.name.clone(),
        kind: stage.op.kind().to_owned(),
        seed,
        inputs,
        outputs,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Concatenates manifests in order. With `cap`, each (source, class) group
/// larger than the cap is reduced to exactly `cap` records by seeded
/// sampling; original order is kept. Generator tags pass through unchanged.
pub fn combine_datasets(manifests: &[Manifest], cap: Option<usize>, seed: u64) -> Result<Manifest> {
    let Some(first) = manifests.first() else {
        return Err(Error::argument("combine needs at least one manifest"));
    };
    let dim = first.dimension();
    if let Some((i, m)) = manifests.iter().enumerate().find(|(_, m)| m.dimension() != dim) {
        return Err(Error::Integrity(format!(
            "manifest {i} has dimension {}, manifest 0 has {dim}",
            m.dimension()
        )));
    }
    let mut records = Vec::new();
    let mut notes = Vec::new();
    for (s, m) in manifests.iter().enumerate() {
        notes.push(m.source_note().to_owned());
        let mut keep: Vec<usize> = Vec::with_capacity(m.count());
        for (c, label) in [Label::Real, Label::Fake].into_iter().enumerate() {
            let idx: Vec<usize> = (0..m.count()).filter(|&i| m.records()[i].label == label).collect();
            match cap {
                Some(cap) if idx.len() > cap => {
                    let group_seed = seed ^ ((s as u64) << 1 | c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                    keep.extend(seeded_subset(idx.len(), cap, group_seed).into_iter().map(|k| idx[k]));
                }
                _ => keep.extend(idx),
            }
        }
        keep.sort_unstable();
        records.extend(keep.into_iter().map(|i| m.records()[i].clone()));
    }
    let note = match cap {
        Some(cap) => format!("combined [{}] cap={cap} seed={seed}", notes.join("; ")),
        None => format!("combined [{}]", notes.join("; ")),
    };
    Manifest::from_records(dim, records, note)
}
