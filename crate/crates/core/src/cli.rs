//! Command-line surface shared by the `divfuse` binary.
//!
//! Each subcommand maps onto one library operation. Where a subcommand takes
//! a parameter block (`dedup`, `train`, `perturb`), `--config` loads it from a
//! TOML file and individual flags override the loaded values.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use crate::curator::{curate, CurationConfig};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, evaluate_by_group, write_roc_csv, ScoreSet, DEFAULT_ACC_THRESHOLD};
use crate::fusion::{join_blocks, read_features, write_features};
use crate::head::{load_checkpoint, save_checkpoint, score_features, train, write_training_log, TrainConfig};
use crate::manifest::{embed_directory, read_manifest, write_manifest, Branch};
use crate::perturb::{perturb_directory, Phase, PerturbKind, PerturbSpec};
use crate::pipeline::{combine_datasets, run, PipelineConfig, SUMMARY_FILE};
use crate::spectrum::spectrum_directory;
use crate::synth::{write_corpus, CorpusSpec};

/// Environment variable holding the default worker thread count.
pub const THREADS_ENV: &str = "DIVFUSE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "divfuse", version, about = "Diversity-aware curation and dual-branch AIGI detection")]
pub struct Cli {
    /// Worker threads for parallel stages (0 = all cores).
    #[arg(long, global = true, env = THREADS_ENV, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Curate an embedding manifest (global dedup, class refinement, balancing).
    Dedup(DedupArgs),
    /// Convert an image folder into centered log-magnitude spectrum images.
    Spectrum(SpectrumArgs),
    /// Embed an image folder with the deterministic toy encoder.
    EmbedToy(EmbedArgs),
    /// Pair pixel and spectrum manifests into fused feature vectors.
    Fuse(FuseArgs),
    /// Train the detection head on fused features.
    Train(TrainArgs),
    /// Score fused features with a trained head and report metrics.
    Eval(EvalArgs),
    /// Apply the blur/JPEG robustness protocol to an image folder.
    Perturb(PerturbArgs),
    /// Concatenate manifests with optional per-source, per-class caps.
    Combine(CombineArgs),
    /// Execute a declarative multi-stage pipeline.
    Run(RunArgs),
    /// Write a synthetic toy image folder.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    #[arg(long, visible_alias = "pixel")]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Where to write the curation report (JSON lines).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub balance_tolerance: Option<usize>,
    #[arg(long)]
    pub refine_floor: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long, visible_alias = "in")]
    pub input: PathBuf,
    #[arg(long, visible_alias = "out")]
    pub output: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BranchArg {
    Pixel,
    Spectrum,
}

impl From<BranchArg> for Branch {
    fn from(b: BranchArg) -> Self {
        match b {
            BranchArg::Pixel => Branch::Pixel,
            BranchArg::Spectrum => Branch::Spectrum,
        }
    }
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub branch: BranchArg,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Pixel-branch manifests, one per encoder block.
    #[arg(long, num_args = 1..)]
    pub pixel: Vec<PathBuf>,
    /// Spectrum-branch manifests, one per encoder block.
    #[arg(long, num_args = 1..)]
    pub spectrum: Vec<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub output: PathBuf,
    /// Per-epoch loss log (JSON lines).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Report path (JSON); printed to stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub roc: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ACC_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PhaseArg {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Gaussian,
    Jpeg,
    Both,
    None,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long, visible_alias = "in")]
    pub input: PathBuf,
    #[arg(long, visible_alias = "out")]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub phase: PhaseArg,
    /// Application log (JSON lines); defaults to `<output>/perturb_log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CombineArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    /// Maximum records per class per source.
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub config: PathBuf,
    /// Overrides the config's top-level seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's run directory.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 0.0)]
    pub duplicate_fraction: f64,
    #[arg(long, default_value = "img")]
    pub prefix: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn load_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::format(p.display().to_string(), e.to_string()))
        }
    }
}

/// A closed stdout (e.g. piped into `head`) is not an error.
fn print_json(value: &impl serde::Serialize) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

/// Configures the global thread pool. Must run before any parallel work.
pub fn init_threads(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::argument(format!("cannot configure thread pool: {e}")))
}

pub fn execute(cli: Cli) -> Result<()> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Dedup(a) => {
            let mut cfg: CurationConfig = load_toml(a.config.as_deref())?;
            if let Some(t) = a.threshold {
                cfg.threshold = t;
            }
            if let Some(t) = a.balance_tolerance {
                cfg.balance_tolerance = t;
            }
            if let Some(f) = a.refine_floor {
                cfg.refine_floor = f;
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            let m = read_manifest(&a.input)?;
            let (curated, report) = curate(&m, &cfg)?;
            write_manifest(&curated, &a.output)?;
            if let Some(r) = &a.report {
                report.write_jsonl(r)?;
            }
            eprintln!(
                "kept {} of {} (after global pass: {} real / {} fake)",
                report.final_count, report.input_count, report.real_after_global, report.fake_after_global
            );
        }
        Command::Spectrum(a) => {
            let labels = spectrum_directory(&a.input, &a.output, a.resolution)?;
            eprintln!("wrote {} spectrum images", labels.len());
        }
        Command::EmbedToy(a) => {
            let m = embed_directory(&a.input, a.branch.into(), a.dim, a.seed)?;
            write_manifest(&m, &a.output)?;
            eprintln!("embedded {} images at dimension {}", m.count(), m.dimension());
        }
        Command::Fuse(a) => {
            let p = a.pixel.iter().map(|p| read_manifest(p)).collect::<Result<Vec<_>>>()?;
            let s = a.spectrum.iter().map(|p| read_manifest(p)).collect::<Result<Vec<_>>>()?;
            let pairing = join_blocks(&p.iter().collect::<Vec<_>>(), &s.iter().collect::<Vec<_>>())?;
            write_features(&pairing.features, &a.output)?;
            eprintln!(
                "paired {} ids ({} unmatched), dimension {}",
                pairing.features.len(),
                pairing.unmatched,
                pairing.features.dimension()
            );
        }
        Command::Train(a) => {
            let mut cfg: TrainConfig = load_toml(a.config.as_deref())?;
            if let Some(v) = a.epochs {
                cfg.epochs = v;
            }
            if let Some(v) = a.batch_size {
                cfg.batch_size = v;
            }
            if let Some(v) = a.lr {
                cfg.learning_rate = v;
            }
            if let Some(v) = a.lambda {
                cfg.lambda = v;
            }
            if let Some(v) = a.tau {
                cfg.tau = v;
            }
            if let Some(v) = a.dropout {
                cfg.dropout_rate = v;
            }
            if let Some(v) = a.seed {
                cfg.seed = v;
            }
            let set = read_features(&a.features)?;
            let (params, log) = train(&set.features, &cfg)?;
            save_checkpoint(&a.output, &params, &cfg)?;
            if let Some(p) = &a.log {
                write_training_log(p, &log)?;
            }
            if let Some(last) = log.last() {
                eprintln!("epoch {}: ce {:.5} supcon {:.5}", last.epoch, last.mean_ce, last.mean_sc);
            }
        }
        Command::Eval(a) => {
            let (params, cfg) = load_checkpoint(&a.model)?;
            let set = read_features(&a.features)?;
            let scores = score_features(&params, &set.features, &cfg)?;
            let groups: Vec<String> = set.features.iter().map(|f| f.generator.clone()).collect();
            let s = ScoreSet::new(scores, set.labels())?;
            let report = evaluate(&s, a.threshold)?;
            let by_group = evaluate_by_group(&s, &groups, a.threshold)?;
            let doc = serde_json::json!({ "overall": report, "by_generator": by_group });
            match &a.output {
                Some(p) => {
                    let text = serde_json::to_string_pretty(&doc)? + "\n";
                    std::fs::write(p, text).map_err(|e| Error::io(p, e))?;
                }
                None => print_json(&doc)?,
            }
            if let Some(p) = &a.roc {
                write_roc_csv(p, &report.roc)?;
            }
        }
        Command::Perturb(a) => {
            let mut spec: PerturbSpec = load_toml(a.config.as_deref())?;
            if let Some(k) = a.kind {
                spec.kind = match k {
                    KindArg::Gaussian => PerturbKind::Gaussian,
                    KindArg::Jpeg => PerturbKind::Jpeg,
                    KindArg::Both => PerturbKind::Both,
                    KindArg::None => PerturbKind::None,
                };
            }
            if let Some(f) = a.fraction {
                spec.apply_fraction = f;
            }
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            let phase = match a.phase {
                PhaseArg::Train => Phase::Train,
                PhaseArg::Test => Phase::Test,
            };
            let log_path = a.log.clone().unwrap_or_else(|| a.output.join("perturb_log.jsonl"));
            let log = perturb_directory(&a.input, &a.output, &spec, phase, &log_path)?;
            eprintln!("perturbed {} images", log.len());
        }
        Command::Combine(a) => {
            let ms = a.inputs.iter().map(|p| read_manifest(p)).collect::<Result<Vec<_>>>()?;
            let m = combine_datasets(&ms, a.cap, a.seed)?;
            write_manifest(&m, &a.output)?;
            let (real, fake) = m.class_counts();
            eprintln!("combined {} records ({real} real / {fake} fake)", m.count());
        }
        Command::Run(a) => {
            let mut cfg = PipelineConfig::load(&a.config)?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(d) = a.run_dir {
                // A flag path is relative to the working directory, not the config.
                cfg.run_dir = std::path::absolute(&d).map_err(|e| Error::io(&d, e))?;
            }
            let summary = run(&cfg)?;
            for st in &summary.stages {
                println!("{:<20} {:<10} seed {:<6} {} files", st.name, st.kind, st.seed, st.outputs.len());
            }
            println!("summary: {}", cfg.run_dir().join(SUMMARY_FILE).display());
        }
        Command::Synth(a) => {
            let spec = CorpusSpec {
                per_class: a.per_class,
                size: a.size,
                duplicate_fraction: a.duplicate_fraction,
                seed: a.seed,
                prefix: a.prefix,
                ..CorpusSpec::default()
            };
            let labels = write_corpus(&a.output, &spec)?;
            eprintln!("wrote {} images", labels.len());
        }
    }
    Ok(())
}
