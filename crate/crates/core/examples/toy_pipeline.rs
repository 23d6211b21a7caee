//! Runs the checked-in toy pipeline config end to end and prints the
//! evaluation report.
//!
//!     cargo run --release --example toy_pipeline [-- path/to/config.toml]

use std::path::PathBuf;

use divfuse::pipeline::{run, PipelineConfig};

fn main() -> divfuse::Result<()> {
    let config = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/toy_pipeline.toml")
    });
    let cfg = PipelineConfig::load(&config)?;
    let summary = run(&cfg)?;
    for stage in &summary.stages {
        println!("{:<16} {:<10} {:>4} files", stage.name, stage.kind, stage.outputs.len());
    }

    let report = cfg.run_dir().join("report/report.json");
    if report.exists() {
        let text = std::fs::read_to_string(&report).map_err(|e| divfuse::Error::io(&report, e))?;
        let v: serde_json::Value = serde_json::from_str(&text)?;
        let num = |x: &serde_json::Value| x.as_f64().unwrap_or(f64::NAN);
        let o = &v["overall"];
        println!(
            "\ntest ACC {:.4}  AUC {:.4}  AP {:.4}  EER {:.4}",
            num(&o["acc"]),
            num(&o["auc"]),
            num(&o["ap"]),
            num(&o["eer"])
        );
        for (g, r) in v["by_generator"].as_object().into_iter().flatten() {
            println!("  {g:<10} n={} ACC {:.4}", r["count"], num(&r["acc"]));
        }
    }
    let dir = cfg.run_dir();
    println!("\nartifacts in {}", std::fs::canonicalize(&dir).unwrap_or(dir).display());
    Ok(())
}
