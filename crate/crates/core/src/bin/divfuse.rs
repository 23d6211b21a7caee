use clap::Parser;
use divfuse::cli::{execute, Cli};

fn main() -> anyhow::Result<()> {
    execute(Cli::parse())?;
    Ok(())
}
