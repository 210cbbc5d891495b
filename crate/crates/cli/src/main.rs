//! `raterlens` command-line driver.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use raterlens_core::agreement::IrrCoefficient;
use raterlens_core::Error;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "raterlens", version, about = "Annotator subjectivity analysis")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory. Falls back to the config, then RATERLENS_OUT, then `out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a population and its annotations.
    Simulate,
    /// Factorize annotations into item and annotator embeddings.
    Fit {
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Pick dim, reg and iterations by dev error over the configured grid.
        #[arg(long)]
        grid: bool,
    },
    /// Project embeddings to two dimensions.
    Project {
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Cluster embeddings and derive proxy labels.
    Cluster {
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Compare proxies against true labels across replication sizes.
    Sweep,
    /// Krippendorff's alpha for one or more rating tables.
    Irr {
        #[arg(long, required = true, num_args = 1..)]
        ratings: Vec<PathBuf>,
    },
    /// Cross-replication reliability between two rating tables.
    Xrr {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
    },
    /// Per-annotator IRR difference between two prediction files.
    DeltaIrr {
        #[arg(long)]
        soft: PathBuf,
        #[arg(long)]
        fewshot: PathBuf,
        #[arg(long, default_value = "alpha", value_parser = parse_coefficient)]
        coefficient: IrrCoefficient,
    },
    /// Load the configured annotation datasets into rating tables.
    Ingest,
    /// Summarize the results found in the output directory.
    Report,
}

fn parse_coefficient(s: &str) -> Result<IrrCoefficient, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match commands::run(&cli.global, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_domain() { 1 } else { 2 })
        }
    }
}
