//! `nsnn` command line: dispatch one configured experiment task.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use nsnn::harness::{run, ExperimentConfig, TaskKind};
use nsnn::Error;

#[derive(Parser)]
#[command(name = "nsnn", version, about = "Noisy spiking neural network lab")]
struct Cli {
    /// Task to run: train | eval | perturb | stability | coding | fit_spikes | grad_check
    task: String,
    /// Path to the JSON experiment configuration
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Parameter(_) => 2,
        Error::TrainingDiverged { .. } | Error::Divergence { .. } => 3,
        Error::Capacity(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("NSNN_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            // ignore the error if a global pool already exists
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    match execute(&cli) {
        Ok(summary) => {
            println!("ok: {summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn execute(cli: &Cli) -> nsnn::Result<String> {
    let task: TaskKind = cli.task.parse()?;
    let mut cfg = ExperimentConfig::from_file(&cli.config)?;
    if cfg.task != task {
        return Err(Error::Config(format!(
            "config declares task '{}' but '{}' was requested",
            cfg.task, task
        )));
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    let artifacts = run(&cfg)?;
    Ok(artifacts.summary.display().to_string())
}
