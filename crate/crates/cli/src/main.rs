use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use probelab::orchestrator::{self, has_errors, RunOptions, StageStatus, StageToggles};
use probelab::synth::{write_synthetic, SyntheticSpec};

#[derive(Parser)]
#[command(name = "probelab", version, about = "Probe, erase and compare instruction-following signals in activation datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model, task, experiment or synthetic-spec config.
    Validate { config: PathBuf },
    /// Run an experiment.
    Run {
        experiment: PathBuf,
        /// Recompute stages even when cached outputs are up to date.
        #[arg(long)]
        force: bool,
        /// Comma-separated stages to run instead of the config's toggles.
        #[arg(long)]
        stages: Option<String>,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Generate a synthetic dataset with ground truth.
    Synth {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the summary of a finished run.
    Report { run_dir: PathBuf },
}

fn seed_from_env() -> Result<Option<u64>, probelab::Error> {
    match std::env::var("PROBELAB_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| probelab::Error::config("PROBELAB_SEED", "PROBELAB_SEED", format!("`{v}` is not a u64"))),
        Err(_) => Ok(None),
    }
}

fn execute(cmd: Command) -> Result<ExitCode, probelab::Error> {
    match cmd {
        Command::Validate { config } => {
            let findings = orchestrator::validate_config(&config)?;
            for f in &findings {
                println!("{f}");
            }
            if has_errors(&findings) {
                return Ok(ExitCode::from(1));
            }
            if findings.is_empty() {
                println!("{}: ok", config.display());
            }
        }
        Command::Run { experiment, force, stages, jobs } => {
            let opts = RunOptions {
                force,
                stages: stages.as_deref().map(StageToggles::only).transpose()?,
                jobs,
                seed_override: seed_from_env()?,
            };
            let report = orchestrator::run(&experiment, &opts)?;
            for o in &report.stages {
                let status = match o.status {
                    StageStatus::Ran => "ran",
                    StageStatus::Cached => "cached",
                    StageStatus::Disabled => "disabled",
                };
                println!("{:<10} {status}", o.stage.as_str());
            }
            println!("outputs in {}", report.output_dir.display());
        }
        Command::Synth { spec, out } => {
            let spec = SyntheticSpec::load(&spec)?;
            let manifest = write_synthetic(&spec, &out)?;
            println!("{}", manifest.display());
        }
        Command::Report { run_dir } => print!("{}", orchestrator::render_report(&run_dir)?),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
