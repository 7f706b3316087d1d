use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kaizen_cli::commands::{
    cmd_make_config, cmd_metrics, cmd_plot, cmd_run, cmd_validate_config, PlotKind,
};
use kaizen_cli::config::ExperimentConfig;
use kaizen_core::error::{Error, ErrorCategory};

/// Continual self-supervised learning experiments: joint
/// distillation-and-replay training with the full continual evaluation
/// suite.
#[derive(Parser)]
#[command(name = "kaizen", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment from a config file (all seeds).
    Run {
        /// Path to the experiment TOML.
        #[arg(long)]
        config: PathBuf,
        /// Overwrite an existing artifact directory.
        #[arg(long)]
        force: bool,
    },
    /// Compute FA/CA/F/FT from accuracy-matrix files (.csv or .json).
    Metrics {
        /// Matrix files.
        #[arg(required = true)]
        matrices: Vec<PathBuf>,
        /// Single-task diagonal CSV enabling forward transfer (one
        /// matrix only).
        #[arg(long)]
        single_task: Option<PathBuf>,
        /// Also write per-matrix JSON reports and the table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render figures from run artifacts.
    Plot {
        /// Artifact directories produced by `run`.
        #[arg(required = true)]
        artifacts: Vec<PathBuf>,
        /// average | per-task | bars | replay-ablation
        #[arg(long)]
        kind: String,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and validate a config file without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a fully populated default config.
    MakeConfig {
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, force } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = cmd_run(&cfg, force)?;
            println!("run complete: {}", dir.display());
            Ok(())
        }
        Command::Metrics {
            matrices,
            single_task,
            out,
        } => {
            let table = cmd_metrics(&matrices, single_task.as_deref(), out.as_deref())?;
            print!("{table}");
            Ok(())
        }
        Command::Plot {
            artifacts,
            kind,
            out,
        } => {
            let kind = PlotKind::parse(&kind)?;
            cmd_plot(&artifacts, kind, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::ValidateConfig { config } => {
            let msg = cmd_validate_config(&config)?;
            println!("{msg}");
            Ok(())
        }
        Command::MakeConfig { out } => {
            cmd_make_config(&out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.category() {
                ErrorCategory::Config => ExitCode::from(2),
                ErrorCategory::Data => ExitCode::from(3),
                ErrorCategory::Runtime => ExitCode::from(4),
            }
        }
    }
}
