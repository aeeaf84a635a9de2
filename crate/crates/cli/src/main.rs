//! `chartbeam` command-line front end.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "chartbeam",
    version,
    about = "Chart-assisted mmWave beam tracking simulator"
)]
struct Cli {
    /// Flat key=value config file; unset keys keep the standard defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides scenario.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides run.out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate n_paths trajectories with feature CSVs.
    Synth,
    /// Train the chart and build both beam tables from trajectory files.
    Train {
        /// Trajectory files; defaults to traj_*.txt in the output directory.
        trajectories: Vec<PathBuf>,
    },
    /// Track trajectory files with trained assets and run both baselines.
    Track {
        /// Trajectory files; defaults to traj_*.txt in the output directory.
        trajectories: Vec<PathBuf>,
        /// Directory holding model.txt, table_tx.txt, table_rx.txt, fit.txt.
        #[arg(long)]
        assets: Option<PathBuf>,
    },
    /// Error rates over feature modes and first hidden widths.
    Sweep {
        /// Comma-separated feature modes (full, azimuth, elevation).
        #[arg(long, default_value = "azimuth,elevation,full")]
        modes: String,
        /// Comma-separated first hidden widths.
        #[arg(long, default_value = "4,8,16,32,64,128,256,512")]
        widths: String,
    },
    /// Error drift over run.stream_len successive trajectories for codebooks 64 and 128.
    Timeliness,
    /// Print every config key with its default value.
    Defaults,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = commands::load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.scenario.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Train { trajectories } => commands::train(&cfg, &trajectories),
        Command::Track {
            trajectories,
            assets,
        } => commands::track(&cfg, &trajectories, assets.as_deref()),
        Command::Sweep { modes, widths } => commands::sweep(&cfg, &modes, &widths),
        Command::Timeliness => commands::timeliness(&cfg),
        Command::Defaults => {
            print!("{}", cfg.to_kv());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
