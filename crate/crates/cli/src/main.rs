//! `omm`: reproducible pipelines for emulating, calibrating and modeling
//! MZI-mesh matrix multipliers.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "omm", version, about = "Calibration and surrogate modeling of MZI-mesh matrix multipliers")]
struct Cli {
    /// TOML run configuration; protocol defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set fit.kind=nn-sw`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweep cells, multistarts and data generation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fabricate a chip and measure the sweep and random datasets.
    Generate {
        /// Number of wavelength channels (1, or a divisor of 100).
        #[arg(long)]
        bands: Option<usize>,
    },
    /// Fit a forward model (sam, samxt, nn-sw, nn-lambda-r, nn-lambda-s,
    /// nn-lambda-g, tcnn, tcnn-100).
    Fit {
        #[arg(long)]
        kind: Option<String>,
    },
    /// Score a model on one split.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Training-size × seed sweep.
    Sweep {
        #[arg(long)]
        kind: Option<String>,
    },
    /// Find heater voltages realizing a target weight matrix.
    Program {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Inject model errors into a reference network's optical layer.
    Task {
        /// xor3 or gauss2d.
        #[arg(long)]
        kind: Option<String>,
    },
    /// Summarize every result in the run directory.
    Report,
    /// Print the resolved configuration as TOML.
    Config,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut sets = cli.set.clone();
    let quoted = |s: &str| format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""));
    // paths given as flags are relative to the working directory
    let path = |p: &PathBuf| quoted(&std::path::absolute(p).unwrap_or_else(|_| p.clone()).to_string_lossy());
    match &cli.command {
        Command::Generate { bands: Some(b) } => sets.push(format!("data.bands={b}")),
        Command::Fit { kind: Some(k) } => sets.push(format!("fit.kind={}", quoted(k))),
        Command::Evaluate { model: Some(m) } => sets.push(format!("evaluate.model={}", path(m))),
        Command::Sweep { kind: Some(k) } => sets.push(format!("sweep.kind={}", quoted(k))),
        Command::Program { model: Some(m) } => sets.push(format!("program.model={}", path(m))),
        Command::Task { kind: Some(k) } => sets.push(format!("task.kind={}", quoted(k))),
        _ => {}
    }
    if let Some(out) = &cli.out {
        sets.push(format!("out_dir={}", quoted(&out.to_string_lossy())));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &sets)?;
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Generate { .. } => commands::generate(&cfg),
        Command::Fit { .. } => commands::fit(&cfg),
        Command::Evaluate { .. } => commands::evaluate_cmd(&cfg),
        Command::Sweep { .. } => commands::sweep(&cfg),
        Command::Program { .. } => commands::program(&cfg),
        Command::Task { .. } => commands::task(&cfg),
        Command::Report => commands::report(&cfg),
        Command::Config => {
            let text = toml::to_string(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("omm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
