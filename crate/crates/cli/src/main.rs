mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use saccade_oc::analysis::SweepKind;
use saccade_oc::verify::Fault;

use config::RunConfig;

/// Velocity-tracking stochastic optimal control of saccades.
#[derive(Debug, Parser)]
#[command(name = "saccade-oc", version)]
struct Cli {
    /// Run configuration (`key = value` lines, dotted keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `run.output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mean trajectory for one target, optionally with a Monte-Carlo ensemble.
    Simulate {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        amplitude: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        direction: Option<f64>,
    },
    /// Two-stage fit of q and alpha on the 12 deg / 180 deg condition.
    Fit {
        #[arg(long, value_enum, default_value_t = Stage::Both)]
        stage: Stage,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Prediction errors across amplitudes or directions with fitted parameters.
    Sweep {
        #[arg(long, value_enum)]
        kind: Kind,
        /// FitResult JSON written by `fit`.
        #[arg(long)]
        fit_result: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Checks the controller against independent references.
    Verify {
        #[arg(long)]
        json: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultFlag>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Stage {
    QOnly,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Amplitude,
    Direction,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FaultFlag {
    SignFlipA,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration.
    Usage(anyhow::Error),
    /// A check failed or a run could not complete.
    Failure(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| CliError::Usage(e.into()))?,
        None => RunConfig::default(),
    };
    cfg.apply_env().map_err(|e| CliError::Usage(e.into()))?;
    if let Some(out) = cli.out {
        cfg.output = out;
    }
    let seed_flag = |cfg: &mut RunConfig, seed: Option<u64>| {
        if let Some(s) = seed {
            cfg.seed = s;
        }
    };
    match cli.command {
        Command::Simulate {
            trials,
            seed,
            amplitude,
            direction,
        } => {
            seed_flag(&mut cfg, seed);
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(a) = amplitude {
                cfg.amplitude = a;
            }
            if let Some(d) = direction {
                cfg.direction = d;
            }
            commands::simulate(&cfg)
        }
        Command::Fit { stage, seed } => {
            seed_flag(&mut cfg, seed);
            let fit = commands::fit(&cfg, matches!(stage, Stage::QOnly))?;
            println!(
                "q = {:e}, alpha = {}, velocity error {:.3}%, displacement error {:.3}%",
                fit.q, fit.alpha, fit.velocity_error, fit.displacement_error
            );
            Ok(())
        }
        Command::Sweep {
            kind,
            fit_result,
            seed,
        } => {
            seed_flag(&mut cfg, seed);
            let kind = match kind {
                Kind::Amplitude => SweepKind::Amplitude,
                Kind::Direction => SweepKind::Direction,
            };
            let report = commands::sweep(&cfg, kind, fit_result.as_deref())?;
            for s in &report.summary {
                println!(
                    "{}: displacement {:.2}%, velocity {:.2}%",
                    s.label, s.displacement_mean, s.velocity_mean
                );
            }
            Ok(())
        }
        Command::Verify {
            json,
            seed,
            inject_fault,
        } => {
            seed_flag(&mut cfg, seed);
            let fault = inject_fault.map(|f| match f {
                FaultFlag::SignFlipA => Fault::SignFlipA,
            });
            let results = commands::verify(&cfg, json, fault)?;
            let failed: Vec<&str> = results
                .iter()
                .filter(|c| !c.passed)
                .map(|c| c.name.as_str())
                .collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Failure(anyhow::anyhow!(
                    "failed checks: {}",
                    failed.join(", ")
                )))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Usage(err) | CliError::Failure(err)) = &e;
            eprintln!("error: {err:#}");
            ExitCode::from(e.code())
        }
    }
}
