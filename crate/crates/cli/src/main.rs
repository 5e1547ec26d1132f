mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fictdisc_core::estimators::Estimator;

use crate::commands::TrainOverrides;
use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Exact audits and REINFORCE training for tabular MDPs with a fictitious discount.
#[derive(Debug, Parser)]
#[command(name = "fictdisc", version)]
struct Cli {
    /// Worker threads; output does not depend on this.
    #[arg(long, global = true, env = "FICTDISC_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a random model with strictly positive transitions.
    GenMdp {
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        floor: f64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every bound against exact values; exits 1 if any record fails.
    Audit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a training loop per model and seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        algorithm: Option<Estimator>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        log_every: Option<usize>,
        /// Use exact estimator expectations instead of samples.
        #[arg(long)]
        exact: bool,
    },
    /// Tabulate measured estimator biases against their bounds over horizons.
    CompareBias {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Evaluate a logits checkpoint in all three settings.
    Eval {
        /// Fixture name or model file.
        #[arg(long)]
        model: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        horizon: usize,
        #[arg(long, conflicts_with = "sigma")]
        gamma: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &std::path::Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenMdp { states, actions, seed, floor, out } => {
            commands::gen_mdp(states, actions, seed, floor, out.as_deref())
        }
        Command::Audit { config, out_dir, seed } => {
            let cfg = load(&config, seed)?;
            commands::audit(&cfg, &cfg.out_dir(out_dir.as_deref())).map(|_| ())
        }
        Command::Train { config, out_dir, algorithm, horizon, sigma, epsilon, k_max, seed, log_every, exact } => {
            let cfg = load(&config, None)?;
            let overrides = TrainOverrides { algorithm, horizon, sigma, epsilon, k_max, seed, log_every, exact };
            commands::train(&cfg, &overrides, &cfg.out_dir(out_dir.as_deref())).map(|_| ())
        }
        Command::CompareBias { config, out_dir, sigma, beta } => {
            let cfg = load(&config, None)?;
            commands::compare_bias(&cfg, sigma, beta, &cfg.out_dir(out_dir.as_deref()))
        }
        Command::Eval { model, checkpoint, horizon, gamma, sigma, out } => {
            if horizon == 0 {
                return Err(CliError::Config("horizon must be positive".into()));
            }
            let gamma = commands::resolve_gamma(horizon, gamma, sigma)?;
            match out {
                Some(path) => {
                    let file = std::fs::File::create(&path)?;
                    commands::eval(&model, &checkpoint, horizon, gamma, std::io::BufWriter::new(file))
                }
                None => commands::eval(&model, &checkpoint, horizon, gamma, std::io::stdout().lock()),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().expect("global pool is set once");
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
