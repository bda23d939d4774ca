use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixhmm_cli::config::Config;
use mixhmm_cli::CliError;

/// Fit mixed hidden Markov models to multi-series event data.
#[derive(Parser)]
#[command(name = "mixhmm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the parallel stages; overrides `workers`.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from the `[simulate]` section of the config.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Select and fit a model, then write the report, decoded states and densities.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write globally decoded (Viterbi) states.
        #[arg(long)]
        viterbi: bool,
    },
    /// Decode states under the model stored in a fit report.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// A report.json written by `fit`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        viterbi: bool,
    },
    /// Profile-likelihood interval for one parameter of a fitted model.
    ProfileCi {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Parameter name as printed in the report, e.g. `beta[1,3]`.
        #[arg(long)]
        parameter: String,
        #[arg(long)]
        level: Option<f64>,
    },
}

fn setup(common: &Common) -> Result<Config, CliError> {
    let config = Config::load(&common.config)?;
    if let Some(w) = common.workers.or(config.workers) {
        if w == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {w} workers: {e}")))?;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<PathBuf, CliError> {
    match cli.command {
        Command::Simulate { common, seed } => {
            let config = setup(&common)?;
            mixhmm_cli::run_simulate(&config, common.out.as_deref(), seed)
        }
        Command::Fit { common, data, seed, viterbi } => {
            let config = setup(&common)?;
            mixhmm_cli::run_fit(&data, &config, common.out.as_deref(), seed, viterbi)
        }
        Command::Decode { common, data, model, viterbi } => {
            let config = setup(&common)?;
            mixhmm_cli::run_decode(&data, &config, &model, common.out.as_deref(), viterbi)
        }
        Command::ProfileCi { common, data, model, parameter, level } => {
            let config = setup(&common)?;
            if level.is_some_and(|l| !(l > 0.0 && l < 1.0)) {
                return Err(CliError::Config("--level must lie in (0, 1)".into()));
            }
            mixhmm_cli::run_profile_ci(&data, &config, &model, &parameter, level, common.out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(dir) => {
            eprintln!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("mixhmm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
