use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pdgmm_cli::commands;
use pdgmm_cli::config::{Experiment, ExperimentConfig};
use pdgmm_cli::error::{CliError, CliResult, EXIT_INVALID};

const LOG_ENV: &str = "PDGMM_LOG_LEVEL";

#[derive(Parser)]
#[command(
    name = "pdgmm",
    version,
    about = "Blind source separation with a per-dimension GMM prior VAE"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset, used when no --config is given
    #[arg(long, value_enum)]
    experiment: Option<Experiment>,
    /// Overrides the seed from the config or preset
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic dataset
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit a model to a dataset
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score a checkpoint against a dataset and draw figures
    Eval {
        /// Checkpoint directory written by `train`
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Training log for the training-curve figure
        #[arg(long)]
        train_log: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Generate, train and evaluate one experiment end to end
    Reproduce {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the full pipeline for several seeds
    SeedSweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn init_logging() -> CliResult<()> {
    let level = match std::env::var(LOG_ENV) {
        Ok(v) => v,
        Err(std::env::VarError::NotPresent) => "info".to_string(),
        Err(_) => return Err(CliError::Usage(format!("{LOG_ENV} is not valid unicode"))),
    };
    let filter = match level.as_str() {
        "error" => log::LevelFilter::Error,
        "info" => log::LevelFilter::Info,
        "debug" => log::LevelFilter::Debug,
        other => {
            return Err(CliError::Usage(format!(
                "{LOG_ENV} must be error, info or debug, got {other:?}"
            )))
        }
    };
    env_logger::Builder::new()
        .filter_level(filter)
        .format_timestamp(None)
        .init();
    Ok(())
}

fn init_pool(jobs: usize) -> CliResult<()> {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    Ok(())
}

fn experiment_config(c: &Common) -> CliResult<ExperimentConfig> {
    ExperimentConfig::from_args(c.config.as_deref(), c.experiment, c.seed)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate { common, out_dir } => {
            init_pool(common.jobs)?;
            let cfg = experiment_config(&common)?;
            let ds = commands::generate(&cfg, &out_dir)?;
            println!("{}", commands::generate_line(&ds, &out_dir));
        }
        Command::Train {
            common,
            data_dir,
            out_dir,
        } => {
            init_pool(common.jobs)?;
            let cfg = experiment_config(&common)?;
            let out = commands::train(&cfg, &data_dir, &out_dir)?;
            println!("{}", commands::train_line(&out.summary));
        }
        Command::Eval {
            checkpoint,
            data_dir,
            out_dir,
            train_log,
            jobs,
        } => {
            init_pool(jobs)?;
            let out = commands::eval(&checkpoint, &data_dir, &out_dir, train_log.as_deref())?;
            let corrs: Vec<String> = out
                .matching
                .abs_corrs
                .iter()
                .map(|c| format!("{c:.4}"))
                .collect();
            println!(
                "|corr| = [{}], mean {:.4}",
                corrs.join(", "),
                out.matching.mean_abs_corr
            );
        }
        Command::Reproduce { common, out_dir } => {
            init_pool(common.jobs)?;
            let experiment = match (common.experiment, &common.config) {
                (Some(e), _) => e,
                (None, Some(path)) => {
                    ExperimentConfig::load(path)?.experiment.ok_or_else(|| {
                        CliError::Usage("config names no experiment; pass --experiment".into())
                    })?
                }
                (None, None) => return Err(CliError::Usage("--experiment is required".into())),
            };
            let cfg = experiment_config(&common)?;
            let out = commands::reproduce(experiment, &cfg, &out_dir)?;
            print!(
                "{}",
                commands::comparison_table(experiment, &out.comparison)
            );
        }
        Command::SeedSweep {
            common,
            seeds,
            out_dir,
        } => {
            init_pool(common.jobs)?;
            let cfg = experiment_config(&common)?;
            let entries = commands::seed_sweep(&cfg, &seeds, &out_dir)?;
            for e in &entries {
                let corrs: Vec<String> = e
                    .matching
                    .abs_corrs
                    .iter()
                    .map(|c| format!("{c:.4}"))
                    .collect();
                println!(
                    "seed {}: |corr| = [{}], mean {:.4}",
                    e.seed,
                    corrs.join(", "),
                    e.matching.mean_abs_corr
                );
            }
        }
    }
    Ok(())
}

fn report(err: &CliError) {
    eprintln!("error: {err}");
    if let CliError::Core(pdgmm_core::Error::NonFiniteLoss {
        last_good: Some(dir),
        ..
    }) = err
    {
        eprintln!("last good checkpoint: {}", Path::new(dir).display());
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    if let Err(e) = init_logging() {
        report(&e);
        return ExitCode::from(e.exit_code() as u8);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
