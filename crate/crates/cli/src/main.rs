mod commands;
mod config;
mod error;
mod output;

use std::panic;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::RunConfig;
use error::CliError;

const THREADS_ENV: &str = "FOLDKIN_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Parser)]
#[command(name = "foldkin", version, about = "Train and evaluate compact folding-rate regressors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Input CSV with the documented column layout.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Run configuration (.toml or .json).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (or file, for predict and synth).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset sizes, e.g. `2,4,6`.
    #[arg(long)]
    subsets: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug, Clone, Default)]
struct ArtifactArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    preprocessor: Option<PathBuf>,
    /// Directory holding model.bnsi and preprocessor.json.
    #[arg(long)]
    artifacts: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit preprocessing and a regressor; write model, preprocessor and report.
    Train(Common),
    /// Run the four-quadrant strategy over feature subsets.
    Evaluate(Common),
    /// Predict ln(k_f) for every input row.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        artifacts: ArtifactArgs,
    },
    /// Hyperparameter sweep with optional narrowing rounds.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Per-sample latency with a stage breakdown.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        artifacts: ArtifactArgs,
    },
    /// Emit a synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of records.
        #[arg(long)]
        n: Option<usize>,
    },
}

fn parse_subsets(text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| CliError::Validation(format!("subset size `{s}` is not a positive integer")))
        })
        .collect()
}

/// File settings overridden by flags.
fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &common.input {
        cfg.input = Some(p.clone());
    }
    if let Some(p) = &common.out {
        cfg.out = Some(p.clone());
    }
    if let Some(s) = common.seed {
        cfg.seed = Some(s);
    }
    if let Some(s) = &common.subsets {
        cfg.subsets = parse_subsets(s)?;
    }
    Ok(cfg)
}

/// `train`, `sweep` and `benchmark` use one subset size.
fn single_subset(cfg: &mut RunConfig, common: &Common) -> Result<(), CliError> {
    if common.subsets.is_some() {
        match cfg.subsets.as_slice() {
            [n] => cfg.train_subset = *n,
            [] => return Err(CliError::Validation("no subsets".into())),
            _ => return Err(CliError::Validation("this command takes a single subset size".into())),
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(common) => {
            let mut cfg = resolve(&common)?;
            single_subset(&mut cfg, &common)?;
            commands::train(&cfg)
        }
        Command::Evaluate(common) => commands::evaluate(&resolve(&common)?, common.format),
        Command::Predict { common, artifacts } => commands::predict(
            &resolve(&common)?,
            common.format,
            artifacts.model.as_deref(),
            artifacts.preprocessor.as_deref(),
            artifacts.artifacts.as_deref(),
        ),
        Command::Sweep { common, rounds } => {
            let mut cfg = resolve(&common)?;
            single_subset(&mut cfg, &common)?;
            if let Some(r) = rounds {
                cfg.rounds = r;
            }
            commands::sweep(&cfg, common.format)
        }
        Command::Benchmark { common, artifacts } => {
            let mut cfg = resolve(&common)?;
            single_subset(&mut cfg, &common)?;
            commands::benchmark(
                &cfg,
                artifacts.model.as_deref(),
                artifacts.preprocessor.as_deref(),
                artifacts.artifacts.as_deref(),
            )
        }
        Command::Synth { common, n } => {
            let mut cfg = resolve(&common)?;
            if let Some(n) = n {
                cfg.synth_records = n;
            }
            commands::synth(&cfg, common.format)
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Validation(format!("{THREADS_ENV}=`{raw}` is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Internal(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = configure_threads().and_then(|()| {
        panic::catch_unwind(|| dispatch(cli))
            .unwrap_or_else(|_| Err(CliError::Internal("unexpected panic".into())))
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
