//! `mpval` command-line front-end.

mod config;
mod error;
mod run;

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::config::Config;
use crate::error::CliError;
use crate::run::Outcome;

#[derive(Debug, Parser)]
#[command(name = "mpval", version, about = "Multi-period liability valuation experiments")]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output stem; writes `<stem>.json` and `<stem>.csv`.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Nested backward recursion on a loaded or simulated scenario tree.
    ValueTree {
        #[arg(long)]
        config: PathBuf,
    },
    /// Closed-form value of a Gaussian model.
    ValueGaussian {
        #[arg(long)]
        config: PathBuf,
    },
    /// Replications of the compound claims model.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Nested-simulation values against the large-portfolio approximation.
    Converge {
        #[arg(long)]
        config: PathBuf,
    },
    /// Closed-form values under a coarser and a finer filtration.
    CompareFiltrations {
        #[arg(long)]
        config: PathBuf,
    },
    /// Grid search of the simplex program for a decrement profile.
    LemmaCheck {
        /// Comma-separated profile, e.g. `0.5,0.3,0.2`.
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        c: Vec<f64>,
        #[arg(long)]
        step: f64,
    },
}

impl Command {
    fn kind(&self) -> &'static str {
        match self {
            Command::ValueTree { .. } => "value-tree",
            Command::ValueGaussian { .. } => "value-gaussian",
            Command::Simulate { .. } => "simulate",
            Command::Converge { .. } => "converge",
            Command::CompareFiltrations { .. } => "compare-filtrations",
            Command::LemmaCheck { .. } => "lemma-check",
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(CliError::Validation("--workers: must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Numerical(format!("worker pool: {e}")))?;
    }
    let kind = cli.command.kind();
    let started = Instant::now();
    let (outcome, stem): (Outcome, PathBuf) = match &cli.command {
        Command::LemmaCheck { c, step } => {
            let outcome = run::lemma(c, *step, cli.seed.unwrap_or(0))?;
            (outcome, cli.output.clone().unwrap_or_else(|| PathBuf::from(kind)))
        }
        Command::ValueTree { config }
        | Command::ValueGaussian { config }
        | Command::Simulate { config }
        | Command::Converge { config }
        | Command::CompareFiltrations { config } => {
            let (mut cfg, base) = Config::load(config)?;
            cfg.check_kind(kind)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let stem = match (&cli.output, &cfg.output) {
                (Some(o), _) => o.clone(),
                (None, Some(o)) => config::resolve(&base, o),
                (None, None) => PathBuf::from(kind),
            };
            let outcome = match &cli.command {
                Command::ValueTree { .. } => run::value_tree(&cfg, &base)?,
                Command::ValueGaussian { .. } => run::value_gaussian(&cfg, &base)?,
                Command::Simulate { .. } => run::simulate(&cfg)?,
                Command::Converge { .. } => run::converge(&cfg)?,
                Command::CompareFiltrations { .. } => run::compare(&cfg, &base)?,
                Command::LemmaCheck { .. } => unreachable!(),
            };
            (outcome, stem)
        }
    };
    let (json, csv) = outcome.write(&stem)?;
    tracing::info!(
        kind,
        elapsed_ms = started.elapsed().as_millis() as u64,
        threads = rayon::current_num_threads(),
        "run finished"
    );
    println!("{}", json.display());
    println!("{}", csv.display());
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
