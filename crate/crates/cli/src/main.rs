//! `readmit`: command-line driver for the readmission classification
//! experiments.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use readmit_core::eval::SweepGrid;

use config::{parse_list, resolve, CommonArgs, StudyConfig, SEED_ENV};
use report::Report;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<readmit_core::Error> for CliError {
    fn from(e: readmit_core::Error) -> Self {
        use readmit_core::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::TooMany { .. } | E::MissingLabelColumn(_) => CliError::Config(e.to_string()),
            E::Numeric(m) => CliError::Numeric(m),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "readmit",
    version,
    about = "Three-class readmission classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load the CSV and report class counts.
    Ingest(CommonArgs),
    /// Per-class mean and variance of every feature.
    Stats(CommonArgs),
    /// Score features by chi-square, Pearson and ANOVA F; optionally compare top-k runs.
    Select {
        #[command(flatten)]
        common: CommonArgs,
        /// Scoring methods (default: all three).
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        /// Feature counts to cross-validate for each method.
        #[arg(long, value_delimiter = ',')]
        ks: Vec<usize>,
    },
    /// Cross-validate the model under each resampling method.
    Resample {
        #[command(flatten)]
        common: CommonArgs,
        /// Resampling methods (default: all six).
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// One cross-validated run of the configured model.
    Train(CommonArgs),
    /// Epochs × learning rate × batch size grid for a network model.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',')]
        epochs_grid: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        lr_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        batch_grid: Vec<usize>,
    },
    /// Network → gradient-boosting cascade, cross-validated.
    Cascade(CommonArgs),
    /// Class 0 vs class 2 with gradient boosting under three sampling regimes.
    BinaryStudy {
        #[command(flatten)]
        common: CommonArgs,
        /// nearmiss, random_pair, balanced_random (default: all).
        #[arg(long, value_delimiter = ',')]
        regimes: Vec<String>,
    },
    /// Collate the summaries of earlier runs.
    Report {
        /// Run output directories.
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "runs/report")]
        out: PathBuf,
    },
}

fn set_workers(workers: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::Config("workers: must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("workers: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<String, CliError> {
    let experiment = |common: &CommonArgs,
                      study: &dyn Fn(&mut StudyConfig) -> Result<(), CliError>,
                      f: &dyn Fn(&config::Resolved) -> Result<Report, CliError>| {
        let r = resolve(common, study, std::env::var(SEED_ENV).ok())?;
        set_workers(common.workers)?;
        f(&r)?.write(&r.config.output)
    };
    let keep = |_: &mut StudyConfig| Ok(());
    match cli.command {
        Command::Ingest(c) => experiment(&c, &keep, &commands::ingest),
        Command::Stats(c) => experiment(&c, &keep, &commands::stats),
        Command::Select { common, methods, ks } => {
            let study = |s: &mut StudyConfig| {
                if !methods.is_empty() {
                    s.score_methods = parse_list(&methods)?;
                }
                if !ks.is_empty() {
                    s.ks = ks.clone();
                }
                Ok(())
            };
            experiment(&common, &study, &commands::select)
        }
        Command::Resample { common, methods } => {
            let study = |s: &mut StudyConfig| {
                if !methods.is_empty() {
                    s.resample_methods = parse_list(&methods)?;
                }
                Ok(())
            };
            experiment(&common, &study, &commands::resample_study)
        }
        Command::Train(c) => experiment(&c, &keep, &commands::train),
        Command::Sweep {
            common,
            epochs_grid,
            lr_grid,
            batch_grid,
        } => {
            let study = |s: &mut StudyConfig| {
                let mut g = s.sweep.take().unwrap_or_else(SweepGrid::vanilla_tuning);
                if !epochs_grid.is_empty() {
                    g.epochs = epochs_grid.clone();
                }
                if !lr_grid.is_empty() {
                    g.learning_rates = lr_grid.clone();
                }
                if !batch_grid.is_empty() {
                    g.batch_sizes = batch_grid.clone();
                }
                s.sweep = Some(g);
                Ok(())
            };
            experiment(&common, &study, &commands::sweep)
        }
        Command::Cascade(c) => experiment(&c, &keep, &commands::cascade),
        Command::BinaryStudy { common, regimes } => {
            let study = |s: &mut StudyConfig| {
                if !regimes.is_empty() {
                    s.regimes = regimes.clone();
                }
                Ok(())
            };
            experiment(&common, &study, &commands::binary_study)
        }
        Command::Report { runs, out } => commands::collate(&runs)?.write(&out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("readmit: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
