//! `msvine`: simulate, select, fit and compare Markov-switching R-vine models.
//!
//! Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "msvine", version, about = "Markov-switching R-vine copula models")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate copula data from a model file or a built-in scenario.
    Simulate(SimulateArgs),
    /// Select a single R-vine (structure and families) for a data set.
    Select(SelectArgs),
    /// Stepwise EM fit of a Markov-switching R-vine.
    FitEm(FitEmArgs),
    /// Metropolis-within-Gibbs posterior sampling started at a fitted model.
    FitBayes(FitBayesArgs),
    /// Rolling-window refits of one or more selection recipes.
    Rolling(RollingArgs),
    /// DIC table for one or more Bayesian runs, best model first.
    Dic(DicArgs),
    /// Regime probabilities and edge table of a fitted model.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct Selection {
    /// Comma-separated family tags (I, N, t, G, G90, SG, G270) or "all".
    /// Repeat to give tree 1, tree 2, ...; the last one covers deeper trees.
    #[arg(long)]
    catalogue: Vec<String>,

    /// Trees above this level are independence.
    #[arg(long)]
    trunc: Option<usize>,

    /// Fit every edge even when its tau is not significant.
    #[arg(long)]
    no_indep_test: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Model JSON; alternative to --scenario.
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    model: Option<PathBuf>,
    /// Built-in two-regime scenario (1 or 2).
    #[arg(long)]
    scenario: Option<usize>,
    /// Number of rows.
    #[arg(long, default_value_t = 800)]
    length: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    selection: Selection,
}

#[derive(Debug, Args)]
struct FitEmArgs {
    #[arg(long)]
    data: PathBuf,
    /// Model JSON whose regimes give structures and families; repeat to
    /// concatenate. Without it the structure is selected from the data.
    #[arg(long)]
    model: Vec<PathBuf>,
    /// Regime count when the structure is selected.
    #[arg(long)]
    regimes: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Relative log-likelihood change that stops the iteration.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[command(flatten)]
    selection: Selection,
}

#[derive(Debug, Args)]
struct FitBayesArgs {
    #[arg(long)]
    data: PathBuf,
    /// Starting model, usually the EM fit.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 20000)]
    iters: usize,
    #[arg(long, default_value_t = 1000)]
    burnin: usize,
    #[arg(long, default_value_t = 5)]
    thin: usize,
    /// Kept draws after evenly spaced sub-sampling (0 keeps all).
    #[arg(long, default_value_t = 1000)]
    keep: usize,
    /// Regime ordering: "tau", "tau:1,2" (trees) or "none".
    #[arg(long, default_value = "tau")]
    ident_stat: String,
    /// Write the chain state here every 1000 iterations.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RollingArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    window: usize,
    /// Recipe `name=TAGS` or `name=TAGS:TRUNC`, e.g. `gauss=N` or `all=all:2`.
    /// Without it one candidate is built from --catalogue and --trunc.
    #[arg(long)]
    candidate: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    selection: Selection,
}

#[derive(Debug, Args)]
struct DicArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory of a fit-bayes run, or its draws.json; repeatable.
    #[arg(long, required = true)]
    model: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Width of the moving average applied to the probabilities.
    #[arg(long, default_value_t = 7)]
    window: usize,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(msvine::Error),
}

impl From<msvine::Error> for Failure {
    fn from(e: msvine::Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 3 })
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Select(a) => commands::select(a),
        Command::FitEm(a) => commands::fit_em(a),
        Command::FitBayes(a) => commands::fit_bayes(a),
        Command::Rolling(a) => commands::rolling(a),
        Command::Dic(a) => commands::dic(a),
        Command::Report(a) => commands::report(a),
    }
}
