//! Config-driven runner for the meanfield experiments.

pub mod config;
pub mod output;
pub mod report;
pub mod run;

use std::fmt;
use std::path::{Path, PathBuf};

use meanfield::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

#[derive(Debug)]
pub enum Failure {
    Config(config::ConfigError),
    Core(Error),
    Io(std::io::Error),
    Report(report::ReportError),
    /// Names of the failing assertions.
    Assertion(Vec<String>),
    Budget(Vec<String>),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) | Failure::Io(_) | Failure::Report(_) => EXIT_CONFIG,
            Failure::Assertion(_) => EXIT_ASSERTION,
            Failure::Budget(_) => EXIT_BUDGET,
            Failure::Core(e) => match e {
                Error::Config(_) | Error::Usage(_) | Error::Format(_) | Error::Attractive(_) | Error::Io(_) => EXIT_CONFIG,
                Error::Truncation { .. } | Error::DenseCap { .. } | Error::Budget(_) => EXIT_BUDGET,
                Error::NotHermitian { .. } | Error::Convergence(_) | Error::Invariant(_) | Error::Insufficient(_) => EXIT_ASSERTION,
            },
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "invalid config: {e}"),
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Io(e) => write!(f, "i/o error: {e}"),
            Failure::Report(e) => write!(f, "report refused: {e}"),
            Failure::Assertion(names) => write!(f, "assertion failed: {}", names.join(", ")),
            Failure::Budget(items) => write!(f, "resource budget exceeded: {}", items.join("; ")),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

#[derive(Clone, Debug)]
pub struct RunArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    pub workers: usize,
    pub seed: Option<u64>,
    pub dense_cap: usize,
    pub assert: bool,
}

#[derive(Debug)]
pub struct Completed {
    pub dir: PathBuf,
    pub outcome: run::Outcome,
}

/// Parses, runs and writes one experiment. Artifacts are written before an
/// assertion or budget failure is reported.
pub fn run_config(args: &RunArgs) -> Result<Completed, (Option<PathBuf>, Failure)> {
    let cfg = config::load(&args.config).map_err(|e| (None, Failure::Config(e)))?;
    run_parsed(&cfg, &args.out, args)
}

pub fn run_parsed(cfg: &config::Config, out: &Path, args: &RunArgs) -> Result<Completed, (Option<PathBuf>, Failure)> {
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let settings = run::RunSettings { seed, dense_cap: args.dense_cap };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers.max(1))
        .build()
        .map_err(|e| (None, Failure::Io(std::io::Error::other(e))))?;
    let outcome = pool.install(|| run::execute(cfg, &settings)).map_err(|e| (None, Failure::Core(e)))?;
    let meta = output::RunMeta { seed, workers: args.workers.max(1), dense_cap: args.dense_cap };
    let dir = output::write_run(out, cfg, &meta, &outcome).map_err(|e| (None, Failure::Io(e)))?;
    if !outcome.budget.is_empty() {
        return Err((Some(dir), Failure::Budget(outcome.budget.clone())));
    }
    let failed: Vec<String> = outcome.checks.iter().filter(|c| !c.passed).map(|c| format!("{} ({})", c.name, c.detail)).collect();
    if args.assert && !failed.is_empty() {
        return Err((Some(dir), Failure::Assertion(failed)));
    }
    Ok(Completed { dir, outcome })
}
