use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use meanfield_cli::{report, run_config, Failure, RunArgs, EXIT_OK};

#[derive(Parser)]
#[command(name = "meanfield", version, about = "Lattice experiments on the mean-field limit of interacting bosons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment described by a TOML config.
    Run(RunCmd),
    /// Merge the distance tables of convergence runs and refit.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Write the merged table, fits and flags here as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunCmd {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Largest dimension handed to dense oracles and reductions.
    #[arg(long, default_value_t = meanfield::propagate::DEFAULT_DENSE_CAP)]
    dense_cap: usize,
    #[arg(long = "assert", overrides_with = "no_assert")]
    assert: bool,
    /// Record assertion outcomes without failing the run.
    #[arg(long = "no-assert", overrides_with = "assert")]
    no_assert: bool,
}

fn run(cmd: RunCmd) -> i32 {
    let workers = cmd.workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let args = RunArgs {
        config: cmd.config,
        out: cmd.out,
        workers,
        seed: cmd.seed,
        dense_cap: cmd.dense_cap,
        assert: !cmd.no_assert,
    };
    match run_config(&args) {
        Ok(done) => {
            for c in &done.outcome.checks {
                println!("{} {}: {}", if c.passed { "ok" } else { "FAILED" }, c.name, c.detail);
            }
            println!("{}", done.dir.display());
            EXIT_OK
        }
        Err((dir, failure)) => {
            if let Some(dir) = dir {
                println!("{}", dir.display());
            }
            eprintln!("error: {failure}");
            failure.exit_code()
        }
    }
}

fn print_merged(m: &report::Merged) {
    println!("n,t,distance");
    for (n, t, d) in &m.rows {
        println!("{n},{t},{d}");
    }
    println!();
    println!("t,slope,residual,n_points,n_excluded,notice");
    for f in &m.fits {
        match &f.fit {
            Some(fit) => println!("{},{},{},{},{},", f.t, fit.slope, fit.residual, fit.n_points, fit.excluded.len()),
            None => println!("{},,,0,0,{}", f.t, f.notice.as_deref().unwrap_or("")),
        }
    }
    for (dir, why) in &m.flagged {
        eprintln!("flagged {}: {why}", dir.display());
    }
}

fn report_cmd(dirs: Vec<PathBuf>, out: Option<PathBuf>) -> i32 {
    match report::report(&dirs) {
        Ok(m) => {
            print_merged(&m);
            if let Some(path) = out {
                let text = serde_json::to_string_pretty(&m).expect("merged report serializes");
                if let Err(e) = std::fs::write(&path, text + "\n") {
                    let f = Failure::Io(e);
                    eprintln!("error: {f}");
                    return f.exit_code();
                }
            }
            EXIT_OK
        }
        Err(e) => {
            let f = Failure::Report(e);
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(cmd) => run(cmd),
        Command::Report { dirs, out } => report_cmd(dirs, out),
    };
    ExitCode::from(code as u8)
}
