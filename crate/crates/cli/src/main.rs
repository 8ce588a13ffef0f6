//! `fluctsel`: command-line driver for the fluctuating-selection experiments.
//!
//! Exit status: 0 on success, 1 on a configuration or I/O error, 2 when
//! `--strict` is set and the run raised warnings.

mod config;
mod experiments;
mod output;

use clap::{Parser, Subcommand};
use config::{load_config, Experiment, Overrides};
use output::{summary_path, Summary};
use std::process::ExitCode;
use std::time::Instant;

const THREADS_VAR: &str = "FLUCTSEL_THREADS";

#[derive(Parser)]
#[command(name = "fluctsel", version, about = "Two-locus mutation-modifier model under fast fluctuating selection")]
#[command(args_conflicts_with_subcommands = true, allow_negative_numbers = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Experiment to run when no subcommand is given
    #[arg(long, value_enum)]
    experiment: Option<Experiment>,

    #[command(flatten)]
    args: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// One path of the pre-limit SDE with its telegraph environment
    #[command(allow_negative_numbers = true)]
    SimulatePrelimit(Overrides),
    /// One path of the limiting diffusion
    #[command(allow_negative_numbers = true)]
    SimulateLimit(Overrides),
    /// Monte Carlo fixation probability of h next to the first-order approximation
    #[command(allow_negative_numbers = true)]
    Fixation(Overrides),
    /// Pre-limit moments against the limit for increasing N
    #[command(allow_negative_numbers = true)]
    Convergence(Overrides),
    /// Formula identities and the symmetry battery
    #[command(allow_negative_numbers = true)]
    Verify(Overrides),
    /// Neutral integrals: closed forms against the coalescent oracle
    #[command(allow_negative_numbers = true)]
    Moments(Overrides),
    /// First moment of one type through the dual process
    #[command(allow_negative_numbers = true)]
    Dual(Overrides),
}

impl Command {
    fn split(self) -> (Experiment, Overrides) {
        match self {
            Command::SimulatePrelimit(o) => (Experiment::SimulatePrelimit, o),
            Command::SimulateLimit(o) => (Experiment::SimulateLimit, o),
            Command::Fixation(o) => (Experiment::Fixation, o),
            Command::Convergence(o) => (Experiment::Convergence, o),
            Command::Verify(o) => (Experiment::Verify, o),
            Command::Moments(o) => (Experiment::Moments, o),
            Command::Dual(o) => (Experiment::Dual, o),
        }
    }
}

fn init_threads() -> Result<usize, String> {
    let requested = match std::env::var(THREADS_VAR) {
        Ok(v) => Some(v.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| format!("{THREADS_VAR}={v:?} is not a positive integer"))?),
        Err(_) => None,
    };
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = requested {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())?;
        }
        Ok(rayon::current_num_threads())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = requested;
        Ok(1)
    }
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (sub, overrides) = match cli.command {
        Some(c) => {
            let (e, o) = c.split();
            (Some(e), o)
        }
        None => (None, cli.args),
    };
    let cfg = match load_config(sub, cli.experiment, &overrides) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let threads = match init_threads() {
        Ok(n) => n,
        Err(e) => return fail(e),
    };

    let start = Instant::now();
    let outcome = match experiments::run(&cfg) {
        Ok(o) => o,
        Err(e) => return fail(e),
    };
    let wall = start.elapsed().as_secs_f64();

    let path = &cfg.output.path;
    if let Err(e) = std::fs::write(path, outcome.table.render(&cfg)) {
        return fail(format!("cannot write {}: {e}", path.display()));
    }
    let summary = Summary {
        experiment: cfg.run.experiment.name(),
        seed: cfg.run.seed,
        results: path,
        wall_time_s: wall,
        threads,
        warnings: &outcome.warnings,
        details: outcome.details,
        config: &cfg,
    };
    let side = summary_path(path);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    if let Err(e) = std::fs::write(&side, text) {
        return fail(format!("cannot write {}: {e}", side.display()));
    }

    if cfg.run.experiment == Experiment::Verify {
        if let Some((p, t)) = summary.details.get("passed").zip(summary.details.get("checks")) {
            println!("verify: {p}/{t} checks passed");
        }
    }
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("wrote {} and {} in {wall:.2}s", path.display(), side.display());

    if cfg.run.strict && !outcome.warnings.is_empty() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}
