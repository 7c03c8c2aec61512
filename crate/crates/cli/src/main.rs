//! Command-line front end: comparison sweeps, convergence studies, implied
//! Sharpe ratios and Monte Carlo runs from a TOML run configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use merton_lsv::config::{check_orders, RunConfig};
use merton_lsv::runner::run;
use merton_lsv::Error;

/// Exit status for a rejected configuration or command line.
const EXIT_CONFIG: u8 = 2;
/// Exit status for a failure while running or writing output.
const EXIT_RUN: u8 = 1;

#[derive(Parser, Debug)]
#[command(name = "merton-lsv", version, about = "Value function, strategy and implied Sharpe approximations for the Merton problem")]
struct Args {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// CSV output path; `-` writes to stdout. Overrides `[output] path`.
    #[arg(long)]
    out: Option<String>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated orders, e.g. `0,1,2`. Overrides `orders`.
    #[arg(long, value_delimiter = ',')]
    orders: Option<Vec<usize>>,
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

fn manifest_path(csv: &Path) -> PathBuf {
    csv.with_extension("manifest.toml")
}

fn fail(code: u8, e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut cfg = match RunConfig::from_path(&args.config) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, format!("{}: {e}", args.config.display())),
    };
    if let Some(o) = &args.orders {
        match check_orders(o) {
            Ok(o) => cfg.orders = o,
            Err(e) => return fail(EXIT_CONFIG, format!("--orders: {e}")),
        }
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(out) = &args.out {
        cfg.output.path = Some(out.clone());
    }
    if let Some(n) = args.threads {
        if n == 0 {
            return fail(EXIT_CONFIG, "--threads must be at least 1");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(EXIT_RUN, e);
        }
    }
    let output = match run(&cfg) {
        Ok(o) => o,
        Err(e @ (Error::InvalidInput(_) | Error::Config { .. })) => return fail(EXIT_CONFIG, e),
        Err(e) => return fail(EXIT_RUN, e),
    };
    let csv = match output.to_csv() {
        Ok(c) => c,
        Err(e) => return fail(EXIT_RUN, e),
    };
    match cfg.output.path.as_deref() {
        None | Some("-") => print!("{csv}"),
        Some(p) => {
            let path = Path::new(p);
            let manifest = output.manifest(&cfg, Some(p));
            if let Err(e) = std::fs::write(path, csv).and_then(|_| std::fs::write(manifest_path(path), manifest)) {
                return fail(EXIT_RUN, format!("{p}: {e}"));
            }
        }
    }
    let flagged = output.flagged();
    if flagged > 0 {
        eprintln!("note: {flagged} row(s) flagged; see the flag column");
    }
    ExitCode::SUCCESS
}
