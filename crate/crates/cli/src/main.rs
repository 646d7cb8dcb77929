//! `detcert`: verify, falsify and compare IoU bounders from the command line.
//!
//! Exit codes: 0 all rows ROBUST (or no counterexample), 1 some row
//! NONROBUST (or a counterexample was found), 2 otherwise undecided or
//! timed out, 3 and above for errors.

mod query;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use detcert::verifier::{Bounding, Propagation, Status};

use crate::query::{plan, Overrides};
use crate::report::{FalsifyRow, Metadata, Rows, TightnessOutput, VerifyRow};

const EXIT_ERROR: u8 = 3;
const EXIT_USAGE: u8 = 4;

#[derive(Parser)]
#[command(name = "detcert", version, about = "Robustness verification for anchor-based detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify every (image, perturbation, budget) row of a query file.
    Verify(VerifyArgs),
    /// Compare optimal and baseline IoU bounds on random instances.
    Tightness(TightnessArgs),
    /// Search for counterexamples by sampling the perturbation parameter.
    Falsify(FalsifyArgs),
}

#[derive(Args)]
struct Common {
    /// Query file (JSON).
    #[arg(long)]
    query: PathBuf,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV report path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Parallel rows; 1 gives deterministic logs.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Overrides the query file's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Per-row time limit in seconds.
    #[arg(long)]
    timeout: Option<f64>,
    #[arg(long, value_parser = parse_bounding)]
    bounding: Option<Bounding>,
    #[arg(long, value_parser = parse_propagation)]
    propagation: Option<Propagation>,
    #[arg(long)]
    max_depth: Option<usize>,
    /// Write null wall times so reports are byte-reproducible.
    #[arg(long)]
    omit_timing: bool,
    /// Include the per-branch log in the JSON report.
    #[arg(long)]
    branch_log: bool,
}

#[derive(Args)]
struct TightnessArgs {
    /// Number of random instances.
    #[arg(long, default_value_t = 1000, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Smallest offset half-width.
    #[arg(long, default_value_t = 0.0)]
    min_width: f64,
    /// Largest offset half-width.
    #[arg(long, default_value_t = 1.0)]
    max_width: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct FalsifyArgs {
    #[command(flatten)]
    common: Common,
    /// Samples per row, endpoints included.
    #[arg(long, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    n: usize,
}

fn parse_bounding(s: &str) -> Result<Bounding, String> {
    match s {
        "optimal" => Ok(Bounding::Optimal),
        "baseline" => Ok(Bounding::Baseline),
        _ => Err(format!("expected `optimal` or `baseline`, got `{s}`")),
    }
}

fn parse_propagation(s: &str) -> Result<Propagation, String> {
    match s {
        "ibp" => Ok(Propagation::Ibp),
        "backsub" => Ok(Propagation::Backsub),
        _ => Err(format!("expected `ibp` or `backsub`, got `{s}`")),
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    ensure!(workers >= 1, "--workers must be at least 1");
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("starting worker pool")
}

fn verify(args: VerifyArgs) -> Result<u8> {
    let c = &args.common;
    let overrides = Overrides {
        seed: c.seed,
        timeout: args.timeout,
        bounding: args.bounding,
        propagation: args.propagation,
        max_depth: args.max_depth,
    };
    let plan = plan(&c.query, &overrides)?;
    let results = pool(c.workers)?.install(|| {
        use rayon::prelude::*;
        plan.rows
            .par_iter()
            .map(|row| detcert::verify(&row.query).map(|v| (row, v)))
            .collect::<detcert::Result<Vec<_>>>()
    })?;

    let rows: Vec<VerifyRow> = results
        .iter()
        .map(|(row, v)| VerifyRow::new(row, v, args.omit_timing, args.branch_log))
        .collect();
    for r in &rows {
        println!("{}", r.summary());
    }
    let meta = Metadata::new(plan.seed);
    if let Some(out) = &c.out {
        report::write_json(out, &meta, &Rows { rows: &rows })?;
    }
    if let Some(csv) = &c.csv {
        report::write_csv(csv, rows.iter().map(VerifyRow::flat))?;
    }
    let statuses: Vec<Status> = results.iter().map(|(_, v)| v.status).collect();
    Ok(if statuses.contains(&Status::Nonrobust) {
        1
    } else if statuses.contains(&Status::Unknown) {
        2
    } else {
        0
    })
}

fn falsify(args: FalsifyArgs) -> Result<u8> {
    let c = &args.common;
    let overrides = Overrides {
        seed: c.seed,
        ..Overrides::default()
    };
    let plan = plan(&c.query, &overrides)?;
    let seed = plan.seed;
    let results = pool(c.workers)?.install(|| {
        use rayon::prelude::*;
        plan.rows
            .par_iter()
            .map(|row| detcert::oracle::falsify(&row.query, args.n, seed).map(|cex| (row, cex)))
            .collect::<detcert::Result<Vec<_>>>()
    })?;
    let rows: Vec<FalsifyRow> = results.iter().map(|(row, cex)| FalsifyRow::new(row, cex.as_ref())).collect();
    for r in &rows {
        println!("{}", r.summary());
    }
    if let Some(out) = &c.out {
        report::write_json(out, &Metadata::new(seed), &Rows { rows: &rows })?;
    }
    if let Some(csv) = &c.csv {
        report::write_csv(csv, rows.iter().map(FalsifyRow::flat))?;
    }
    Ok(if results.iter().any(|(_, c)| c.is_some()) { 1 } else { 0 })
}

fn tightness(args: TightnessArgs) -> Result<u8> {
    let rep = detcert::tightness::run_tightness(args.n, args.seed, (args.min_width, args.max_width))?;
    println!("{:<14} {:>8} {:>16}", "baseline width", "count", "improvement %");
    for b in &rep.buckets {
        println!(
            "{:<14} {:>8} {:>16.2}",
            format!("[{:.2}, {:.2})", b.range.0, b.range.1),
            b.count,
            b.mean_improvement_pct
        );
    }
    println!("dominance violations: {}", rep.dominance_violations);
    let out = TightnessOutput::new(&rep);
    if let Some(path) = &args.out {
        report::write_json(path, &Metadata::new(args.seed), &out)?;
    }
    if let Some(path) = &args.csv {
        report::write_csv(path, out.rows.iter().cloned())?;
    }
    Ok(if rep.dominance_violations == 0 { 0 } else { 1 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Verify(a) => verify(a),
        Command::Tightness(a) => tightness(a),
        Command::Falsify(a) => falsify(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
