//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::afem::{
    fit_rate, relative_error_at, run_afem_with, AfemConfig, AfemRun, ConvergenceRecord,
    RateQuantity,
};
use crate::benchmarks::Benchmark;
use crate::error::{Error, Result};
use crate::io::{
    flux_rows, topology_dump, write_convergence_csv, write_csv, write_json, write_vtk_file,
    IndicatorRow, Rates, RunSummary, SolutionSummary,
};
use crate::verify;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable bounding the worker thread count.
pub const THREADS_VAR: &str = "QUADFLUX_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "quadflux",
    version,
    about = "Adaptive Q1 finite elements with H(div) flux recovery on quadtrees"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the adaptive loop on a benchmark.
    Run(RunArgs),
    /// Run the property suite.
    Verify(VerifyArgs),
    /// Compare relative errors of capped and uncapped irregularity.
    CompareIrregularity(CompareArgs),
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// lshape, wavefront, kellogg or manufactured.
    #[arg(long)]
    pub benchmark: Option<String>,
    /// Dörfler parameter.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Hanging nodes allowed per edge; 0 means unbounded.
    #[arg(long)]
    pub cap: Option<usize>,
    /// Relative energy error at which to stop.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_dofs: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write `mesh_####.vtk` every k iterations; 0 disables snapshots.
    #[arg(long)]
    pub vtk_every: Option<usize>,
    /// Write per-iteration indicator and flux CSVs.
    #[arg(long)]
    pub debug: bool,
    /// JSON file with any of the above; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 20240601)]
    pub seed: u64,
    /// Also write the results as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, default_value = "wavefront")]
    pub benchmark: String,
    /// Comma-separated caps; 0 means unbounded.
    #[arg(long, value_delimiter = ',', default_value = "1,0")]
    pub caps: Vec<usize>,
    /// DoF count at which errors are compared.
    #[arg(long, default_value_t = 1000)]
    pub dofs: usize,
    #[arg(long, default_value_t = 0.3)]
    pub theta: f64,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Options of `run` as read from a JSON configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFileConfig {
    pub benchmark: Option<String>,
    pub theta: Option<f64>,
    pub cap: Option<usize>,
    pub tol: Option<f64>,
    pub max_dofs: Option<usize>,
    pub max_iterations: Option<usize>,
    pub out: Option<PathBuf>,
    pub vtk_every: Option<usize>,
    pub debug: Option<bool>,
}

/// Fully resolved `run` options.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub benchmark: Benchmark,
    pub config: AfemConfig,
    pub out: PathBuf,
    pub vtk_every: usize,
    pub debug: bool,
}

fn cap_from_flag(c: usize) -> Option<usize> {
    (c > 0).then_some(c)
}

impl RunArgs {
    /// Merges the configuration file (if any) under the flags.
    pub fn resolve(&self) -> Result<RunOptions> {
        let file: RunFileConfig = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?
            }
            None => RunFileConfig::default(),
        };
        let name = self
            .benchmark
            .clone()
            .or(file.benchmark)
            .ok_or_else(|| Error::InvalidConfig("--benchmark is required".into()))?;
        let benchmark: Benchmark = name.parse()?;
        let defaults = AfemConfig::default();
        let config = AfemConfig {
            theta: self.theta.or(file.theta).unwrap_or(defaults.theta),
            stop_relative_error: self
                .tol
                .or(file.tol)
                .unwrap_or(benchmark.stop_relative_error()),
            max_iterations: self
                .max_iterations
                .or(file.max_iterations)
                .unwrap_or(defaults.max_iterations),
            max_dofs: self.max_dofs.or(file.max_dofs).unwrap_or(defaults.max_dofs),
            cap: self.cap.or(file.cap).and_then(cap_from_flag),
            energy_norm: None,
        };
        config.validate()?;
        Ok(RunOptions {
            benchmark,
            config,
            out: self
                .out
                .clone()
                .or(file.out)
                .unwrap_or_else(|| PathBuf::from("out")),
            vtk_every: self.vtk_every.or(file.vtk_every).unwrap_or(0),
            debug: self.debug || file.debug.unwrap_or(false),
        })
    }
}

/// Rates over the asymptotic window, `None` when they cannot be fitted.
pub fn fitted_rates(records: &[ConvergenceRecord]) -> Rates {
    Rates {
        energy_error: fit_rate(records, RateQuantity::EnergyError).ok(),
        eta_hat: fit_rate(records, RateQuantity::EtaHat).ok(),
        eta_res: fit_rate(records, RateQuantity::EtaRes).ok(),
    }
}

pub fn summarize(
    benchmark: Benchmark,
    config: &AfemConfig,
    records: &[ConvergenceRecord],
    outcome: std::result::Result<&AfemRun, &Error>,
) -> RunSummary {
    let last = records.last();
    let energy_norm = outcome
        .ok()
        .and_then(|r| r.energy_norm)
        .or(config.energy_norm);
    RunSummary {
        benchmark: benchmark.name().to_string(),
        config: config.clone(),
        stop: outcome.ok().map(|r| r.stop),
        error: outcome.err().map(|e| e.to_string()),
        energy_norm,
        iterations: records.len(),
        final_ndof: last.map_or(0, |r| r.ndof),
        final_relative_error: last.zip(energy_norm).and_then(|(r, n)| r.relative_error(n)),
        rates: fitted_rates(records),
        final_eff_hat: last.and_then(|r| r.eff_hat),
        final_eff_res: last.and_then(|r| r.eff_res),
        max_efficiency_ratio: records
            .iter()
            .map(|r| r.max_efficiency_ratio)
            .fold(0.0, f64::max),
        records: records.to_vec(),
    }
}

fn write_iteration_files(
    dir: &Path,
    opts: &RunOptions,
    st: &crate::afem::IterationState,
) -> Result<()> {
    let it = st.record.iter;
    if opts.vtk_every > 0 && it.is_multiple_of(opts.vtk_every) {
        write_vtk_file(
            &dir.join(format!("mesh_{it:04}.vtk")),
            st.mesh,
            Some(&st.solution.values),
        )?;
    }
    if opts.debug {
        write_csv(
            &dir.join(format!("indicators_{it:04}.csv")),
            st.indicators.iter().map(IndicatorRow::from),
        )?;
        let (edges, leaves) = flux_rows(st.topology, st.flux);
        write_csv(&dir.join(format!("flux_edges_{it:04}.csv")), edges)?;
        write_csv(&dir.join(format!("flux_leaves_{it:04}.csv")), leaves)?;
        write_json(
            &dir.join(format!("topology_{it:04}.json")),
            &topology_dump(st.mesh, st.topology),
        )?;
        write_json(
            &dir.join(format!("solution_{it:04}.json")),
            &SolutionSummary {
                ndof_free: st.solution.ndof_free,
                residual: st.solution.residual,
                energy_error: st.record.energy_error,
            },
        )?;
    }
    Ok(())
}

/// Runs a benchmark and writes `convergence.csv` and `run_summary.json`
/// (also after a numerical failure, with the completed iterations).
pub fn run_benchmark(opts: &RunOptions) -> Result<RunSummary> {
    std::fs::create_dir_all(&opts.out)?;
    let b = opts.benchmark;
    let mut config = opts.config.clone();
    config.energy_norm = Some(b.energy_norm()?);
    let outcome = run_afem_with(&b.problem(), b.initial_mesh(), &config, |st| {
        write_iteration_files(&opts.out, opts, st)
    });
    let (records, result) = match &outcome {
        Ok(run) => (run.records.clone(), Ok(run)),
        Err(f) => (f.records.clone(), Err(&f.error)),
    };
    write_convergence_csv(&opts.out.join("convergence.csv"), &records)?;
    let summary = summarize(b, &config, &records, result);
    write_json(&opts.out.join("run_summary.json"), &summary)?;
    match outcome {
        Ok(_) => Ok(summary),
        Err(f) => Err(f.error),
    }
}

/// One line of the capped/uncapped comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    /// 0 for unbounded.
    pub cap: usize,
    pub iter: usize,
    pub ndof: usize,
    pub relative_error: f64,
    pub max_irregularity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub benchmark: String,
    pub dofs: usize,
    /// `(cap, relative error at dofs)`.
    pub at_dofs: Vec<(usize, Option<f64>)>,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_irregularity(
    benchmark: Benchmark,
    caps: &[usize],
    dofs: usize,
    theta: f64,
    tol: Option<f64>,
) -> Result<Comparison> {
    let norm = benchmark.energy_norm()?;
    let mut rows = Vec::new();
    let mut at_dofs = Vec::new();
    for &cap in caps {
        let config = AfemConfig {
            theta,
            stop_relative_error: tol.unwrap_or(benchmark.stop_relative_error()),
            cap: cap_from_flag(cap),
            energy_norm: Some(norm),
            ..AfemConfig::default()
        };
        let run = run_afem_with(
            &benchmark.problem(),
            benchmark.initial_mesh(),
            &config,
            |_| Ok(()),
        )
        .map_err(|f| f.error)?;
        for r in &run.records {
            rows.push(ComparisonRow {
                cap,
                iter: r.iter,
                ndof: r.ndof,
                relative_error: r.relative_error(norm).unwrap_or(f64::NAN),
                max_irregularity: r.max_irregularity,
            });
        }
        at_dofs.push((cap, relative_error_at(&run.records, norm, dofs)));
    }
    Ok(Comparison {
        benchmark: benchmark.name().to_string(),
        dofs,
        at_dofs,
        rows,
    })
}

fn cap_label(cap: usize) -> String {
    if cap == 0 {
        "unbounded".into()
    } else {
        cap.to_string()
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "{THREADS_VAR} must be a positive integer, got '{v}'"
        ))
    })?;
    // A pool may already exist when embedded; the first one wins.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) => EXIT_USAGE,
        _ => EXIT_NUMERICAL,
    }
}

fn print_rate(label: &str, r: Option<f64>) {
    match r {
        Some(r) => println!("  rate {label:<12} {r:.3}"),
        None => println!("  rate {label:<12} n/a"),
    }
}

fn cmd_run(args: &RunArgs) -> i32 {
    let opts = match args.resolve() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match run_benchmark(&opts) {
        Ok(s) => {
            println!(
                "{}: {} iterations, {} free DoFs, relative error {:.4}, stop {:?}",
                s.benchmark,
                s.iterations,
                s.final_ndof,
                s.final_relative_error.unwrap_or(f64::NAN),
                s.stop.expect("successful run")
            );
            print_rate("error", s.rates.energy_error);
            print_rate("eta_hat", s.rates.eta_hat);
            print_rate("eta_res", s.rates.eta_res);
            println!(
                "  effectivity  eta_hat {:.3}  eta_res {:.3}",
                s.final_eff_hat.unwrap_or(f64::NAN),
                s.final_eff_res.unwrap_or(f64::NAN)
            );
            println!("  output in {}", opts.out.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn cmd_verify(args: &VerifyArgs) -> i32 {
    let results = match verify::run_all(args.seed) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    for r in &results {
        println!(
            "{} {}: {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    if let Some(p) = &args.json {
        if let Err(e) = write_json(p, &results) {
            eprintln!("error: {e}");
            return EXIT_NUMERICAL;
        }
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_NUMERICAL
    }
}

fn cmd_compare(args: &CompareArgs) -> i32 {
    let b: Benchmark = match args.benchmark.parse() {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    if args.caps.is_empty() || !(args.theta > 0.0 && args.theta < 1.0) {
        eprintln!("error: need at least one cap and theta in (0, 1)");
        return EXIT_USAGE;
    }
    let cmp = match compare_irregularity(b, &args.caps, args.dofs, args.theta, args.tol) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    println!(
        "{:>10} {:>6} {:>8} {:>12} {:>6}",
        "cap", "iter", "ndof", "rel_error", "irreg"
    );
    for r in &cmp.rows {
        println!(
            "{:>10} {:>6} {:>8} {:>12.5} {:>6}",
            cap_label(r.cap),
            r.iter,
            r.ndof,
            r.relative_error,
            r.max_irregularity
        );
    }
    println!("relative error at {} DoFs:", cmp.dofs);
    for (cap, e) in &cmp.at_dofs {
        match e {
            Some(e) => println!("  cap {:>10}: {:.5}", cap_label(*cap), e),
            None => println!("  cap {:>10}: not reached", cap_label(*cap)),
        }
    }
    if let Some(dir) = &args.out {
        let written = std::fs::create_dir_all(dir)
            .map_err(Error::from)
            .and_then(|_| write_csv(&dir.join("comparison.csv"), cmp.rows.iter().copied()))
            .and_then(|_| write_json(&dir.join("comparison.json"), &cmp));
        if let Err(e) = written {
            eprintln!("error: {e}");
            return EXIT_NUMERICAL;
        }
    }
    EXIT_OK
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Verify(a) => cmd_verify(a),
        Command::CompareIrregularity(a) => cmd_compare(a),
    }
}
