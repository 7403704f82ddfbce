//! Batch front end: `simulate`, `fit`, `summarize` and `benchmark`.
//!
//! Every subcommand reads only the files it is given and writes only under
//! its `--out` directory. Errors map to exit statuses through [`exit_code`].

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use flfosr::basis::{self, OrthoBasis};
use flfosr::data::{fingerprint_bytes, LongitudinalDataset};
use flfosr::diagnostics::{self, EffectTruth, EfficiencyReport};
use flfosr::io;
use flfosr::sampler::{basis_fingerprint, precompute, run_chain, PosteriorDraws, SamplerConfig, SamplerKind, Timing};
use flfosr::simulate::simulate_dataset;
use flfosr::{Error, ErrorKind, Result, Scalar};

use config::{
    require_dir, require_file, BenchmarkArgs, BenchmarkSettings, Cli, Command, FitArgs, FitSettings, Precision,
    SimulateArgs, SummarizeArgs,
};

pub const EXIT_INVALID_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub const BENCHMARK_HEADER: [&str; 6] = ["n", "m", "L", "s1000", "releff", "seconds"];
const FAILURE_HEADER: [&str; 5] = ["n", "m", "L", "replicate", "error"];

pub fn exit_code(err: &Error) -> i32 {
    match err.kind() {
        ErrorKind::InvalidInput => EXIT_INVALID_INPUT,
        ErrorKind::Numerical => EXIT_NUMERICAL,
        ErrorKind::Io => EXIT_IO,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a).map(|_| ()),
        Command::Summarize(a) => cmd_summarize(&a),
        Command::Benchmark(a) => cmd_benchmark(&a).map(|_| ()),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn file_fingerprint(path: &Path) -> Result<String> {
    fs::read(path).map(|b| fingerprint_bytes(&b)).map_err(|e| io_err(path, e))
}

/// Writes `curves.csv`, `covariates.csv`, `grid.csv`, `truth.csv` and
/// `design.json`.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let design = args.resolve()?;
    let sim = simulate_dataset(&design)?;
    let out = &args.out;
    create_dir(out)?;
    io::write_curves(&out.join("curves.csv"), &sim.dataset)?;
    io::write_covariates(&out.join("covariates.csv"), &sim.dataset)?;
    io::write_grid(&out.join("grid.csv"), &sim.dataset.grid)?;
    io::write_truth(&out.join("truth.csv"), &sim.effect_truth(), &sim.dataset.covariate_names)?;
    io::save_json(&out.join("design.json"), &design)
}

/// Posterior summaries and diagnostics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub sampler: SamplerKind,
    pub n_draws: usize,
    pub relative_efficiency: f64,
    pub s1000: f64,
    pub burn_seconds: f64,
    pub sample_seconds: f64,
    pub degenerate_cells: usize,
    pub clamp_events: u64,
    pub accuracy: Option<AccuracySummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub rmse: f64,
    pub mciw: f64,
    pub ecp: f64,
}

/// Everything needed to repeat a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: String,
    pub version: String,
    pub settings: FitSettings,
    pub input_fingerprints: Vec<(PathBuf, String)>,
    pub dataset_fingerprint: String,
    pub basis_fingerprint: String,
    pub covariate_names: Vec<String>,
    pub timing: Timing,
    pub quantile_rule: String,
    pub ess_rule: String,
}

pub const RUN_META_FILE: &str = "meta.json";
pub const BASIS_DIR: &str = "basis";

/// Fits a dataset and writes `draws/`, `basis/`, `summary.csv`,
/// `efficiency.csv`, `report.json` and `meta.json`; with a truth file also
/// `accuracy.csv`.
pub fn cmd_fit(args: &FitArgs) -> Result<FitReport> {
    let settings = args.resolve()?;
    fit_with_settings(&settings)
}

pub fn fit_with_settings(settings: &FitSettings) -> Result<FitReport> {
    let curves = settings.curves.as_deref().expect("resolved");
    let covariates = settings.covariates.as_deref().expect("resolved");
    let out = settings.out.as_deref().expect("resolved");
    let mut inputs = vec![curves, covariates];
    inputs.extend(settings.grid.as_deref());
    inputs.extend(settings.truth.as_deref());
    for p in &inputs {
        require_file(p)?;
    }
    let input_fingerprints = inputs
        .iter()
        .map(|p| Ok((p.to_path_buf(), file_fingerprint(p)?)))
        .collect::<Result<Vec<_>>>()?;

    let ds: LongitudinalDataset<f64> = io::read_dataset(curves, covariates, settings.grid.as_deref())?;
    let truth = settings.truth.as_deref().map(io::read_truth).transpose()?;
    let b = &settings.basis;
    let ob = basis::default_basis(&ds.grid, b.k0, b.degree, b.penalty_order, b.eig_tol)?;

    create_dir(out)?;
    io::write_basis(&out.join(BASIS_DIR), &ob)?;
    let names = ds.covariate_names.clone();
    let (report, timing, bfp) = match settings.precision {
        Precision::F64 => fit_typed(&ds, &ob, settings, truth.as_ref(), out)?,
        Precision::F32 => fit_typed(&ds.cast::<f32>(), &ob.cast::<f32>(), settings, truth.as_ref(), out)?,
    };

    let meta = RunMeta {
        command: "fit".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        settings: settings.clone(),
        input_fingerprints,
        dataset_fingerprint: ds.fingerprint(),
        basis_fingerprint: bfp,
        covariate_names: names,
        timing,
        quantile_rule: io::QUANTILE_RULE.into(),
        ess_rule: io::ESS_RULE.into(),
    };
    io::save_json(&out.join(RUN_META_FILE), &meta)?;
    Ok(report)
}

fn fit_typed<T: Scalar>(
    ds: &LongitudinalDataset<T>,
    ob: &OrthoBasis<T>,
    settings: &FitSettings,
    truth: Option<&EffectTruth>,
    out: &Path,
) -> Result<(FitReport, Timing, String)> {
    let ctx = precompute(ds, ob)?;
    let draws = run_chain(&ctx, &settings.sampler, settings.sampler_kind)?;
    let run = json!({ "settings": settings, "covariate_names": ds.covariate_names });
    io::write_draws(&io::draws_dir(out), &draws, run)?;
    let report = write_reports(&draws, ob, &ds.covariate_names, truth, out)?;
    Ok((report, draws.timing, basis_fingerprint(ob)))
}

fn write_reports<T: Scalar>(
    draws: &PosteriorDraws<T>,
    ob: &OrthoBasis<T>,
    names: &[String],
    truth: Option<&EffectTruth>,
    out: &Path,
) -> Result<FitReport> {
    let rows = diagnostics::summarize(draws, ob)?;
    io::write_summary(&out.join("summary.csv"), &rows, names)?;
    let eff = diagnostics::efficiency_report(draws, ob)?;
    io::write_efficiency(&out.join("efficiency.csv"), &eff, names)?;
    let accuracy = match truth {
        Some(t) => {
            let acc = diagnostics::accuracy_report(draws, ob, t)?;
            io::write_accuracy(&out.join("accuracy.csv"), &acc, t, names)?;
            Some(AccuracySummary { rmse: acc.rmse, mciw: acc.mciw, ecp: acc.ecp })
        }
        None => None,
    };
    let report = fit_report(draws, &eff, accuracy);
    io::save_json(&out.join("report.json"), &report)?;
    Ok(report)
}

fn fit_report<T: Scalar>(draws: &PosteriorDraws<T>, eff: &EfficiencyReport, accuracy: Option<AccuracySummary>) -> FitReport {
    FitReport {
        sampler: draws.sampler,
        n_draws: draws.len(),
        relative_efficiency: eff.relative_efficiency,
        s1000: eff.s1000,
        burn_seconds: eff.burn_seconds,
        sample_seconds: eff.sample_seconds,
        degenerate_cells: eff.cells.iter().filter(|c| c.degenerate).count(),
        clamp_events: draws.clamp_events,
        accuracy,
    }
}

/// Recomputes the reports of a finished fit from its `draws/` and `basis/`.
pub fn cmd_summarize(args: &SummarizeArgs) -> Result<()> {
    let fit_dir = &args.draws;
    require_dir(fit_dir)?;
    let meta_path = fit_dir.join(RUN_META_FILE);
    require_file(&meta_path)?;
    let meta: RunMeta = io::load_json(&meta_path)?;
    let truth = match &args.truth {
        Some(p) => {
            require_file(p)?;
            Some(io::read_truth(p)?)
        }
        None => None,
    };
    let (draws, _) = io::read_draws(&io::draws_dir(fit_dir))?;
    let ob = io::read_basis(&fit_dir.join(BASIS_DIR))?;
    create_dir(&args.out)?;
    match meta.settings.precision {
        // Draws were stored from f32 values, so summaries in f32 match the fit.
        Precision::F32 => {
            let d32 = draws.cast::<f32>();
            write_reports(&d32, &ob.cast::<f32>(), &meta.covariate_names, truth.as_ref(), &args.out)?;
        }
        Precision::F64 => {
            write_reports(&draws, &ob, &meta.covariate_names, truth.as_ref(), &args.out)?;
        }
    }
    Ok(())
}

/// One row of `benchmark.csv`, averaged over replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub s1000: f64,
    pub releff: f64,
    /// Burn-in plus sampling seconds of the fastest repeat.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkFailure {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchmarkOutcome {
    pub rows: Vec<BenchmarkRow>,
    pub failures: Vec<BenchmarkFailure>,
}

/// Simulates, fits and times each cell in turn, writing `benchmark.csv`,
/// `benchmark_failures.csv` and `meta.json`. A failing cell is recorded and
/// the run moves on.
pub fn cmd_benchmark(args: &BenchmarkArgs) -> Result<BenchmarkOutcome> {
    let settings = args.resolve()?;
    let outcome = run_benchmark(&settings);
    let out = settings.out.as_deref().expect("resolved");
    create_dir(out)?;
    write_table(&out.join("benchmark.csv"), &BENCHMARK_HEADER, &outcome.rows)?;
    write_table(&out.join("benchmark_failures.csv"), &FAILURE_HEADER, &outcome.failures)?;
    let meta = json!({
        "command": "benchmark",
        "version": env!("CARGO_PKG_VERSION"),
        "settings": settings,
        "ess_rule": io::ESS_RULE,
    });
    io::save_json(&out.join(RUN_META_FILE), &meta)?;
    Ok(outcome)
}

/// Dataset seed for replicate `r`: the design seed plus `r`. The sampler
/// seed is offset the same way.
pub fn run_benchmark(settings: &BenchmarkSettings) -> BenchmarkOutcome {
    let mut outcome = BenchmarkOutcome::default();
    for cell in &settings.cells {
        let mut acc = (0.0, 0.0, 0.0);
        let mut ok = 0usize;
        for r in 0..settings.replicates {
            match benchmark_replicate(settings, cell, r) {
                Ok((s1000, releff, seconds)) => {
                    acc = (acc.0 + s1000, acc.1 + releff, acc.2 + seconds);
                    ok += 1;
                }
                Err(e) => outcome.failures.push(BenchmarkFailure {
                    n: cell.n,
                    m: cell.m,
                    l: cell.l,
                    replicate: r,
                    error: e.to_string(),
                }),
            }
        }
        if ok > 0 {
            let k = ok as f64;
            outcome.rows.push(BenchmarkRow {
                n: cell.n,
                m: cell.m,
                l: cell.l,
                s1000: acc.0 / k,
                releff: acc.1 / k,
                seconds: acc.2 / k,
            });
        }
    }
    outcome
}

fn benchmark_replicate(settings: &BenchmarkSettings, cell: &config::Cell, r: usize) -> Result<(f64, f64, f64)> {
    let design = flfosr::simulate::SimulationDesign {
        n: cell.n,
        m: cell.m,
        l: cell.l,
        seed: settings.design.seed.wrapping_add(r as u64),
        ..settings.design.clone()
    };
    let sim = simulate_dataset(&design)?;
    let ctx = precompute(&sim.dataset, &sim.basis)?;
    let config = SamplerConfig {
        seed: settings.sampler.seed.wrapping_add(r as u64),
        ..settings.sampler.clone()
    };
    // The chain is deterministic, so repeats differ only in timing.
    let mut best: Option<PosteriorDraws<f64>> = None;
    for _ in 0..settings.repeats {
        let draws = run_chain(&ctx, &config, settings.sampler_kind)?;
        let total = |d: &PosteriorDraws<f64>| d.timing.burn_seconds + d.timing.sample_seconds;
        if best.as_ref().is_none_or(|b| total(&draws) < total(b)) {
            best = Some(draws);
        }
    }
    let draws = best.expect("repeats >= 1");
    let eff = diagnostics::efficiency_report(&draws, &sim.basis)?;
    Ok((eff.s1000, eff.relative_efficiency, eff.burn_seconds + eff.sample_seconds))
}

fn write_table<R: Serialize>(path: &Path, header: &[&str], rows: &[R]) -> Result<()> {
    let fmt = |e: csv::Error| Error::Format { path: path.to_path_buf(), message: e.to_string() };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(fmt)?;
    w.write_record(header).map_err(fmt)?;
    for r in rows {
        w.serialize(r).map_err(fmt)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}
