//! Command-line arguments and the JSON configs they override.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use flfosr::basis;
use flfosr::sampler::{AlphaScheme, SamplerConfig, SamplerKind};
use flfosr::simulate::{CovariateLaw, SimulationDesign};
use flfosr::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "flfosr", version, about = "Blocked Gibbs sampling for longitudinal function-on-scalar regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset and its true effect functions.
    Simulate(SimulateArgs),
    /// Fit the model to curve and covariate files.
    Fit(FitArgs),
    /// Recompute summaries from a saved fit.
    Summarize(SummarizeArgs),
    /// Simulate, fit and time a grid of (n, m, L) cells.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Flfosr,
    Naive,
}

impl From<SamplerArg> for SamplerKind {
    fn from(s: SamplerArg) -> Self {
        match s {
            SamplerArg::Flfosr => SamplerKind::Flfosr,
            SamplerArg::Naive => SamplerKind::Naive,
        }
    }
}

/// Basis options shared by `fit` and `benchmark`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisSettings {
    pub k0: usize,
    pub degree: usize,
    pub penalty_order: usize,
    pub eig_tol: f64,
}

impl Default for BasisSettings {
    fn default() -> Self {
        Self {
            k0: basis::DEFAULT_K0,
            degree: basis::DEFAULT_DEGREE,
            penalty_order: basis::DEFAULT_PENALTY_ORDER,
            eig_tol: basis::DEFAULT_EIG_TOL,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct BasisArgs {
    #[arg(long = "K0")]
    pub k0: Option<usize>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long = "penalty-order")]
    pub penalty_order: Option<usize>,
    #[arg(long = "eig-tol")]
    pub eig_tol: Option<f64>,
}

impl BasisArgs {
    fn apply(&self, s: &mut BasisSettings) {
        if let Some(v) = self.k0 {
            s.k0 = v;
        }
        if let Some(v) = self.degree {
            s.degree = v;
        }
        if let Some(v) = self.penalty_order {
            s.penalty_order = v;
        }
        if let Some(v) = self.eig_tol {
            s.eig_tol = v;
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SamplerArgs {
    /// Retained draws.
    #[arg(long = "N")]
    pub n_keep: Option<usize>,
    #[arg(long)]
    pub burn: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub sampler: Option<SamplerArg>,
    #[arg(long = "parallel-k")]
    pub parallel_k: bool,
}

impl SamplerArgs {
    fn apply(&self, s: &mut SamplerConfig, kind: &mut SamplerKind) {
        if let Some(v) = self.n_keep {
            s.n_keep = v;
        }
        if let Some(v) = self.burn {
            s.n_burn = v;
        }
        if let Some(v) = self.thin {
            s.thin = v;
        }
        if let Some(v) = self.a {
            s.a = v;
        }
        if let Some(v) = self.b {
            s.b = v;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.sampler {
            *kind = v.into();
        }
        if self.parallel_k {
            s.parallel_k = true;
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long = "L")]
    pub l: Option<usize>,
    #[arg(long = "T")]
    pub t: Option<usize>,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[arg(long = "sigma2-alpha")]
    pub sigma2_alpha: Option<f64>,
    #[arg(long = "sigma2-gamma")]
    pub sigma2_gamma: Option<f64>,
    #[arg(long = "sigma2-omega")]
    pub sigma2_omega: Option<f64>,
    #[arg(long = "sigma2-eps")]
    pub sigma2_eps: Option<f64>,
    /// Draw covariates independently per replicate.
    #[arg(long = "per-replicate-covariates")]
    pub per_replicate: bool,
    /// Generate on the raw B-spline basis.
    #[arg(long = "raw-basis")]
    pub raw_basis: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SimulateArgs {
    pub fn resolve(&self) -> Result<SimulationDesign> {
        let mut d: SimulationDesign = load_config(self.config.as_deref())?;
        let set = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut d.n, self.n);
        set(&mut d.m, self.m);
        set(&mut d.l, self.l);
        set(&mut d.t, self.t);
        let mut b = BasisSettings { k0: d.k0, degree: d.degree, penalty_order: d.penalty_order, eig_tol: d.eig_tol };
        self.basis.apply(&mut b);
        (d.k0, d.degree, d.penalty_order, d.eig_tol) = (b.k0, b.degree, b.penalty_order, b.eig_tol);
        for (dst, v) in [
            (&mut d.sigma2_alpha, self.sigma2_alpha),
            (&mut d.sigma2_gamma, self.sigma2_gamma),
            (&mut d.sigma2_omega, self.sigma2_omega),
            (&mut d.sigma2_eps, self.sigma2_eps),
        ] {
            if let Some(v) = v {
                *dst = v;
            }
        }
        if self.per_replicate {
            d.covariates = CovariateLaw::PerReplicate;
        }
        if self.raw_basis {
            d.raw_basis = true;
        }
        if let Some(s) = self.seed {
            d.seed = s;
        }
        d.validate()?;
        Ok(d)
    }
}

/// Fully resolved `fit` settings, recorded in `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSettings {
    pub curves: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub basis: BasisSettings,
    pub sampler_kind: SamplerKind,
    pub sampler: SamplerConfig,
    pub precision: Precision,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            curves: None,
            covariates: None,
            grid: None,
            truth: None,
            out: None,
            basis: BasisSettings::default(),
            sampler_kind: SamplerKind::Flfosr,
            sampler: SamplerConfig::default(),
            precision: Precision::F64,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub curves: Option<PathBuf>,
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// True effect functions, as written by `simulate`; adds accuracy output.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Keep γ and ω draws.
    #[arg(long = "retain-random-effects")]
    pub retain_random_effects: bool,
    /// Hold the intercept prior variance fixed instead of sampling it.
    #[arg(long = "fixed-intercept-variance")]
    pub fixed_intercept_variance: bool,
    #[arg(long = "alpha-scheme", value_enum)]
    pub alpha_scheme: Option<SchemeArg>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Auto,
    Primal,
    Dual,
}

impl FitArgs {
    pub fn resolve(&self) -> Result<FitSettings> {
        let mut s: FitSettings = load_config(self.config.as_deref())?;
        for (dst, v) in [
            (&mut s.curves, &self.curves),
            (&mut s.covariates, &self.covariates),
            (&mut s.grid, &self.grid),
            (&mut s.truth, &self.truth),
            (&mut s.out, &self.out),
        ] {
            if v.is_some() {
                dst.clone_from(v);
            }
        }
        self.basis.apply(&mut s.basis);
        self.sampler.apply(&mut s.sampler, &mut s.sampler_kind);
        if self.retain_random_effects {
            s.sampler.retain_random_effects = true;
        }
        if self.fixed_intercept_variance {
            s.sampler.intercept_variance_sampled = false;
        }
        if let Some(a) = self.alpha_scheme {
            s.sampler.alpha_scheme = match a {
                SchemeArg::Auto => AlphaScheme::Auto,
                SchemeArg::Primal => AlphaScheme::Primal,
                SchemeArg::Dual => AlphaScheme::Dual,
            };
        }
        if let Some(p) = self.precision {
            s.precision = p;
        }
        for (name, v) in [("--curves", &s.curves), ("--covariates", &s.covariates), ("--out", &s.out)] {
            if v.is_none() {
                return Err(Error::InvalidInput(format!("{name} is required")));
            }
        }
        s.sampler.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SummarizeArgs {
    /// Output directory of a previous `fit`.
    #[arg(long)]
    pub draws: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// One (n, m, L) benchmark cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
}

impl std::str::FromStr for Cell {
    type Err = Error;

    /// Parses `NxMxL`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('x').collect();
        let bad = || Error::InvalidInput(format!("cell `{s}` is not of the form NxMxL"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let num = |p: &str| p.trim().parse::<usize>().map_err(|_| bad());
        Ok(Cell { n: num(parts[0])?, m: num(parts[1])?, l: num(parts[2])? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSettings {
    pub cells: Vec<Cell>,
    /// Independent datasets per cell; reported values are averaged.
    pub replicates: usize,
    /// Timed fits per dataset; the fastest is reported.
    pub repeats: usize,
    /// Variances, grid and basis for the simulated data; n, m, L and seed
    /// are set per cell.
    pub design: SimulationDesign,
    pub sampler_kind: SamplerKind,
    pub sampler: SamplerConfig,
    pub out: Option<PathBuf>,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        Self {
            cells: [10, 20, 50, 100, 200].iter().map(|&n| Cell { n, m: 5, l: 5 }).collect(),
            replicates: 1,
            repeats: 1,
            design: SimulationDesign::default(),
            sampler_kind: SamplerKind::Flfosr,
            sampler: SamplerConfig::default(),
            out: None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated cells, each `NxMxL`.
    #[arg(long, value_delimiter = ',')]
    pub cells: Option<Vec<Cell>>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
}

impl BenchmarkArgs {
    pub fn resolve(&self) -> Result<BenchmarkSettings> {
        let mut s: BenchmarkSettings = load_config(self.config.as_deref())?;
        if let Some(c) = &self.cells {
            s.cells.clone_from(c);
        }
        if let Some(r) = self.replicates {
            s.replicates = r;
        }
        if let Some(r) = self.repeats {
            s.repeats = r;
        }
        if self.out.is_some() {
            s.out.clone_from(&self.out);
        }
        self.sampler.apply(&mut s.sampler, &mut s.sampler_kind);
        if s.out.is_none() {
            return Err(Error::InvalidInput("--out is required".into()));
        }
        if s.replicates == 0 || s.repeats == 0 || s.cells.is_empty() {
            return Err(Error::InvalidInput("benchmark needs cells, replicates >= 1 and repeats >= 1".into()));
        }
        s.sampler.validate()?;
        Ok(s)
    }
}

/// Reads a JSON config, or the defaults when none is given.
pub fn load_config<V: Default + for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<V> {
    match path {
        None => Ok(V::default()),
        Some(p) => {
            require_file(p)?;
            flfosr::io::load_json(p)
        }
    }
}

/// Missing inputs are an invalid-input error that names the path.
pub fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("input file not found: {}", path.display())))
    }
}

pub fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("input directory not found: {}", path.display())))
    }
}
