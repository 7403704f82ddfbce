//! Efficiency and accuracy metrics for retained fixed-effect draws.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::OrthoBasis;
use crate::error::{Error, Result};
use crate::sampler::{alpha_function_chain, PosteriorDraws};
use crate::scalar::Scalar;

/// Upper clamp on `N_eff / N`.
pub const ESS_SLACK: f64 = 1.25;
pub const MIN_CHAIN: usize = 10;
pub const LOWER_LEVEL: f64 = 0.025;
pub const UPPER_LEVEL: f64 = 0.975;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssEstimate {
    pub n_eff: f64,
    /// Set when the chain is constant.
    pub degenerate: bool,
}

/// Effective sample size `N / (1 + 2 Σ ρ_s)`, with the autocorrelation sum
/// truncated at the first non-positive pair `ρ_{2m} + ρ_{2m+1}`.
pub fn ess<T: Scalar>(chain: &[T]) -> Result<EssEstimate> {
    let n = chain.len();
    if n < MIN_CHAIN {
        return Err(Error::InvalidInput(format!(
            "chain of length {n} is shorter than {MIN_CHAIN}"
        )));
    }
    let x: Vec<f64> = chain.iter().map(|v| v.as_f64()).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("chain contains non-finite values".into()));
    }
    let nf = n as f64;
    if x.iter().all(|&v| v == x[0]) {
        return Ok(EssEstimate { n_eff: nf, degenerate: true });
    }
    let mean = x.iter().sum::<f64>() / nf;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let autocov = |s: usize| c[..n - s].iter().zip(&c[s..]).map(|(a, b)| a * b).sum::<f64>() / nf;
    let c0 = autocov(0);
    if c0 <= 0.0 {
        return Ok(EssEstimate { n_eff: nf, degenerate: true });
    }

    let mut tau = -1.0;
    let mut s = 0;
    while s + 1 < n {
        let pair = (autocov(s) + autocov(s + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        s += 2;
    }
    let n_eff = (nf / tau).clamp(f64::MIN_POSITIVE, ESS_SLACK * nf);
    Ok(EssEstimate { n_eff, degenerate: false })
}

/// Type-7 quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty data");
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssCell {
    /// Covariate index, 1..=L.
    pub covariate: usize,
    pub t: usize,
    pub n_eff: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub cells: Vec<EssCell>,
    /// Retained draws N.
    pub n: usize,
    /// Mean of `N_eff / N` over cells.
    pub relative_efficiency: f64,
    pub s1000: f64,
    pub burn_seconds: f64,
    pub sample_seconds: f64,
}

/// Mean over cells of `s_burn + s_N * 1000 / N_eff`.
pub fn seconds_per_1000(n_eff: &[f64], burn_seconds: f64, sample_seconds: f64) -> f64 {
    let total: f64 = n_eff.iter().map(|e| burn_seconds + sample_seconds * 1000.0 / e).sum();
    total / n_eff.len() as f64
}

/// ESS of every slope function at every grid point.
pub fn efficiency_report<T: Scalar>(draws: &PosteriorDraws<T>, basis: &OrthoBasis<T>) -> Result<EfficiencyReport> {
    if draws.is_empty() {
        return Err(Error::InvalidInput("no retained α draws".into()));
    }
    let p = draws.n_alpha();
    if p < 2 {
        return Err(Error::InvalidInput("efficiency needs at least one non-intercept covariate".into()));
    }
    let chains = (1..p)
        .map(|l| alpha_function_chain(draws, basis, l))
        .collect::<Result<Vec<_>>>()?;
    let t_len = basis.t();
    let cells = (0..(p - 1) * t_len)
        .into_par_iter()
        .map(|idx| {
            let (l, t) = (idx / t_len, idx % t_len);
            let col: Vec<T> = chains[l].column(t).iter().copied().collect();
            ess(&col).map(|e| EssCell {
                covariate: l + 1,
                t,
                n_eff: e.n_eff,
                degenerate: e.degenerate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = draws.len();
    let effs: Vec<f64> = cells.iter().map(|c| c.n_eff).collect();
    let relative_efficiency = effs.iter().sum::<f64>() / (effs.len() as f64 * n as f64);
    let (sb, sn) = (draws.timing.burn_seconds, draws.timing.sample_seconds);
    Ok(EfficiencyReport {
        cells,
        n,
        relative_efficiency,
        s1000: seconds_per_1000(&effs, sb, sn),
        burn_seconds: sb,
        sample_seconds: sn,
    })
}

/// One row of the posterior summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub covariate: usize,
    pub t: usize,
    pub tau: f64,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

/// Posterior mean and pointwise 95% band of `α̃_ℓ(τ_t)` for every ℓ
/// including the intercept, ordered by covariate then grid index.
pub fn summarize<T: Scalar>(draws: &PosteriorDraws<T>, basis: &OrthoBasis<T>) -> Result<Vec<SummaryRow>> {
    if draws.is_empty() {
        return Err(Error::InvalidInput("no retained α draws".into()));
    }
    let mut rows = Vec::with_capacity(draws.n_alpha() * basis.t());
    for l in 0..draws.n_alpha() {
        let chain = alpha_function_chain(draws, basis, l)?;
        for t in 0..basis.t() {
            rows.push(band(l, t, basis.grid[t], &chain));
        }
    }
    Ok(rows)
}

fn band<T: Scalar>(l: usize, t: usize, tau: f64, chain: &DMatrix<T>) -> SummaryRow {
    let mut v: Vec<f64> = chain.column(t).iter().map(|x| x.as_f64()).collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.sort_by(f64::total_cmp);
    SummaryRow {
        covariate: l,
        t,
        tau,
        mean,
        q025: quantile_sorted(&v, LOWER_LEVEL),
        q975: quantile_sorted(&v, UPPER_LEVEL),
    }
}

/// True fixed-effect functions on a grid, T x (L+1).
#[derive(Debug, Clone, PartialEq)]
pub struct EffectTruth {
    pub grid: Vec<f64>,
    pub functions: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub rmse: f64,
    pub mciw: f64,
    pub ecp: f64,
    /// Slope rows only, ℓ = 1..L.
    pub bands: Vec<SummaryRow>,
}

/// RMSE, mean interval width and coverage of bands against truths.
pub fn interval_metrics(bands: &[SummaryRow], truth: &[f64]) -> (f64, f64, f64) {
    assert_eq!(bands.len(), truth.len());
    let cells = bands.len() as f64;
    let mut sq = 0.0;
    let mut width = 0.0;
    let mut hits = 0usize;
    for (b, &a) in bands.iter().zip(truth) {
        sq += (b.mean - a).powi(2);
        width += b.q975 - b.q025;
        if b.q025 <= a && a <= b.q975 {
            hits += 1;
        }
    }
    ((sq / cells).sqrt(), width / cells, hits as f64 / cells)
}

/// Accuracy of the slope functions ℓ = 1..L against the truth.
pub fn accuracy_report<T: Scalar>(
    draws: &PosteriorDraws<T>,
    basis: &OrthoBasis<T>,
    truth: &EffectTruth,
) -> Result<AccuracyReport> {
    let same_grid = truth.grid.len() == basis.grid.len()
        && truth.grid.iter().zip(&basis.grid).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    if !same_grid || truth.functions.nrows() != truth.grid.len() {
        return Err(Error::InvalidInput("truth grid does not match the fitted grid".into()));
    }
    if truth.functions.ncols() != draws.n_alpha() {
        return Err(Error::InvalidInput(format!(
            "truth has {} functions, draws have {}",
            truth.functions.ncols(),
            draws.n_alpha()
        )));
    }
    if draws.n_alpha() < 2 {
        return Err(Error::InvalidInput("accuracy needs at least one non-intercept covariate".into()));
    }
    let bands: Vec<SummaryRow> = summarize(draws, basis)?.into_iter().filter(|r| r.covariate > 0).collect();
    let values: Vec<f64> = bands.iter().map(|r| truth.functions[(r.t, r.covariate)]).collect();
    let (rmse, mciw, ecp) = interval_metrics(&bands, &values);
    Ok(AccuracyReport { rmse, mciw, ecp, bands })
}
