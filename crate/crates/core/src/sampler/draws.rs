use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{SamplerConfig, VarianceState};
use crate::basis::OrthoBasis;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// Joint block: marginal α, partial γ, full ω.
    #[default]
    Flfosr,
    /// Three full conditionals.
    Naive,
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerKind::Flfosr => "flfosr",
            SamplerKind::Naive => "naive",
        })
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flfosr" => Ok(SamplerKind::Flfosr),
            "naive" => Ok(SamplerKind::Naive),
            other => Err(Error::InvalidInput(format!("unknown sampler `{other}`"))),
        }
    }
}

/// Wall-clock seconds spent in the sampling loop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub burn_seconds: f64,
    pub sample_seconds: f64,
}

/// Retained MCMC output.
#[derive(Debug, Clone)]
pub struct PosteriorDraws<T: Scalar> {
    /// One (L+1) x K matrix per retained draw.
    pub alpha: Vec<DMatrix<T>>,
    pub gamma: Option<Vec<DMatrix<T>>>,
    pub omega: Option<Vec<DMatrix<T>>>,
    pub variances: Vec<VarianceState<T>>,
    pub timing: Timing,
    pub clamp_events: u64,
    pub sampler: SamplerKind,
    pub config: SamplerConfig,
    pub dataset_fingerprint: String,
    pub basis_fingerprint: String,
}

impl<T: Scalar> PosteriorDraws<T> {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn n_alpha(&self) -> usize {
        self.alpha.first().map_or(0, |a| a.nrows())
    }

    /// Converts every draw to another scalar type.
    pub fn cast<U: Scalar>(&self) -> PosteriorDraws<U> {
        let cm = |v: &Vec<DMatrix<T>>| -> Vec<DMatrix<U>> {
            v.iter().map(|m| m.map(|x| U::lit(x.as_f64()))).collect()
        };
        PosteriorDraws {
            alpha: cm(&self.alpha),
            gamma: self.gamma.as_ref().map(cm),
            omega: self.omega.as_ref().map(cm),
            variances: self.variances.iter().map(VarianceState::cast).collect(),
            timing: self.timing,
            clamp_events: self.clamp_events,
            sampler: self.sampler,
            config: self.config.clone(),
            dataset_fingerprint: self.dataset_fingerprint.clone(),
            basis_fingerprint: self.basis_fingerprint.clone(),
        }
    }
}

/// Fixed-effect functions for every retained draw, `B(grid_out) α'`, one
/// T_out x (L+1) matrix per draw. `None` means the training grid.
pub fn reconstruct_effects<T: Scalar>(
    draws: &PosteriorDraws<T>,
    basis: &OrthoBasis<T>,
    grid_out: Option<&[f64]>,
) -> Result<Vec<DMatrix<T>>> {
    let b = match grid_out {
        None => basis.b.clone(),
        Some(points) => basis.evaluate(points)?,
    };
    check_width(b.ncols(), draws.alpha.first().map(|a| a.ncols()))?;
    Ok(draws.alpha.iter().map(|a| &b * a.transpose()).collect())
}

/// Chain of `α̃_ℓ(τ_t)` on the training grid as an N x T matrix.
pub fn alpha_function_chain<T: Scalar>(
    draws: &PosteriorDraws<T>,
    basis: &OrthoBasis<T>,
    l: usize,
) -> Result<DMatrix<T>> {
    if draws.is_empty() {
        return Err(Error::InvalidInput("no retained α draws".into()));
    }
    if l >= draws.n_alpha() {
        return Err(Error::InvalidInput(format!("covariate index {l} out of range")));
    }
    check_width(basis.k(), draws.alpha.first().map(|a| a.ncols()))?;
    let mut coefs = DMatrix::zeros(draws.len(), basis.k());
    for (s, a) in draws.alpha.iter().enumerate() {
        coefs.row_mut(s).copy_from(&a.row(l));
    }
    Ok(coefs * basis.b.transpose())
}

/// Subject effect functions per draw, T x n each.
pub fn reconstruct_gamma<T: Scalar>(draws: &PosteriorDraws<T>, basis: &OrthoBasis<T>) -> Result<Vec<DMatrix<T>>> {
    let gamma = draws
        .gamma
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("γ draws were not retained".into()))?;
    Ok(gamma.iter().map(|g| &basis.b * g.transpose()).collect())
}

/// Replicate effect functions per draw, T x M each.
pub fn reconstruct_omega<T: Scalar>(draws: &PosteriorDraws<T>, basis: &OrthoBasis<T>) -> Result<Vec<DMatrix<T>>> {
    let omega = draws
        .omega
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("ω draws were not retained".into()))?;
    Ok(omega.iter().map(|w| &basis.b * w.transpose()).collect())
}

fn check_width(k: usize, draws_k: Option<usize>) -> Result<()> {
    match draws_k {
        Some(dk) if dk != k => Err(Error::Dimension(format!(
            "draws have {dk} basis coefficients, basis has {k}"
        ))),
        _ => Ok(()),
    }
}
