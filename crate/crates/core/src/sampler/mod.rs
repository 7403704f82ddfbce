//! Two-block Gibbs sampler for the basis-expanded functional mixed model.
//!
//! Block one draws every fixed and random effect coefficient jointly given
//! the variance components, as `[α | Y, Σ]`, then `[γ | Y, α, Σ]`, then
//! `[ω | Y, α, γ, Σ]`. Block two draws the variance components from their
//! conjugate conditionals. Everything operates on the projected working
//! model, one scalar regression per basis coefficient `k`.

mod context;
mod draws;
mod gibbs;
mod steps;
mod variance;

pub use context::{basis_fingerprint, precompute, FitContext};
pub use draws::{
    alpha_function_chain, reconstruct_effects, reconstruct_gamma, reconstruct_omega,
    PosteriorDraws, SamplerKind, Timing,
};
pub use gibbs::{initialize_state, run_chain, run_gibbs};
pub(crate) use steps::{columns_to_matrix, per_k};
pub use steps::{
    marginal_weights, sample_dual_form, sample_precision_form, AlphaScheme, BlockSampler,
    GaussianBlock, SubjectWeights,
};
pub use variance::{sample_variances, squared_residual_norm, VarianceDraw};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Prior variance for the intercept coefficients when it is not sampled.
pub const FIXED_INTERCEPT_VARIANCE: f64 = 1e6;
/// Bounds applied to every sampled precision.
pub const PRECISION_FLOOR: f64 = 1e-12;
pub const PRECISION_CEIL: f64 = 1e12;

/// Basis coefficients for all effects.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefState<T: Scalar> {
    /// (L+1) x K; row 0 is the intercept.
    pub alpha: DMatrix<T>,
    /// n x K.
    pub gamma: DMatrix<T>,
    /// M x K.
    pub omega: DMatrix<T>,
}

impl<T: Scalar> CoefState<T> {
    pub fn is_finite(&self) -> bool {
        self.alpha
            .iter()
            .chain(self.gamma.iter())
            .chain(self.omega.iter())
            .all(|v| v.is_finite())
    }
}

/// Variance components Σ.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceState<T: Scalar> {
    pub sigma2_eps: T,
    /// One per covariate including the intercept.
    pub sigma2_alpha: Vec<T>,
    pub sigma2_gamma: T,
    /// One per subject.
    pub sigma2_omega: Vec<T>,
}

impl<T: Scalar> VarianceState<T> {
    pub fn uniform(value: T, n_alpha: usize, n_subjects: usize) -> Self {
        Self {
            sigma2_eps: value,
            sigma2_alpha: vec![value; n_alpha],
            sigma2_gamma: value,
            sigma2_omega: vec![value; n_subjects],
        }
    }

    pub fn cast<U: Scalar>(&self) -> VarianceState<U> {
        let c = |v: &T| U::lit(v.as_f64());
        VarianceState {
            sigma2_eps: c(&self.sigma2_eps),
            sigma2_alpha: self.sigma2_alpha.iter().map(c).collect(),
            sigma2_gamma: c(&self.sigma2_gamma),
            sigma2_omega: self.sigma2_omega.iter().map(c).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: &T| v.is_finite() && *v > T::zero();
        let all = std::iter::once(&self.sigma2_eps)
            .chain(&self.sigma2_alpha)
            .chain(std::iter::once(&self.sigma2_gamma))
            .chain(&self.sigma2_omega);
        if all.into_iter().all(ok) {
            Ok(())
        } else {
            Err(Error::InvalidState(
                "variance components must be positive and finite".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub a: f64,
    pub b: f64,
    /// Retained draws N.
    pub n_keep: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub seed: u64,
    pub intercept_variance_sampled: bool,
    pub parallel_k: bool,
    /// Keep γ and ω histories as well as α.
    pub retain_random_effects: bool,
    pub alpha_scheme: AlphaScheme,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            a: 0.1,
            b: 0.1,
            n_keep: 1000,
            n_burn: 1000,
            thin: 1,
            seed: 0,
            intercept_variance_sampled: true,
            parallel_k: false,
            retain_random_effects: false,
            alpha_scheme: AlphaScheme::Auto,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_keep < 1 {
            return Err(Error::InvalidInput("N must be at least 1".into()));
        }
        if self.thin < 1 {
            return Err(Error::InvalidInput("thin must be at least 1".into()));
        }
        if !(self.a > 0.0 && self.b > 0.0 && self.a.is_finite() && self.b.is_finite()) {
            return Err(Error::InvalidInput("hyperparameters a and b must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
