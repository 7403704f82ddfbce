use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CoefState, FitContext, VarianceState};
use crate::error::{Error, Result};
use crate::rng::{next_key, std_normal, substream};
use crate::scalar::Scalar;

/// Which Gaussian sampler to use for the fixed-effect block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AlphaScheme {
    /// Precision form when L+1 <= M, dual form otherwise.
    #[default]
    Auto,
    /// Cholesky of the (L+1) x (L+1) precision, O(L^3).
    Primal,
    /// Data-augmentation solve in M x M, O(M^2 L).
    Dual,
}

/// The diagonal and rank-one weights in the marginal likelihood of subject
/// `i` for basis coefficient `k`.
///
/// Integrating out `ω` leaves independent rows with precision `d_k v`,
/// `v = (σ²_ε + d_k σ²_ω_i)^-1`. Integrating out `γ` as well gives the
/// block precision `d_k (v I - c J)` over the subject's rows, with
/// `c = d_k σ²_γ v w` and `w = v - m_i c = (σ²_ε + d_k σ²_ω_i + d_k m_i σ²_γ)^-1`.
/// On vectors constant within the subject this block acts as the scalar `w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectWeights<T> {
    pub v: T,
    pub w: T,
    pub c: T,
}

pub fn marginal_weights<T: Scalar>(
    d_k: T,
    m_i: usize,
    sigma2_eps: T,
    sigma2_omega_i: T,
    sigma2_gamma: T,
) -> SubjectWeights<T> {
    let base = sigma2_eps + d_k * sigma2_omega_i;
    let v = T::one() / base;
    let w = T::one() / (base + d_k * T::from_count(m_i) * sigma2_gamma);
    let c = d_k * sigma2_gamma * v * w;
    SubjectWeights { v, w, c }
}

/// A Gaussian in canonical form, `N(Q^-1 l, Q^-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBlock<T: Scalar> {
    pub precision: DMatrix<T>,
    pub linear: DVector<T>,
}

impl<T: Scalar> GaussianBlock<T> {
    pub fn mean(&self) -> Option<DVector<T>> {
        self.precision.clone().cholesky().map(|c| c.solve(&self.linear))
    }

    pub fn covariance(&self) -> Option<DMatrix<T>> {
        self.precision.clone().cholesky().map(|c| c.inverse())
    }
}

/// Draws from `N(Q^-1 l, Q^-1)` via the Cholesky factor of `Q`.
pub fn sample_precision_form<T: Scalar, R: Rng + ?Sized>(
    block: &GaussianBlock<T>,
    k: usize,
    rng: &mut R,
) -> Result<DVector<T>> {
    let chol = block
        .precision
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { k })?;
    let mean = chol.solve(&block.linear);
    let z = DVector::from_fn(block.linear.len(), |_, _| std_normal::<T, _>(rng));
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or(Error::NotPositiveDefinite { k })?;
    Ok(mean + noise)
}

/// Draws from `N(Q^-1 Φ't, Q^-1)` with `Q = Φ'Φ + diag(prior)^-1` by
/// perturbing the prior and the data and solving in the M-dimensional dual.
pub fn sample_dual_form<T: Scalar, R: Rng + ?Sized>(
    phi: &DMatrix<T>,
    target: &DVector<T>,
    prior_var: &DVector<T>,
    k: usize,
    rng: &mut R,
) -> Result<DVector<T>> {
    let p = phi.ncols();
    let m = phi.nrows();
    let u = DVector::from_fn(p, |j, _| prior_var[j].sqrt() * std_normal::<T, _>(rng));
    let delta = DVector::from_fn(m, |_, _| std_normal::<T, _>(rng));
    let v = phi * &u + delta;
    let mut phi_d = phi.clone();
    for (j, mut col) in phi_d.column_iter_mut().enumerate() {
        col *= prior_var[j];
    }
    let mut system = &phi_d * phi.transpose();
    for i in 0..m {
        system[(i, i)] += T::one();
    }
    let chol = system.cholesky().ok_or(Error::NotPositiveDefinite { k })?;
    let w = chol.solve(&(target - v));
    Ok(u + phi_d.tr_mul(&w))
}

/// Runs `f(k)` for every basis coefficient, serially or on the rayon pool.
pub(crate) fn per_k<T, F>(k_count: usize, parallel: bool, f: F) -> Result<Vec<DVector<T>>>
where
    T: Scalar,
    F: Fn(usize) -> Result<DVector<T>> + Sync + Send,
{
    if parallel {
        (0..k_count).into_par_iter().map(f).collect()
    } else {
        (0..k_count).map(f).collect()
    }
}

pub(crate) fn columns_to_matrix<T: Scalar>(rows: usize, cols: Vec<DVector<T>>) -> DMatrix<T> {
    let mut out = DMatrix::zeros(rows, cols.len());
    for (k, c) in cols.iter().enumerate() {
        out.set_column(k, c);
    }
    out
}

pub(crate) fn check_variances<T: Scalar>(var: &VarianceState<T>, ctx: &FitContext<T>) -> Result<()> {
    var.validate()?;
    if var.sigma2_alpha.len() != ctx.n_alpha() || var.sigma2_omega.len() != ctx.n_subjects() {
        return Err(Error::InvalidState("variance state does not match the model".into()));
    }
    Ok(())
}

/// Samplers for the three coefficient blocks over a fixed context.
#[derive(Debug, Clone, Copy)]
pub struct BlockSampler<'a, T: Scalar> {
    pub ctx: &'a FitContext<T>,
    pub parallel: bool,
    pub scheme: AlphaScheme,
}

impl<'a, T: Scalar> BlockSampler<'a, T> {
    pub fn new(ctx: &'a FitContext<T>) -> Self {
        Self {
            ctx,
            parallel: false,
            scheme: AlphaScheme::Auto,
        }
    }

    pub fn parallel(mut self, on: bool) -> Self {
        self.parallel = on;
        self
    }

    pub fn scheme(mut self, scheme: AlphaScheme) -> Self {
        self.scheme = scheme;
        self
    }

    fn weights(&self, var: &VarianceState<T>, k: usize, i: usize) -> SubjectWeights<T> {
        marginal_weights(
            self.ctx.d[k],
            self.ctx.groups.count(i),
            var.sigma2_eps,
            var.sigma2_omega[i],
            var.sigma2_gamma,
        )
    }

    /// Canonical parameters of `[α_k | Y, Σ]`, with γ and ω integrated out.
    pub fn alpha_marginal(&self, var: &VarianceState<T>, k: usize) -> GaussianBlock<T> {
        let ctx = self.ctx;
        let p = ctx.n_alpha();
        let dk = ctx.d[k];
        let mut q = DMatrix::zeros(p, p);
        let mut l = DVector::zeros(p);
        for i in 0..ctx.n_subjects() {
            let wt = self.weights(var, k, i);
            let s = ctx.subject_xsum.row(i).transpose();
            q += &ctx.subject_gram[i] * wt.v;
            q -= (&s * s.transpose()) * wt.c;
            l += ctx.subject_xty[i].column(k) * wt.v;
            l -= &s * (wt.c * ctx.subject_ysum[(i, k)]);
        }
        q *= dk;
        l *= dk;
        for j in 0..p {
            q[(j, j)] += T::one() / var.sigma2_alpha[j];
        }
        GaussianBlock { precision: q, linear: l }
    }

    /// Whitened design and response of the α marginal, `sqrt(d_k) Ω^{1/2} X`
    /// and `sqrt(d_k) Ω^{1/2} y_k`, for the dual sampler.
    pub fn alpha_whitened(&self, var: &VarianceState<T>, k: usize) -> (DMatrix<T>, DVector<T>) {
        let ctx = self.ctx;
        let sqrt_dk = ctx.d[k].sqrt();
        let mut phi = DMatrix::zeros(ctx.n_curves(), ctx.n_alpha());
        let mut target = DVector::zeros(ctx.n_curves());
        for i in 0..ctx.n_subjects() {
            let wt = self.weights(var, k, i);
            let rows = ctx.groups.rows(i);
            let m = T::from_count(rows.len());
            let sv = wt.v.sqrt();
            let shift = (wt.w.sqrt() - sv) / m;
            let ysum = ctx.subject_ysum[(i, k)];
            for r in rows {
                for j in 0..ctx.n_alpha() {
                    phi[(r, j)] = sqrt_dk * (sv * ctx.x[(r, j)] + shift * ctx.subject_xsum[(i, j)]);
                }
                target[r] = sqrt_dk * (sv * ctx.y[(r, k)] + shift * ysum);
            }
        }
        (phi, target)
    }

    fn use_dual(&self) -> bool {
        match self.scheme {
            AlphaScheme::Auto => self.ctx.n_alpha() > self.ctx.n_curves(),
            AlphaScheme::Primal => false,
            AlphaScheme::Dual => true,
        }
    }

    /// Draws all α_k from their marginal posteriors.
    pub fn sample_alpha<R: Rng + ?Sized>(&self, var: &VarianceState<T>, rng: &mut R) -> Result<DMatrix<T>> {
        check_variances(var, self.ctx)?;
        let key = next_key(rng);
        let dual = self.use_dual();
        let cols = per_k(self.ctx.k(), self.parallel, |k| {
            let mut sub = substream(key, k as u64);
            if dual {
                let (phi, target) = self.alpha_whitened(var, k);
                let prior = DVector::from_column_slice(&var.sigma2_alpha);
                sample_dual_form(&phi, &target, &prior, k, &mut sub)
            } else {
                sample_precision_form(&self.alpha_marginal(var, k), k, &mut sub)
            }
        })?;
        Ok(columns_to_matrix(self.ctx.n_alpha(), cols))
    }

    /// Per-subject precision and linear term of `[γ_k | Y, α, Σ]`.
    pub fn gamma_partial(&self, alpha: &DMatrix<T>, var: &VarianceState<T>, k: usize) -> (DVector<T>, DVector<T>) {
        let ctx = self.ctx;
        let dk = ctx.d[k];
        let n = ctx.n_subjects();
        let mut q = DVector::zeros(n);
        let mut l = DVector::zeros(n);
        let inv_g = T::one() / var.sigma2_gamma;
        for i in 0..n {
            let v = self.weights(var, k, i).v;
            let fitted = ctx.subject_xsum.row(i).dot(&alpha.column(k).transpose());
            q[i] = inv_g + dk * T::from_count(ctx.groups.count(i)) * v;
            l[i] = dk * v * (ctx.subject_ysum[(i, k)] - fitted);
        }
        (q, l)
    }

    /// Draws all γ_k given α, with ω integrated out.
    pub fn sample_gamma<R: Rng + ?Sized>(
        &self,
        alpha: &DMatrix<T>,
        var: &VarianceState<T>,
        rng: &mut R,
    ) -> Result<DMatrix<T>> {
        check_variances(var, self.ctx)?;
        let key = next_key(rng);
        let cols = per_k(self.ctx.k(), self.parallel, |k| {
            let mut sub = substream(key, k as u64);
            let (q, l) = self.gamma_partial(alpha, var, k);
            Ok(DVector::from_fn(q.len(), |i, _| {
                l[i] / q[i] + std_normal::<T, _>(&mut sub) / q[i].sqrt()
            }))
        })?;
        Ok(columns_to_matrix(self.ctx.n_subjects(), cols))
    }

    /// Per-row precision and linear term of `[ω_k | Y, α, γ, Σ]`.
    pub fn omega_full(
        &self,
        alpha: &DMatrix<T>,
        gamma: &DMatrix<T>,
        var: &VarianceState<T>,
        k: usize,
    ) -> (DVector<T>, DVector<T>) {
        let ctx = self.ctx;
        let scale = ctx.d[k] / var.sigma2_eps;
        let fitted = &ctx.x * alpha.column(k);
        let m = ctx.n_curves();
        let subject_of = ctx.groups.subject_of();
        let q = DVector::from_fn(m, |r, _| scale + T::one() / var.sigma2_omega[subject_of[r]]);
        let l = DVector::from_fn(m, |r, _| {
            scale * (ctx.y[(r, k)] - fitted[r] - gamma[(subject_of[r], k)])
        });
        (q, l)
    }

    /// Draws all ω_k given α and γ.
    pub fn sample_omega<R: Rng + ?Sized>(
        &self,
        alpha: &DMatrix<T>,
        gamma: &DMatrix<T>,
        var: &VarianceState<T>,
        rng: &mut R,
    ) -> Result<DMatrix<T>> {
        check_variances(var, self.ctx)?;
        let key = next_key(rng);
        let cols = per_k(self.ctx.k(), self.parallel, |k| {
            let mut sub = substream(key, k as u64);
            let (q, l) = self.omega_full(alpha, gamma, var, k);
            Ok(DVector::from_fn(q.len(), |r, _| {
                l[r] / q[r] + std_normal::<T, _>(&mut sub) / q[r].sqrt()
            }))
        })?;
        Ok(columns_to_matrix(self.ctx.n_curves(), cols))
    }

    /// One direct draw from `p(α, γ, ω | Y, Σ)`.
    pub fn sample_effects<R: Rng + ?Sized>(&self, var: &VarianceState<T>, rng: &mut R) -> Result<CoefState<T>> {
        let alpha = self.sample_alpha(var, rng)?;
        let gamma = self.sample_gamma(&alpha, var, rng)?;
        let omega = self.sample_omega(&alpha, &gamma, var, rng)?;
        Ok(CoefState { alpha, gamma, omega })
    }
}
