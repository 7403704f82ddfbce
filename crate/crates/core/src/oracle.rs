//! Brute-force references for the sampler.
//!
//! [`DenseWorkingModel`] materializes `[X | Z | I]` and computes the exact
//! Gaussian posterior of `(α_k, γ_k, ω_k)` by plain conjugate algebra.
//! [`FullConditionalSampler`] is the conventional Gibbs blocking that draws
//! α, γ and ω each from its full conditional; it targets the same posterior
//! as the joint sampler and is used for efficiency comparisons.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::OrthoBasis;
use crate::data::{LongitudinalDataset, SubjectIndex, INTERCEPT_NAME};
use crate::error::{Error, Result};
use crate::rng::{next_key, std_normal, substream};
use crate::sampler::{
    columns_to_matrix, per_k, run_chain, sample_precision_form, BlockSampler, CoefState, FitContext,
    GaussianBlock, PosteriorDraws, SamplerConfig, SamplerKind, VarianceState,
};
use crate::scalar::Scalar;

/// Largest `L+1 + n + M` the dense oracle will build.
pub const DENSE_LIMIT: usize = 200;

/// Mean and covariance of a multivariate Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGaussian<T: Scalar> {
    pub mean: DVector<T>,
    pub covariance: DMatrix<T>,
}

impl<T: Scalar> DenseGaussian<T> {
    pub fn from_canonical(block: &GaussianBlock<T>) -> Result<Self> {
        let chol = block
            .precision
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("dense precision is not positive definite".into()))?;
        Ok(Self {
            mean: chol.solve(&block.linear),
            covariance: chol.inverse(),
        })
    }

    /// Marginal over the coordinates `keep`.
    pub fn marginal(&self, keep: &[usize]) -> Self {
        let mean = DVector::from_fn(keep.len(), |i, _| self.mean[keep[i]]);
        let covariance = DMatrix::from_fn(keep.len(), keep.len(), |i, j| self.covariance[(keep[i], keep[j])]);
        Self { mean, covariance }
    }

    /// Conditional of the remaining coordinates given `given = values`.
    pub fn condition(&self, given: &[usize], values: &DVector<T>) -> Result<(Vec<usize>, Self)> {
        let dim = self.mean.len();
        let rest: Vec<usize> = (0..dim).filter(|i| !given.contains(i)).collect();
        let pick = |rows: &[usize], cols: &[usize]| {
            DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.covariance[(rows[i], cols[j])])
        };
        let s_gg = pick(given, given);
        let s_rg = pick(&rest, given);
        let s_rr = pick(&rest, &rest);
        let chol = s_gg
            .cholesky()
            .ok_or_else(|| Error::Numerical("conditioning block is singular".into()))?;
        let shift = DVector::from_fn(given.len(), |i, _| values[i] - self.mean[given[i]]);
        let gain = chol.solve(&s_rg.transpose()).transpose();
        let mean = DVector::from_fn(rest.len(), |i, _| self.mean[rest[i]]) + &gain * shift;
        let covariance = s_rr - &gain * s_rg.transpose();
        Ok((rest, Self { mean, covariance }))
    }
}

/// Dense working model for one basis coefficient:
/// `y_k = [X | Z | I] (α_k, γ_k, ω_k) + ε`, `ε ~ N(0, σ²_ε / d_k I)`.
#[derive(Debug, Clone)]
pub struct DenseWorkingModel<T: Scalar> {
    pub design: DMatrix<T>,
    pub response: DVector<T>,
    pub prior_variance: DVector<T>,
    pub noise_variance: T,
    pub n_alpha: usize,
    pub n_subjects: usize,
}

impl<T: Scalar> DenseWorkingModel<T> {
    pub fn new(ctx: &FitContext<T>, var: &VarianceState<T>, k: usize) -> Result<Self> {
        let (p, n, m) = (ctx.n_alpha(), ctx.n_subjects(), ctx.n_curves());
        let size = p + n + m;
        if size > DENSE_LIMIT {
            return Err(Error::OracleTooLarge { size, limit: DENSE_LIMIT });
        }
        var.validate()?;
        let mut design = DMatrix::zeros(m, size);
        design.columns_mut(0, p).copy_from(&ctx.x);
        design.columns_mut(p, n).copy_from(&ctx.groups.dense_z::<T>());
        design.columns_mut(p + n, m).fill_with_identity();
        let subject_of = ctx.groups.subject_of();
        let prior_variance = DVector::from_fn(size, |j, _| {
            if j < p {
                var.sigma2_alpha[j]
            } else if j < p + n {
                var.sigma2_gamma
            } else {
                var.sigma2_omega[subject_of[j - p - n]]
            }
        });
        Ok(Self {
            design,
            response: ctx.y.column(k).into_owned(),
            prior_variance,
            noise_variance: var.sigma2_eps / ctx.d[k],
            n_alpha: p,
            n_subjects: n,
        })
    }

    pub fn posterior_canonical(&self) -> GaussianBlock<T> {
        let inv_noise = T::one() / self.noise_variance;
        let mut precision = self.design.tr_mul(&self.design) * inv_noise;
        for j in 0..precision.nrows() {
            precision[(j, j)] += T::one() / self.prior_variance[j];
        }
        let linear = self.design.tr_mul(&self.response) * inv_noise;
        GaussianBlock { precision, linear }
    }

    pub fn posterior(&self) -> Result<DenseGaussian<T>> {
        DenseGaussian::from_canonical(&self.posterior_canonical())
    }

    pub fn alpha_indices(&self) -> Vec<usize> {
        (0..self.n_alpha).collect()
    }

    pub fn gamma_indices(&self) -> Vec<usize> {
        (self.n_alpha..self.n_alpha + self.n_subjects).collect()
    }

    pub fn omega_indices(&self) -> Vec<usize> {
        (self.n_alpha + self.n_subjects..self.design.ncols()).collect()
    }
}

/// Exact `p(α_k, γ_k, ω_k | Y, Σ)` for every k, coordinates ordered
/// (α, γ, ω).
pub fn exact_joint_posterior<T: Scalar>(ctx: &FitContext<T>, var: &VarianceState<T>) -> Result<Vec<DenseGaussian<T>>> {
    (0..ctx.k())
        .map(|k| DenseWorkingModel::new(ctx, var, k)?.posterior())
        .collect()
}

/// Dense M x M matrices behind the marginal weights for coefficient `k`.
#[derive(Debug, Clone)]
pub struct DenseMarginalWeights<T: Scalar> {
    /// `(Σ_ε + d_k Σ_ω)^-1`, by direct inversion.
    pub v: DMatrix<T>,
    /// The same matrix from the Woodbury identity
    /// `Σ_ε^-1 - Σ_ε^-1 (d_k^-1 Σ_ω^-1 + Σ_ε^-1)^-1 Σ_ε^-1`.
    pub v_woodbury: DMatrix<T>,
    /// `(Z'V)' (Σ_γ^-1 + d_k Z'VZ)^-1 Z'V`.
    pub w: DMatrix<T>,
    /// `(Σ_ε + d_k Σ_ω + d_k σ²_γ ZZ')^-1`, by direct inversion; equals
    /// `V - d_k W`.
    pub marginal: DMatrix<T>,
}

pub fn dense_marginal_weights<T: Scalar>(
    ctx: &FitContext<T>,
    var: &VarianceState<T>,
    k: usize,
) -> Result<DenseMarginalWeights<T>> {
    let m = ctx.n_curves();
    if m + ctx.n_subjects() > DENSE_LIMIT {
        return Err(Error::OracleTooLarge { size: m + ctx.n_subjects(), limit: DENSE_LIMIT });
    }
    let dk = ctx.d[k];
    let subject_of = ctx.groups.subject_of();
    let eps = DMatrix::<T>::identity(m, m) * var.sigma2_eps;
    let omega = DMatrix::from_diagonal(&DVector::from_fn(m, |r, _| var.sigma2_omega[subject_of[r]]));
    let z = ctx.groups.dense_z::<T>();
    let invert = |a: DMatrix<T>| {
        a.try_inverse()
            .ok_or_else(|| Error::Numerical("dense inversion failed".into()))
    };

    let v = invert(&eps + &omega * dk)?;
    let eps_inv = invert(eps.clone())?;
    let inner = invert(invert(&omega * dk)? + &eps_inv)?;
    let v_woodbury = &eps_inv - &eps_inv * inner * &eps_inv;

    let ztv = z.tr_mul(&v);
    let n = ctx.n_subjects();
    let gamma_inv = DMatrix::<T>::identity(n, n) * (T::one() / var.sigma2_gamma);
    let core = invert(gamma_inv + (&ztv * &z) * dk)?;
    let w = ztv.transpose() * core * &ztv;

    let marginal = invert(&eps + &omega * dk + (&z * z.transpose()) * (dk * var.sigma2_gamma))?;
    Ok(DenseMarginalWeights { v, v_woodbury, w, marginal })
}

/// Conventional Gibbs blocking using the three full conditionals.
#[derive(Debug, Clone, Copy)]
pub struct FullConditionalSampler<'a, T: Scalar> {
    pub ctx: &'a FitContext<T>,
    pub parallel: bool,
}

impl<'a, T: Scalar> FullConditionalSampler<'a, T> {
    pub fn new(ctx: &'a FitContext<T>) -> Self {
        Self { ctx, parallel: false }
    }

    pub fn parallel(mut self, on: bool) -> Self {
        self.parallel = on;
        self
    }

    /// Canonical parameters of `[α_k | Y, γ, ω, Σ]`.
    pub fn alpha_full(
        &self,
        gamma: &DMatrix<T>,
        omega: &DMatrix<T>,
        var: &VarianceState<T>,
        k: usize,
    ) -> GaussianBlock<T> {
        let ctx = self.ctx;
        let scale = ctx.d[k] / var.sigma2_eps;
        let subject_of = ctx.groups.subject_of();
        let resid = DVector::from_fn(ctx.n_curves(), |r, _| {
            ctx.y[(r, k)] - gamma[(subject_of[r], k)] - omega[(r, k)]
        });
        let mut precision = &ctx.xtx * scale;
        for j in 0..ctx.n_alpha() {
            precision[(j, j)] += T::one() / var.sigma2_alpha[j];
        }
        let linear = ctx.x.tr_mul(&resid) * scale;
        GaussianBlock { precision, linear }
    }

    /// Per-subject precision and linear term of `[γ_k | Y, α, ω, Σ]`.
    pub fn gamma_full(
        &self,
        alpha: &DMatrix<T>,
        omega: &DMatrix<T>,
        var: &VarianceState<T>,
        k: usize,
    ) -> (DVector<T>, DVector<T>) {
        let ctx = self.ctx;
        let scale = ctx.d[k] / var.sigma2_eps;
        let fitted = &ctx.x * alpha.column(k);
        let n = ctx.n_subjects();
        let mut q = DVector::zeros(n);
        let mut l = DVector::zeros(n);
        for i in 0..n {
            let rows = ctx.groups.rows(i);
            q[i] = T::one() / var.sigma2_gamma + scale * T::from_count(rows.len());
            let sum = rows.fold(T::zero(), |acc, r| acc + ctx.y[(r, k)] - fitted[r] - omega[(r, k)]);
            l[i] = scale * sum;
        }
        (q, l)
    }

    /// One sweep α → γ → ω, each from its full conditional.
    pub fn sweep<R: Rng + ?Sized>(
        &self,
        coef: &CoefState<T>,
        var: &VarianceState<T>,
        rng: &mut R,
    ) -> Result<CoefState<T>> {
        let ctx = self.ctx;
        var.validate()?;

        let key = next_key(rng);
        let cols = per_k(ctx.k(), self.parallel, |k| {
            let block = self.alpha_full(&coef.gamma, &coef.omega, var, k);
            sample_precision_form(&block, k, &mut substream(key, k as u64))
        })?;
        let alpha = columns_to_matrix(ctx.n_alpha(), cols);

        let key = next_key(rng);
        let cols = per_k(ctx.k(), self.parallel, |k| {
            let mut sub = substream(key, k as u64);
            let (q, l) = self.gamma_full(&alpha, &coef.omega, var, k);
            Ok(DVector::from_fn(q.len(), |i, _| {
                l[i] / q[i] + std_normal::<T, _>(&mut sub) / q[i].sqrt()
            }))
        })?;
        let gamma = columns_to_matrix(ctx.n_subjects(), cols);

        let omega = BlockSampler::new(ctx)
            .parallel(self.parallel)
            .sample_omega(&alpha, &gamma, var, rng)?;
        Ok(CoefState { alpha, gamma, omega })
    }
}

/// Runs the full-conditional sampler with the same variance block,
/// initialization and retention rules as the joint sampler.
pub fn naive_gibbs<T: Scalar>(ctx: &FitContext<T>, config: &SamplerConfig) -> Result<PosteriorDraws<T>> {
    run_chain(ctx, config, SamplerKind::Naive)
}

/// A small random model with every piece the dense oracle needs.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub dataset: LongitudinalDataset<f64>,
    pub basis: OrthoBasis<f64>,
    pub variances: VarianceState<f64>,
}

/// Random instance with `counts[i]` replicates for subject i, `l` slope
/// covariates drawn per replicate, and a K-column basis with random
/// orthogonal columns and Gram diagonal in [0.5, 3]. Variances lie in
/// [0.3, 2].
pub fn random_tiny_instance(seed: u64, counts: &[usize], l: usize, k: usize) -> Result<TinyInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = SubjectIndex::from_counts(counts)?;
    let m = groups.n_rows();
    let t = k + 2;
    let raw = DMatrix::from_fn(t, t, |_, _| std_normal::<f64, _>(&mut rng));
    let q = raw.qr().q();
    let mut d: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..3.0)).collect();
    d.sort_by(|a, b| b.total_cmp(a));
    let b = DMatrix::from_fn(t, k, |r, c| q[(r, c)] * d[c].sqrt());
    let basis = OrthoBasis {
        grid: crate::basis::unit_grid(t),
        b,
        d: DVector::from_vec(d),
        eig_tol: crate::basis::DEFAULT_EIG_TOL,
        source: None,
        transform: None,
    };
    let x = DMatrix::from_fn(m, l + 1, |_, c| if c == 0 { 1.0 } else { std_normal::<f64, _>(&mut rng) });
    let curves = DMatrix::from_fn(t, m, |_, _| 2.0 * std_normal::<f64, _>(&mut rng));
    let mut names = vec![INTERCEPT_NAME.to_string()];
    names.extend((1..=l).map(|c| format!("x{c}")));
    let dataset = LongitudinalDataset::new(basis.grid.clone(), curves, groups, x, names)?;
    let mut draw = || rng.random_range(0.3..2.0);
    let variances = VarianceState {
        sigma2_eps: draw(),
        sigma2_alpha: (0..=l).map(|_| draw()).collect(),
        sigma2_gamma: draw(),
        sigma2_omega: counts.iter().map(|_| draw()).collect(),
    };
    Ok(TinyInstance { dataset, basis, variances })
}

/// Worst standardized deviations of joint-draw moments from the exact
/// posterior, over every basis coefficient and coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentCheck {
    pub draws: usize,
    /// max |mean - μ| / sqrt(Σ_jj / N).
    pub max_mean_z: f64,
    /// max |S_ij - Σ_ij| / se_ij, with S centred at the exact mean and se
    /// the empirical standard error of the centred products.
    pub max_cov_z: f64,
}

/// Draws `n_draws` times from the joint block at fixed Σ and compares the
/// first two moments with [`exact_joint_posterior`].
pub fn joint_moment_check(ctx: &FitContext<f64>, var: &VarianceState<f64>, n_draws: usize, seed: u64) -> Result<MomentCheck> {
    let exact = exact_joint_posterior(ctx, var)?;
    let sampler = BlockSampler::new(ctx);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = exact[0].mean.len();
    let kk = ctx.k();
    let mut centred: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n_draws, dim); kk];
    for s in 0..n_draws {
        let c = sampler.sample_effects(var, &mut rng)?;
        for (k, out) in centred.iter_mut().enumerate() {
            let (a, g, w) = (c.alpha.column(k), c.gamma.column(k), c.omega.column(k));
            for (j, v) in a.iter().chain(g.iter()).chain(w.iter()).enumerate() {
                out[(s, j)] = v - exact[k].mean[j];
            }
        }
    }
    let nf = n_draws as f64;
    let mut max_mean_z = 0.0f64;
    let mut max_cov_z = 0.0f64;
    for (k, e) in centred.iter().enumerate() {
        let sigma = &exact[k].covariance;
        for i in 0..dim {
            let mean = e.column(i).sum() / nf;
            max_mean_z = max_mean_z.max(mean.abs() / (sigma[(i, i)] / nf).sqrt());
            for j in i..dim {
                let prod = e.column(i).component_mul(&e.column(j));
                let s = prod.sum() / nf;
                let var_prod = prod.iter().map(|p| (p - s).powi(2)).sum::<f64>() / (nf - 1.0);
                max_cov_z = max_cov_z.max((s - sigma[(i, j)]).abs() / (var_prod / nf).sqrt());
            }
        }
    }
    Ok(MomentCheck { draws: n_draws, max_mean_z, max_cov_z })
}
