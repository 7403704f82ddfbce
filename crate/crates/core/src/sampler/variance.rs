use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::{
    CoefState, FitContext, SamplerConfig, VarianceState, FIXED_INTERCEPT_VARIANCE, PRECISION_CEIL,
    PRECISION_FLOOR,
};
use crate::error::{Error, Result};
use crate::rng::{next_key, substream};
use crate::scalar::Scalar;

/// A variance-block draw and the number of precisions that hit a clamp.
#[derive(Debug, Clone)]
pub struct VarianceDraw<T: Scalar> {
    pub state: VarianceState<T>,
    pub clamps: u64,
}

/// `sum_ij ||Y_ij - B β_ij||^2` without touching the T-dimensional curves:
/// the residual splits into the part outside span(B), fixed at precompute
/// time, and `sum_k d_k ||y_k - β_k||^2`.
pub fn squared_residual_norm<T: Scalar>(ctx: &FitContext<T>, coef: &CoefState<T>) -> T {
    let fitted = &ctx.x * &coef.alpha;
    let subject_of = ctx.groups.subject_of();
    let mut total = ctx.ss_outside;
    for k in 0..ctx.k() {
        let mut acc = T::zero();
        for (r, &i) in subject_of.iter().enumerate() {
            let beta = fitted[(r, k)] + coef.gamma[(i, k)] + coef.omega[(r, k)];
            let e = ctx.y[(r, k)] - beta;
            acc += e * e;
        }
        total += ctx.d[k] * acc;
    }
    total
}

struct PrecisionDraw<'a, R: Rng> {
    rng: &'a mut R,
    clamps: u64,
}

impl<R: Rng> PrecisionDraw<'_, R> {
    /// Draws a precision from Gamma(shape, rate) and returns the variance.
    fn variance(&mut self, shape: f64, rate: f64) -> Result<f64> {
        let rate = rate.max(f64::MIN_POSITIVE);
        let dist = Gamma::new(shape, 1.0 / rate)
            .map_err(|e| Error::Numerical(format!("Gamma({shape}, {rate}): {e}")))?;
        let raw: f64 = dist.sample(self.rng);
        let precision = if raw.is_nan() { PRECISION_FLOOR } else { raw };
        let clamped = precision.clamp(PRECISION_FLOOR, PRECISION_CEIL);
        if clamped != precision {
            self.clamps += 1;
        }
        Ok(1.0 / clamped)
    }
}

/// Draws every variance component from its conjugate conditional.
///
/// The error precision uses the Jeffreys prior, `Gamma(MT/2, SS/2)`; the
/// others use `Gamma(a + count/2, b + sum of squares/2)`.
pub fn sample_variances<T: Scalar, R: Rng + ?Sized>(
    ctx: &FitContext<T>,
    coef: &CoefState<T>,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<VarianceDraw<T>> {
    if !coef.is_finite() {
        return Err(Error::InvalidState("non-finite coefficients".into()));
    }
    let mut sub = substream(next_key(rng), 0);
    let mut draw = PrecisionDraw { rng: &mut sub, clamps: 0 };
    let k = ctx.k() as f64;

    let ss = squared_residual_norm(ctx, coef).as_f64();
    let scale = ctx.ss_outside.as_f64().abs().max(1.0);
    if ss < -1e-8 * scale {
        return Err(Error::Numerical(format!("negative residual sum of squares {ss:e}")));
    }
    let mt = (ctx.n_curves() * ctx.n_points) as f64;
    let sigma2_eps = draw.variance(mt / 2.0, ss.max(0.0) / 2.0)?;

    let mut sigma2_alpha = Vec::with_capacity(ctx.n_alpha());
    for l in 0..ctx.n_alpha() {
        if l == 0 && !config.intercept_variance_sampled {
            sigma2_alpha.push(FIXED_INTERCEPT_VARIANCE);
            continue;
        }
        let sum: f64 = coef.alpha.row(l).iter().map(|v| v.as_f64().powi(2)).sum();
        sigma2_alpha.push(draw.variance(config.a + k / 2.0, config.b + sum / 2.0)?);
    }

    let n = ctx.n_subjects();
    let sum_gamma: f64 = coef.gamma.iter().map(|v| v.as_f64().powi(2)).sum();
    let sigma2_gamma = draw.variance(config.a + n as f64 * k / 2.0, config.b + sum_gamma / 2.0)?;

    let mut sigma2_omega = Vec::with_capacity(n);
    for i in 0..n {
        let rows = ctx.groups.rows(i);
        let m_i = rows.len() as f64;
        let sum: f64 = coef
            .omega
            .rows(rows.start, rows.len())
            .iter()
            .map(|v| v.as_f64().powi(2))
            .sum();
        sigma2_omega.push(draw.variance(config.a + m_i * k / 2.0, config.b + sum / 2.0)?);
    }

    let clamps = draw.clamps;
    Ok(VarianceDraw {
        state: VarianceState {
            sigma2_eps: T::lit(sigma2_eps),
            sigma2_alpha: sigma2_alpha.into_iter().map(T::lit).collect(),
            sigma2_gamma: T::lit(sigma2_gamma),
            sigma2_omega: sigma2_omega.into_iter().map(T::lit).collect(),
        },
        clamps,
    })
}
