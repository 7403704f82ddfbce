use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::steps::{columns_to_matrix, per_k};
use super::{
    sample_variances, BlockSampler, CoefState, FitContext, PosteriorDraws, SamplerConfig, SamplerKind,
    Timing, VarianceState, FIXED_INTERCEPT_VARIANCE,
};
use crate::error::{Error, Result};
use crate::oracle::FullConditionalSampler;
use crate::scalar::Scalar;

/// Starting point: ridge projection `(X'X + I)^-1 X'y_k` for α, zero random
/// effects, unit variances. Consumes no randomness.
pub fn initialize_state<T: Scalar>(
    ctx: &FitContext<T>,
    config: &SamplerConfig,
) -> Result<(CoefState<T>, VarianceState<T>)> {
    let p = ctx.n_alpha();
    let mut gram = ctx.xtx.clone();
    for j in 0..p {
        gram[(j, j)] += T::one();
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numerical("X'X + I is not positive definite".into()))?;
    let cols = per_k(ctx.k(), false, |k| Ok(chol.solve(&ctx.x.tr_mul(&ctx.y.column(k)))))?;
    let alpha = columns_to_matrix(p, cols);
    let coef = CoefState {
        alpha,
        gamma: DMatrix::zeros(ctx.n_subjects(), ctx.k()),
        omega: DMatrix::zeros(ctx.n_curves(), ctx.k()),
    };
    let mut var = VarianceState::uniform(T::one(), p, ctx.n_subjects());
    if !config.intercept_variance_sampled {
        var.sigma2_alpha[0] = T::lit(FIXED_INTERCEPT_VARIANCE);
    }
    Ok((coef, var))
}

/// Runs the joint-block sampler.
pub fn run_gibbs<T: Scalar>(ctx: &FitContext<T>, config: &SamplerConfig) -> Result<PosteriorDraws<T>> {
    run_chain(ctx, config, SamplerKind::Flfosr)
}

/// Runs `n_burn + n_keep * thin` iterations of the chosen sampler: the
/// coefficient block, then the variance block. Every `thin`-th state after
/// burn-in is retained.
pub fn run_chain<T: Scalar>(
    ctx: &FitContext<T>,
    config: &SamplerConfig,
    kind: SamplerKind,
) -> Result<PosteriorDraws<T>> {
    config.validate()?;
    let (mut coef, mut var) = initialize_state(ctx, config)?;
    let joint = BlockSampler::new(ctx)
        .parallel(config.parallel_k)
        .scheme(config.alpha_scheme);
    let naive = FullConditionalSampler::new(ctx).parallel(config.parallel_k);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut draws = PosteriorDraws {
        alpha: Vec::with_capacity(config.n_keep),
        gamma: config.retain_random_effects.then(|| Vec::with_capacity(config.n_keep)),
        omega: config.retain_random_effects.then(|| Vec::with_capacity(config.n_keep)),
        variances: Vec::with_capacity(config.n_keep),
        timing: Timing::default(),
        clamp_events: 0,
        sampler: kind,
        config: config.clone(),
        dataset_fingerprint: ctx.dataset_fingerprint.clone(),
        basis_fingerprint: ctx.basis_fingerprint.clone(),
    };

    let total = config.n_burn + config.n_keep * config.thin;
    let mut clock = Instant::now();
    for iter in 0..total {
        if iter == config.n_burn {
            draws.timing.burn_seconds = clock.elapsed().as_secs_f64();
            clock = Instant::now();
        }
        let mut step = || -> Result<u64> {
            coef = match kind {
                SamplerKind::Flfosr => joint.sample_effects(&var, &mut rng)?,
                SamplerKind::Naive => naive.sweep(&coef, &var, &mut rng)?,
            };
            let vd = sample_variances(ctx, &coef, config, &mut rng)?;
            var = vd.state;
            Ok(vd.clamps)
        };
        draws.clamp_events += step().map_err(|e| e.at_iteration(iter))?;

        if iter >= config.n_burn && (iter - config.n_burn + 1).is_multiple_of(config.thin) {
            draws.alpha.push(coef.alpha.clone());
            if let Some(g) = draws.gamma.as_mut() {
                g.push(coef.gamma.clone());
            }
            if let Some(o) = draws.omega.as_mut() {
                o.push(coef.omega.clone());
            }
            draws.variances.push(var.clone());
        }
    }
    draws.timing.sample_seconds = clock.elapsed().as_secs_f64();
    Ok(draws)
}
