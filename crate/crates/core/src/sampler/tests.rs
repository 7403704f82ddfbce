use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::oracle::{
    dense_marginal_weights, joint_moment_check, random_tiny_instance, DenseWorkingModel, TinyInstance,
};

fn instance(seed: u64) -> (TinyInstance, FitContext<f64>) {
    let inst = random_tiny_instance(seed, &[2, 3, 1], 2, 3).unwrap();
    let ctx = precompute(&inst.dataset, &inst.basis).unwrap();
    (inst, ctx)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn weights_by_hand() {
    // d = 1, m = 2, all variances 1: v = 1/2, w = 1/(1 + 1 + 2), c = v w.
    let w = marginal_weights(1.0f64, 2, 1.0, 1.0, 1.0);
    assert_eq!((w.v, w.w, w.c), (0.5, 0.25, 0.125));
    assert!((w.v - 2.0 * w.c - w.w).abs() < 1e-15);
}

#[test]
fn conditional_precisions_by_hand() {
    let (inst, ctx) = instance(1);
    let mut var = inst.variances.clone();
    var.sigma2_eps = 1.0;
    var.sigma2_gamma = 0.5;
    var.sigma2_omega = vec![2.0; 3];
    let s = BlockSampler::new(&ctx);
    let zeros_a = DMatrix::zeros(3, 3);
    let zeros_g = DMatrix::zeros(3, 3);
    let k = 0;
    let dk = ctx.d[k];
    let (q, _) = s.omega_full(&zeros_a, &zeros_g, &var, k);
    assert!(q.iter().all(|&v| (v - (dk + 0.5)).abs() < 1e-14));
    let (qg, _) = s.gamma_partial(&zeros_a, &var, k);
    // Subject 1 has 3 replicates: 1/σ²_γ + d m / (σ²_ε + d σ²_ω).
    assert!((qg[1] - (2.0 + 3.0 * dk / (1.0 + 2.0 * dk))).abs() < 1e-14);
}

#[test]
fn analytic_weights_match_dense() {
    for seed in 0..4 {
        let (inst, ctx) = instance(seed);
        let var = &inst.variances;
        for k in 0..ctx.k() {
            let dense = dense_marginal_weights(&ctx, var, k).unwrap();
            let subject_of = ctx.groups.subject_of();
            for r in 0..ctx.n_curves() {
                for c in 0..ctx.n_curves() {
                    let (i, j) = (subject_of[r], subject_of[c]);
                    let wt = marginal_weights(ctx.d[k], ctx.groups.count(i), var.sigma2_eps, var.sigma2_omega[i], var.sigma2_gamma);
                    let v = if r == c { wt.v } else { 0.0 };
                    let block = if i == j { v - wt.c } else { 0.0 };
                    assert!((dense.v[(r, c)] - v).abs() <= 1e-10 * wt.v);
                    assert!((dense.v_woodbury[(r, c)] - v).abs() <= 1e-10 * wt.v);
                    assert!((dense.marginal[(r, c)] - block).abs() <= 1e-10 * wt.v);
                    let via_w = dense.v[(r, c)] - ctx.d[k] * dense.w[(r, c)];
                    assert!((via_w - block).abs() <= 1e-10 * wt.v);
                }
                let i = subject_of[r];
                let wt = marginal_weights(ctx.d[k], ctx.groups.count(i), var.sigma2_eps, var.sigma2_omega[i], var.sigma2_gamma);
                let row_sum: f64 = dense.marginal.row(r).iter().sum();
                assert!(rel(row_sum, wt.w) < 1e-10);
            }
        }
    }
}

#[test]
fn alpha_marginal_matches_dense() {
    for seed in 0..4 {
        let (inst, ctx) = instance(seed);
        let s = BlockSampler::new(&ctx);
        for k in 0..ctx.k() {
            let dense = DenseWorkingModel::new(&ctx, &inst.variances, k).unwrap();
            let exact = dense.posterior().unwrap().marginal(&dense.alpha_indices());
            let block = s.alpha_marginal(&inst.variances, k);
            let mean = block.mean().unwrap();
            let cov = block.covariance().unwrap();
            assert!((mean - &exact.mean).amax() <= 1e-8 * exact.mean.amax().max(1.0));
            assert!((cov - &exact.covariance).amax() <= 1e-8 * exact.covariance.amax());
        }
    }
}

#[test]
fn gamma_and_omega_conditionals_match_dense() {
    let (inst, ctx) = instance(7);
    let var = &inst.variances;
    let s = BlockSampler::new(&ctx);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let alpha = s.sample_alpha(var, &mut rng).unwrap();
    let gamma = s.sample_gamma(&alpha, var, &mut rng).unwrap();
    for k in 0..ctx.k() {
        let dense = DenseWorkingModel::new(&ctx, var, k).unwrap();
        let post = dense.posterior().unwrap();
        let (ai, gi) = (dense.alpha_indices(), dense.gamma_indices());
        let ag: Vec<usize> = ai.iter().chain(&gi).copied().collect();
        let (_, g_given_a) = post.marginal(&ag).condition(&ai, &alpha.column(k).into_owned()).unwrap();
        let (q, l) = s.gamma_partial(&alpha, var, k);
        for i in 0..ctx.n_subjects() {
            assert!(rel(l[i] / q[i], g_given_a.mean[i]) < 1e-8);
            assert!(rel(1.0 / q[i], g_given_a.covariance[(i, i)]) < 1e-8);
        }
        let given: DVector<f64> = DVector::from_iterator(ag.len(), alpha.column(k).iter().chain(gamma.column(k).iter()).copied());
        let (_, w_given) = post.condition(&ag, &given).unwrap();
        let (qw, lw) = s.omega_full(&alpha, &gamma, var, k);
        for r in 0..ctx.n_curves() {
            assert!(rel(lw[r] / qw[r], w_given.mean[r]) < 1e-8);
            assert!(rel(1.0 / qw[r], w_given.covariance[(r, r)]) < 1e-8);
        }
    }
}

#[test]
fn joint_block_moments() {
    let (inst, ctx) = instance(11);
    let check = joint_moment_check(&ctx, &inst.variances, 20_000, 5).unwrap();
    assert!(check.max_mean_z < 4.0 && check.max_cov_z < 4.0, "{check:?}");
}

#[test]
fn primal_and_dual_agree_in_distribution() {
    let (inst, ctx) = instance(2);
    let exact = BlockSampler::new(&ctx).alpha_marginal(&inst.variances, 1);
    let mean = exact.mean().unwrap();
    let cov = exact.covariance().unwrap();
    let n = 20_000;
    for scheme in [AlphaScheme::Primal, AlphaScheme::Dual] {
        let s = BlockSampler::new(&ctx).scheme(scheme);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut acc = DVector::zeros(3);
        let mut sq = DVector::zeros(3);
        for _ in 0..n {
            let a = s.sample_alpha(&inst.variances, &mut rng).unwrap().column(1).into_owned();
            let e = a - &mean;
            sq += e.component_mul(&e);
            acc += e;
        }
        for j in 0..3 {
            let z = (acc[j] / n as f64) / (cov[(j, j)] / n as f64).sqrt();
            assert!(z.abs() < 4.0, "{scheme:?} mean z {z}");
            let v = sq[j] / n as f64;
            assert!(((v / cov[(j, j)]) - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(), "{scheme:?} var");
        }
    }
}

#[test]
fn dual_whitening_reproduces_precision() {
    let (inst, ctx) = instance(4);
    let s = BlockSampler::new(&ctx);
    for k in 0..ctx.k() {
        let (phi, target) = s.alpha_whitened(&inst.variances, k);
        let block = s.alpha_marginal(&inst.variances, k);
        let mut q = phi.tr_mul(&phi);
        for j in 0..ctx.n_alpha() {
            q[(j, j)] += 1.0 / inst.variances.sigma2_alpha[j];
        }
        assert!((q - &block.precision).amax() < 1e-10 * block.precision.amax());
        assert!((phi.tr_mul(&target) - &block.linear).amax() < 1e-10 * block.linear.amax().max(1.0));
    }
}

#[test]
fn zero_residual_gives_zero_means() {
    let (inst, mut ctx) = instance(5);
    ctx.y.fill(0.0);
    ctx.subject_ysum.fill(0.0);
    for m in ctx.subject_xty.iter_mut() {
        m.fill(0.0);
    }
    let s = BlockSampler::new(&ctx);
    let zero = DMatrix::zeros(ctx.n_alpha(), ctx.k());
    let zg = DMatrix::zeros(ctx.n_subjects(), ctx.k());
    for k in 0..ctx.k() {
        assert!(s.alpha_marginal(&inst.variances, k).linear.iter().all(|&v| v == 0.0));
        assert!(s.gamma_partial(&zero, &inst.variances, k).1.iter().all(|&v| v == 0.0));
        assert!(s.omega_full(&zero, &zg, &inst.variances, k).1.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn residual_identity_matches_curve_space() {
    let (inst, ctx) = instance(6);
    let s = BlockSampler::new(&ctx);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let coef = s.sample_effects(&inst.variances, &mut rng).unwrap();
    let ds = &inst.dataset;
    let mut direct = 0.0;
    for r in 0..ds.n_curves() {
        let i = ds.groups.subject_of()[r];
        let beta = ds.x.row(r) * &coef.alpha + coef.gamma.row(i) + coef.omega.row(r);
        let resid = ds.curves.column(r) - &inst.basis.b * beta.transpose();
        direct += resid.norm_squared();
    }
    assert!(rel(squared_residual_norm(&ctx, &coef), direct) < 1e-10);
}

#[test]
fn variance_block_shapes_and_rates() {
    // n = 20 subjects and K = 15 give the σ²_γ shape a + nK/2 = 150.1.
    let counts = vec![1; 20];
    let inst = random_tiny_instance(3, &counts, 1, 15).unwrap();
    let ctx = precompute(&inst.dataset, &inst.basis).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let coef = BlockSampler::new(&ctx).sample_effects(&inst.variances, &mut rng).unwrap();
    let config = SamplerConfig::default();
    let shape = config.a + 20.0 * 15.0 / 2.0;
    assert!((shape - 150.1).abs() < 1e-12);
    let rate = config.b + coef.gamma.norm_squared() / 2.0;
    let ss = squared_residual_norm(&ctx, &coef);
    let eps_shape = (ctx.n_curves() * ctx.n_points) as f64 / 2.0;

    let n = 20_000;
    let (mut pg, mut pe) = (0.0, 0.0);
    for _ in 0..n {
        let v = sample_variances(&ctx, &coef, &config, &mut rng).unwrap().state;
        pg += 1.0 / v.sigma2_gamma;
        pe += 1.0 / v.sigma2_eps;
    }
    let (pg, pe) = (pg / n as f64, pe / n as f64);
    let tol = |shape: f64| 4.0 / (shape * n as f64).sqrt();
    assert!(rel(pg, shape / rate) < tol(shape));
    assert!(rel(pe, eps_shape / (ss / 2.0)) < tol(eps_shape));
}

#[test]
fn fixed_intercept_variance() {
    let (inst, ctx) = instance(8);
    let config = SamplerConfig { intercept_variance_sampled: false, ..Default::default() };
    let (_, var) = initialize_state(&ctx, &config).unwrap();
    assert_eq!(var.sigma2_alpha[0], FIXED_INTERCEPT_VARIANCE);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let coef = BlockSampler::new(&ctx).sample_effects(&inst.variances, &mut rng).unwrap();
    let v = sample_variances(&ctx, &coef, &config, &mut rng).unwrap();
    assert_eq!(v.state.sigma2_alpha[0], FIXED_INTERCEPT_VARIANCE);
}

#[test]
fn initial_state_is_ridge_solution() {
    let (_, ctx) = instance(9);
    let (coef, var) = initialize_state(&ctx, &SamplerConfig::default()).unwrap();
    let mut g = ctx.xtx.clone();
    for j in 0..ctx.n_alpha() {
        g[(j, j)] += 1.0;
    }
    let want = g.try_inverse().unwrap() * ctx.x.transpose() * &ctx.y;
    assert!((coef.alpha - want).amax() < 1e-10);
    assert!(coef.gamma.iter().chain(coef.omega.iter()).all(|&v| v == 0.0));
    assert_eq!(var, VarianceState::uniform(1.0, ctx.n_alpha(), ctx.n_subjects()));
}

#[test]
fn config_and_state_validation() {
    assert!(SamplerConfig { n_keep: 0, ..Default::default() }.validate().is_err());
    assert!(SamplerConfig { thin: 0, ..Default::default() }.validate().is_err());
    assert!(SamplerConfig { a: 0.0, ..Default::default() }.validate().is_err());
    let mut v = VarianceState::uniform(1.0, 2, 2);
    assert!(v.validate().is_ok());
    v.sigma2_omega[1] = f64::NAN;
    assert!(v.validate().is_err());
    let (_, ctx) = instance(0);
    let bad = VarianceState::uniform(1.0, 1, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(BlockSampler::new(&ctx).sample_alpha(&bad, &mut rng).is_err());
}

#[test]
fn chain_is_deterministic_and_thread_invariant() {
    let (_, ctx) = instance(10);
    let config = SamplerConfig { n_keep: 30, n_burn: 20, thin: 2, seed: 77, retain_random_effects: true, ..Default::default() };
    let a = run_gibbs(&ctx, &config).unwrap();
    let b = run_gibbs(&ctx, &config).unwrap();
    let c = run_gibbs(&ctx, &SamplerConfig { parallel_k: true, ..config.clone() }).unwrap();
    assert_eq!(a.len(), 30);
    assert_eq!(a.alpha, b.alpha);
    assert_eq!(a.alpha, c.alpha);
    assert_eq!(a.gamma, c.gamma);
    assert_eq!(a.omega, c.omega);
    assert_eq!(a.variances, c.variances);
    let d = run_gibbs(&ctx, &SamplerConfig { seed: 78, ..config }).unwrap();
    assert_ne!(a.alpha, d.alpha);
}

#[test]
fn zero_data_shrinks_to_zero() {
    let (mut inst, _) = instance(12);
    inst.dataset.curves.fill(0.0);
    let ctx = precompute(&inst.dataset, &inst.basis).unwrap();
    let draws = run_gibbs(&ctx, &SamplerConfig { n_keep: 200, n_burn: 100, ..Default::default() }).unwrap();
    let mean0: f64 = draws.alpha.iter().map(|a| a.row(0).sum()).sum::<f64>() / (200.0 * ctx.k() as f64);
    assert!(mean0.abs() < 0.1, "{mean0}");
    assert!(draws.clamp_events > 0);
}

#[test]
fn per_k_conditionals_follow_permutation() {
    let (inst, ctx) = instance(13);
    let perm = [2usize, 0, 1];
    let mut b = inst.basis.clone();
    for (new, &old) in perm.iter().enumerate() {
        b.b.set_column(new, &inst.basis.b.column(old));
        b.d[new] = inst.basis.d[old];
    }
    let pctx = precompute(&inst.dataset, &b).unwrap();
    let (s, ps) = (BlockSampler::new(&ctx), BlockSampler::new(&pctx));
    for (new, &old) in perm.iter().enumerate() {
        let a = s.alpha_marginal(&inst.variances, old);
        let p = ps.alpha_marginal(&inst.variances, new);
        assert!((a.precision - p.precision).amax() < 1e-12 * inst.basis.d.max() * 10.0);
        assert!((a.linear - p.linear).amax() < 1e-10);
    }
}

#[test]
fn reconstruction_is_linear_in_draws() {
    let (inst, ctx) = instance(14);
    let draws = run_gibbs(&ctx, &SamplerConfig { n_keep: 5, n_burn: 2, ..Default::default() }).unwrap();
    let effects = reconstruct_effects(&draws, &inst.basis, None).unwrap();
    for (f, a) in effects.iter().zip(&draws.alpha) {
        assert_eq!(*f, &inst.basis.b * a.transpose());
    }
    let chain = alpha_function_chain(&draws, &inst.basis, 1).unwrap();
    assert_eq!(chain.nrows(), 5);
    assert!((chain.row(3).transpose() - effects[3].column(1)).amax() < 1e-12);
    assert!(reconstruct_gamma(&draws, &inst.basis).is_err());
    assert!(alpha_function_chain(&draws, &inst.basis, 9).is_err());
}

#[test]
fn f32_chain_runs() {
    let (inst, _) = instance(15);
    let ds32 = inst.dataset.cast::<f32>();
    let b32: crate::basis::OrthoBasis<f32> = inst.basis.cast();
    let ctx = precompute(&ds32, &b32).unwrap();
    let draws = run_gibbs(&ctx, &SamplerConfig { n_keep: 20, n_burn: 10, ..Default::default() }).unwrap();
    assert!(draws.alpha.iter().all(|a| a.iter().all(|v| v.is_finite())));
}
