//! Synthetic longitudinal functional data from the basis-expanded model.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{self, OrthoBasis};
use crate::diagnostics::EffectTruth;
use crate::data::{LongitudinalDataset, SubjectIndex, INTERCEPT_NAME};
use crate::error::{Error, Result};
use crate::rng::std_normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovariateLaw {
    /// `x_{i,ℓ} ~ N(0, 1)`, shared by all replicates of subject i.
    #[default]
    SubjectConstant,
    /// `x_{i,j,ℓ} ~ N(0, 1)` independently per replicate.
    PerReplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationDesign {
    pub n: usize,
    /// Replicates per subject.
    pub m: usize,
    /// Number of non-intercept covariates.
    pub l: usize,
    /// Grid length, equally spaced on [0, 1].
    pub t: usize,
    pub k0: usize,
    pub degree: usize,
    pub penalty_order: usize,
    pub eig_tol: f64,
    pub sigma2_alpha: f64,
    pub sigma2_gamma: f64,
    pub sigma2_omega: f64,
    pub sigma2_eps: f64,
    pub covariates: CovariateLaw,
    /// Generate on the raw B-spline basis instead of the orthogonalized one.
    pub raw_basis: bool,
    pub seed: u64,
}

impl Default for SimulationDesign {
    fn default() -> Self {
        Self {
            n: 20,
            m: 5,
            l: 5,
            t: 144,
            k0: basis::DEFAULT_K0,
            degree: basis::DEFAULT_DEGREE,
            penalty_order: basis::DEFAULT_PENALTY_ORDER,
            eig_tol: basis::DEFAULT_EIG_TOL,
            sigma2_alpha: 1.0,
            sigma2_gamma: 1.0,
            sigma2_omega: 1.0,
            sigma2_eps: 10.0,
            covariates: CovariateLaw::SubjectConstant,
            raw_basis: false,
            seed: 0,
        }
    }
}

impl SimulationDesign {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.t == 0 || self.k0 == 0 {
            return Err(Error::InvalidInput("design counts must be at least 1".into()));
        }
        let vars = [self.sigma2_alpha, self.sigma2_gamma, self.sigma2_omega, self.sigma2_eps];
        if vars.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidInput("design variances must be positive".into()));
        }
        Ok(())
    }
}

/// True coefficients and effect functions behind a simulated dataset.
#[derive(Debug, Clone)]
pub struct SimulatedTruth {
    /// (L+1) x K_gen coefficients on the generating basis.
    pub alpha: DMatrix<f64>,
    /// n x K_gen.
    pub gamma: DMatrix<f64>,
    /// M x K_gen.
    pub omega: DMatrix<f64>,
    /// T x (L+1), `α̃*_ℓ(τ_t)`.
    pub alpha_functions: DMatrix<f64>,
    /// T x M noise realization.
    pub noise: DMatrix<f64>,
    /// T x K_gen generating basis.
    pub generating_basis: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub dataset: LongitudinalDataset<f64>,
    pub truth: SimulatedTruth,
    /// Orthogonalized basis on the simulation grid, for fitting.
    pub basis: OrthoBasis<f64>,
}

impl Simulation {
    pub fn effect_truth(&self) -> EffectTruth {
        EffectTruth {
            grid: self.dataset.grid.clone(),
            functions: self.truth.alpha_functions.clone(),
        }
    }
}

/// Draws a dataset: `α*_{k,0} = 1`, `α*_{k,ℓ} ~ N(0, σ²*_α)`,
/// `γ*_{k,i} ~ N(0, σ²*_γ)`, `ω*_{k,i,j} ~ N(0, σ²*_ω)`, covariates per
/// [`CovariateLaw`], then `Y_ij = B β*_ij + ε_ij` with iid `N(0, σ²*_ε)` noise.
pub fn simulate_dataset(design: &SimulationDesign) -> Result<Simulation> {
    design.validate()?;
    let grid = basis::unit_grid(design.t);
    let fit_basis = basis::default_basis(&grid, design.k0, design.degree, design.penalty_order, design.eig_tol)?;
    let gen = if design.raw_basis {
        fit_basis.source.as_ref().expect("orthogonalized basis keeps its source").b0.clone()
    } else {
        fit_basis.b.clone()
    };
    let kg = gen.ncols();
    let (n, m, l) = (design.n, design.m, design.l);
    let rows = n * m;
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);

    let sa = design.sigma2_alpha.sqrt();
    let mut alpha = DMatrix::from_element(l + 1, kg, 1.0);
    for r in 1..=l {
        for k in 0..kg {
            alpha[(r, k)] = sa * std_normal::<f64, _>(&mut rng);
        }
    }

    let mut x = DMatrix::from_element(rows, l + 1, 1.0);
    match design.covariates {
        CovariateLaw::SubjectConstant => {
            for i in 0..n {
                for c in 1..=l {
                    let v = std_normal::<f64, _>(&mut rng);
                    for j in 0..m {
                        x[(i * m + j, c)] = v;
                    }
                }
            }
        }
        CovariateLaw::PerReplicate => {
            for r in 0..rows {
                for c in 1..=l {
                    x[(r, c)] = std_normal::<f64, _>(&mut rng);
                }
            }
        }
    }

    let sg = design.sigma2_gamma.sqrt();
    let gamma = DMatrix::from_fn(n, kg, |_, _| sg * std_normal::<f64, _>(&mut rng));
    let so = design.sigma2_omega.sqrt();
    let omega = DMatrix::from_fn(rows, kg, |_, _| so * std_normal::<f64, _>(&mut rng));
    let se = design.sigma2_eps.sqrt();
    let noise = DMatrix::from_fn(design.t, rows, |_, _| se * std_normal::<f64, _>(&mut rng));

    // β* is M x K_gen; curves are B β*' + noise.
    let mut beta = &x * &alpha + &omega;
    for r in 0..rows {
        let i = r / m;
        for k in 0..kg {
            beta[(r, k)] += gamma[(i, k)];
        }
    }
    let curves = &gen * beta.transpose() + &noise;
    let alpha_functions = &gen * alpha.transpose();

    let mut names = vec![INTERCEPT_NAME.to_string()];
    names.extend((1..=l).map(|c| format!("x{c}")));
    let groups = SubjectIndex::from_counts(&vec![m; n])?;
    let dataset = LongitudinalDataset::new(grid, curves, groups, x, names)?;

    Ok(Simulation {
        dataset,
        truth: SimulatedTruth {
            alpha,
            gamma,
            omega,
            alpha_functions,
            noise,
            generating_basis: gen,
        },
        basis: fit_basis,
    })
}
