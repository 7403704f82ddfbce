//! Blocked Gibbs sampling for Bayesian longitudinal function-on-scalar
//! regression.
//!
//! Curves observed on a common grid are expanded in a penalized B-spline
//! basis reparametrized to have a diagonal Gram matrix. The model then splits
//! into one scalar mixed model per basis coefficient, and the sampler draws
//! fixed effects, subject effects and replicate effects jointly in closed
//! form before updating the variance components.
//!
//! ```no_run
//! use flfosr::{simulate, sampler, diagnostics};
//!
//! let sim = simulate::simulate_dataset(&Default::default()).unwrap();
//! let ctx = sampler::precompute(&sim.dataset, &sim.basis).unwrap();
//! let draws = sampler::run_gibbs(&ctx, &Default::default()).unwrap();
//! let eff = diagnostics::efficiency_report(&draws, &sim.basis).unwrap();
//! println!("{}", eff.relative_efficiency);
//! ```

pub mod basis;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod simulate;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;

pub type OrthoBasis64 = basis::OrthoBasis<f64>;
pub type OrthoBasis32 = basis::OrthoBasis<f32>;
pub type Dataset64 = data::LongitudinalDataset<f64>;
pub type Dataset32 = data::LongitudinalDataset<f32>;
pub type FitContext64 = sampler::FitContext<f64>;
pub type FitContext32 = sampler::FitContext<f32>;
pub type PosteriorDraws64 = sampler::PosteriorDraws<f64>;
pub type PosteriorDraws32 = sampler::PosteriorDraws<f32>;
