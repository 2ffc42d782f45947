//! Stable-driven McKean-Vlasov Ornstein-Uhlenbeck dynamics: simulation,
//! measure-flow calculus and propagation-of-chaos verification.
//!
//! The crate is organised bottom-up:
//!
//! * [`linflow`]: matrix exponentials, the coupling kernel `K_t`, mean flow.
//! * [`stable_noise`]: spectral Lévy measures, truncated symbols, jump streams.
//! * [`measures`]: empirical measures and exact Wasserstein distances.
//! * [`functionals`]: measure functionals with flat derivatives.
//! * [`mckv_sim`]: exact and Euler particle solvers, limit-law sampler.
//! * [`ito_check`]: Monte-Carlo check of Itô's formula for measure flows.
//! * [`density_fourier`]: characteristic functions and FFT density inversion.
//! * [`kolmogorov`]: semigroup, measure generator, PDE residual, generator gap.
//! * [`chaos_harness`]: experiment configs, rate sweeps, reports and the CLI.

// `!(x > 0.0)` style guards deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chaos_harness;
pub mod density_fourier;
pub mod error;
pub mod functionals;
pub mod ito_check;
pub mod kolmogorov;
pub mod linflow;
pub mod measures;
pub mod mckv_sim;
pub mod quad;
pub mod rng;
pub mod stable_noise;
pub mod stats;

pub use error::{Error, Result};
