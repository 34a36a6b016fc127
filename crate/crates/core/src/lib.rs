//! Continuous-time stochastic Langevin Monte Carlo (SLMC) with Poissonian
//! subsampling of observations, for sampling Bayesian posteriors
//! `μ_n ∝ exp(-U_{ν_n})`.
//!
//! The crate is organised around six pieces:
//!
//! | module | what it holds |
//! |--------|---------------|
//! | [`potential`] | observations, priors, per-observation potentials `U_x`, their average, Hessian spectra, minimizers, the normalizer `Z_n` |
//! | [`klcheck`] | numerical certification of the Kurdyka-Łojasiewicz curvature condition and its growth consequences |
//! | [`sampler`] | the jump-diffusion `(θ_t, X_t)`, the full-gradient baseline and the generator `L = L₁ + L₂` |
//! | [`theory`] | closed-form rate and bound calculators |
//! | [`diagnostics`] | ensemble estimators of the conditional L² distance `I_t`, the entropy `J_t`, moments and generator consistency |
//! | [`harness`] | experiment configs, runners, CSV/JSON persistence and the CLI plumbing |
//!
//! Logarithms are natural logarithms everywhere. Observation indices are
//! zero-based.

// `!(x > 0.0)` is used on purpose so that NaN fails domain checks.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod klcheck;
pub mod potential;
pub mod sampler;
pub mod theory;

pub use error::{Error, Result};
