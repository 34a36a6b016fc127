//! Statistical model and its Gibbs potentials.
//!
//! For a prior `π₀` and likelihood `p_θ`, each observation `x` carries the
//! potential
//!
//! ```text
//! U_x(θ) = -log π₀(θ) - n log p_θ(x)
//! ```
//!
//! and the posterior is `μ_n ∝ exp(-U_{ν_n})` with `U_{ν_n} = (1/n) Σᵢ U_{Xᵢ}`.
//! Two likelihoods are built in: a Gaussian location model (closed-form
//! posterior, strongly convex) and a "power" model whose negative
//! log-likelihood is `scale · (1 + ‖θ − x‖²)^p`, `p ∈ [1/2, 1]`, which is
//! only weakly convex.

mod optim;
mod quadrature;

pub use optim::{find_minimizer, min_eigenvalue, symmetric_min_eigenvalue, MinimizerResult};
pub use quadrature::{
    normalize, normalize_posterior, ImportanceSettings, NormalizerEstimate, NormalizerMethod,
    NormalizerSettings, QuadratureSettings,
};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A scalar function on `R^d` with a hand-coded gradient and, optionally, an
/// analytic Hessian.
pub trait Potential: Sync {
    fn dim(&self) -> usize;
    fn value(&self, theta: &[f64]) -> f64;
    fn gradient(&self, theta: &[f64], out: &mut [f64]);
    /// Analytic Hessian if available; callers fall back to finite differences.
    fn hessian(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        let _ = theta;
        None
    }
}

/// Observations `X₁, …, X_n`, each a point of `R^m`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    dim: usize,
    data: Vec<f64>,
}

impl ObservationSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::InvalidInput("observation set must be non-empty".into()))?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::InvalidInput(
                "observations must have dimension >= 1".into(),
            ));
        }
        let mut data = Vec::with_capacity(points.len() * dim);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "observation {i} has dimension {}, expected {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "observation {i} is not finite"
                )));
            }
            data.extend_from_slice(p);
        }
        Ok(Self { dim, data })
    }

    /// Draws `n` points `center + spread · Z` with `Z` standard Gaussian.
    pub fn generate(n: usize, center: &[f64], spread: f64, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("n must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|_| {
                center
                    .iter()
                    .map(|c| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        c + spread * z
                    })
                    .collect()
            })
            .collect();
        Self::new(points)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in self.iter() {
            for (a, b) in m.iter_mut().zip(p) {
                *a += b;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }
}

/// Log-concave prior `π₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    /// Normalized `N(mean, variance · I)`. Its negative log-density has
    /// minimum `(d/2) ln(2π variance)`, positive iff `variance > 1/(2π)`.
    Gaussian { mean: Vec<f64>, variance: f64 },
    /// `offset + ½ precision ‖θ − mean‖²`, an unnormalized Gaussian with an
    /// explicit positive floor.
    Quadratic {
        mean: Vec<f64>,
        precision: f64,
        offset: f64,
    },
}

impl PriorSpec {
    pub fn dim(&self) -> usize {
        match self {
            PriorSpec::Gaussian { mean, .. } | PriorSpec::Quadratic { mean, .. } => mean.len(),
        }
    }

    fn mean(&self) -> &[f64] {
        match self {
            PriorSpec::Gaussian { mean, .. } | PriorSpec::Quadratic { mean, .. } => mean,
        }
    }

    /// Curvature of the prior potential (its Hessian is `precision · I`).
    pub fn precision(&self) -> f64 {
        match *self {
            PriorSpec::Gaussian { variance, .. } => 1.0 / variance,
            PriorSpec::Quadratic { precision, .. } => precision,
        }
    }

    /// Lipschitz constant `Λ̄` of `∇(−log π₀)`.
    pub fn lipschitz(&self) -> f64 {
        self.precision()
    }

    /// `min_θ −log π₀(θ)`.
    pub fn min_value(&self) -> f64 {
        match *self {
            PriorSpec::Gaussian { variance, .. } => {
                0.5 * self.dim() as f64 * (LN_2PI + variance.ln())
            }
            PriorSpec::Quadratic { offset, .. } => offset,
        }
    }

    pub fn neg_log_density(&self, theta: &[f64]) -> f64 {
        let sq: f64 = theta
            .iter()
            .zip(self.mean())
            .map(|(t, m)| (t - m) * (t - m))
            .sum();
        self.min_value() + 0.5 * self.precision() * sq
    }

    pub fn gradient(&self, theta: &[f64], out: &mut [f64]) {
        let prec = self.precision();
        for ((o, t), m) in out.iter_mut().zip(theta).zip(self.mean()) {
            *o = prec * (t - m);
        }
    }

    fn validate(&self) -> Result<()> {
        let prec = self.precision();
        if !(prec.is_finite() && prec > 0.0) {
            return Err(Error::InvalidInput(
                "prior precision must be positive".into(),
            ));
        }
        if self.mean().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("prior mean must be finite".into()));
        }
        if !(self.min_value() > 0.0) {
            return Err(Error::HypothesisViolation(format!(
                "prior: min(-log π₀) = {} must be > 0",
                self.min_value()
            )));
        }
        Ok(())
    }
}

/// Negative log-likelihood `−log p_θ(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Likelihood {
    /// `x ~ N(θ, noise_variance · I)`.
    Gaussian { noise_variance: f64 },
    /// `scale · (1 + ‖θ − x‖²)^exponent`.
    Power { exponent: f64, scale: f64 },
}

impl Likelihood {
    pub fn value(&self, theta: &[f64], x: &[f64]) -> f64 {
        let sq = sq_dist(theta, x);
        match *self {
            Likelihood::Gaussian { noise_variance } => {
                0.5 * sq / noise_variance
                    + 0.5 * theta.len() as f64 * (LN_2PI + noise_variance.ln())
            }
            Likelihood::Power { exponent, scale } => scale * (1.0 + sq).powf(exponent),
        }
    }

    /// Writes `factor · ∇_θ(−log p_θ(x))` into `out` (overwriting).
    pub fn gradient_scaled(&self, theta: &[f64], x: &[f64], factor: f64, out: &mut [f64]) {
        let coef = match *self {
            Likelihood::Gaussian { noise_variance } => factor / noise_variance,
            Likelihood::Power { exponent, scale } => {
                let sq = sq_dist(theta, x);
                factor * scale * 2.0 * exponent * (1.0 + sq).powf(exponent - 1.0)
            }
        };
        for ((o, t), xi) in out.iter_mut().zip(theta).zip(x) {
            *o = coef * (t - xi);
        }
    }

    /// Adds `factor · ∇²_θ(−log p_θ(x))` into `h`.
    pub fn add_hessian(&self, theta: &[f64], x: &[f64], factor: f64, h: &mut DMatrix<f64>) {
        let d = theta.len();
        match *self {
            Likelihood::Gaussian { noise_variance } => {
                for k in 0..d {
                    h[(k, k)] += factor / noise_variance;
                }
            }
            Likelihood::Power { exponent, scale } => {
                let sq = sq_dist(theta, x);
                let base = factor * scale * 2.0 * exponent * (1.0 + sq).powf(exponent - 1.0);
                let outer = base * 2.0 * (exponent - 1.0) / (1.0 + sq);
                for j in 0..d {
                    let uj = theta[j] - x[j];
                    h[(j, j)] += base;
                    for k in 0..d {
                        h[(j, k)] += outer * uj * (theta[k] - x[k]);
                    }
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Likelihood::Gaussian { noise_variance } => {
                if !(noise_variance.is_finite() && noise_variance > 0.0) {
                    return Err(Error::InvalidInput(
                        "noise_variance must be positive".into(),
                    ));
                }
            }
            Likelihood::Power { exponent, scale } => {
                if !(0.5..=1.0).contains(&exponent) {
                    return Err(Error::InvalidInput(format!(
                        "power exponent {exponent} outside [1/2, 1]"
                    )));
                }
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(Error::InvalidInput("power scale must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Which potential a Hessian or evaluation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Observation(usize),
    Mean,
}

/// Read-only access to the per-observation potentials, as used by the
/// sampler and the estimators.
pub trait ObservationModel: Sync {
    fn num_observations(&self) -> usize;
    fn dim(&self) -> usize;
    /// `U_{X_i}(θ)`.
    fn value_obs(&self, i: usize, theta: &[f64]) -> f64;
    /// `∇U_{X_i}(θ)` written into `out`.
    fn grad_obs(&self, i: usize, theta: &[f64], out: &mut [f64]);
    /// `U_{ν_n}(θ) = (1/n) Σᵢ U_{X_i}(θ)`.
    fn value_mean(&self, theta: &[f64]) -> f64 {
        let n = self.num_observations();
        (0..n).map(|i| self.value_obs(i, theta)).sum::<f64>() / n as f64
    }
}

/// The full statistical model: data, prior and likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialModel {
    observations: ObservationSet,
    prior: PriorSpec,
    likelihood: Likelihood,
}

impl PotentialModel {
    pub fn new(
        observations: ObservationSet,
        prior: PriorSpec,
        likelihood: Likelihood,
    ) -> Result<Self> {
        prior.validate()?;
        likelihood.validate()?;
        if prior.dim() != observations.dim() {
            return Err(Error::InvalidInput(format!(
                "prior dimension {} differs from observation dimension {}",
                prior.dim(),
                observations.dim()
            )));
        }
        Ok(Self {
            observations,
            prior,
            likelihood,
        })
    }

    pub fn observations(&self) -> &ObservationSet {
        &self.observations
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn likelihood(&self) -> &Likelihood {
        &self.likelihood
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn dim(&self) -> usize {
        self.observations.dim()
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "theta has dimension {}, model has {}",
                theta.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::InvalidInput(format!(
                "observation index {i} out of range 0..{}",
                self.n()
            )));
        }
        Ok(())
    }

    /// `U_{X_i}(θ) = −log π₀(θ) + n·(−log p_θ(X_i))`.
    pub fn eval_potential(&self, i: usize, theta: &[f64]) -> Result<f64> {
        self.check_index(i)?;
        self.check_theta(theta)?;
        finite_or_fail(self.value_obs(i, theta), theta)
    }

    pub fn grad_potential(&self, i: usize, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_index(i)?;
        self.check_theta(theta)?;
        let mut g = vec![0.0; self.dim()];
        self.grad_obs(i, theta, &mut g);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::EvaluationFailure {
                theta: theta.to_vec(),
                what: "non-finite gradient".into(),
            });
        }
        Ok(g)
    }

    pub fn eval_mean_potential(&self, theta: &[f64]) -> Result<f64> {
        self.check_theta(theta)?;
        finite_or_fail(self.value_mean(theta), theta)
    }

    pub fn grad_mean_potential(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let mut g = vec![0.0; self.dim()];
        self.grad_mean_into(theta, &mut g);
        Ok(g)
    }

    fn grad_mean_into(&self, theta: &[f64], out: &mut [f64]) {
        let n = self.n();
        let mut buf = vec![0.0; self.dim()];
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..n {
            self.grad_obs(i, theta, &mut buf);
            out.iter_mut().zip(&buf).for_each(|(o, b)| *o += b);
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
    }

    /// Analytic Hessian of the selected potential.
    pub fn hessian(&self, target: Target, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        let d = self.dim();
        let n = self.n() as f64;
        let mut h = DMatrix::from_diagonal_element(d, d, self.prior.precision());
        match target {
            Target::Observation(i) => {
                self.check_index(i)?;
                self.likelihood
                    .add_hessian(theta, self.observations.point(i), n, &mut h);
            }
            Target::Mean => {
                for x in self.observations.iter() {
                    self.likelihood.add_hessian(theta, x, 1.0, &mut h);
                }
            }
        }
        Ok(h)
    }

    /// Smallest eigenvalue of the Hessian of `U_{X_i}` or `U_{ν_n}` at `θ`.
    pub fn hessian_min_eig(&self, target: Target, theta: &[f64]) -> Result<f64> {
        let h = self.hessian(target, theta)?;
        symmetric_min_eigenvalue(&h)
    }

    /// View of a single potential as a [`Potential`].
    pub fn potential(&self, target: Target) -> ModelPotential<'_> {
        ModelPotential {
            model: self,
            target,
        }
    }

    /// The negative log-likelihood of observation `i` alone, `θ ↦ −log p_θ(X_i)`.
    pub fn neg_log_lik(&self, i: usize) -> NegLogLik<'_> {
        NegLogLik { model: self, i }
    }

    /// Closed-form posterior `N(mean, variance·I)` for the Gaussian likelihood.
    pub fn gaussian_posterior(&self) -> Option<(Vec<f64>, f64)> {
        let Likelihood::Gaussian { noise_variance } = self.likelihood else {
            return None;
        };
        let n = self.n() as f64;
        let prior_prec = self.prior.precision();
        let prec = prior_prec + n / noise_variance;
        let sum = {
            let mut s = vec![0.0; self.dim()];
            for x in self.observations.iter() {
                s.iter_mut().zip(x).for_each(|(a, b)| *a += b);
            }
            s
        };
        let mean = self
            .prior
            .mean()
            .iter()
            .zip(&sum)
            .map(|(m, s)| (prior_prec * m + s / noise_variance) / prec)
            .collect();
        Some((mean, 1.0 / prec))
    }
}

fn finite_or_fail(v: f64, theta: &[f64]) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::EvaluationFailure {
            theta: theta.to_vec(),
            what: format!("potential evaluated to {v}"),
        })
    }
}

impl ObservationModel for PotentialModel {
    fn num_observations(&self) -> usize {
        self.n()
    }

    fn dim(&self) -> usize {
        self.observations.dim()
    }

    fn value_obs(&self, i: usize, theta: &[f64]) -> f64 {
        self.prior.neg_log_density(theta)
            + self.n() as f64 * self.likelihood.value(theta, self.observations.point(i))
    }

    fn grad_obs(&self, i: usize, theta: &[f64], out: &mut [f64]) {
        let x = self.observations.point(i);
        self.likelihood
            .gradient_scaled(theta, x, self.n() as f64, out);
        let prec = self.prior.precision();
        for ((o, t), m) in out.iter_mut().zip(theta).zip(self.prior.mean()) {
            *o += prec * (t - m);
        }
    }
}

/// A model potential (`U_{X_i}` or `U_{ν_n}`) viewed as a [`Potential`].
#[derive(Debug, Clone, Copy)]
pub struct ModelPotential<'a> {
    model: &'a PotentialModel,
    target: Target,
}

impl Potential for ModelPotential<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn value(&self, theta: &[f64]) -> f64 {
        match self.target {
            Target::Observation(i) => self.model.value_obs(i, theta),
            Target::Mean => self.model.value_mean(theta),
        }
    }

    fn gradient(&self, theta: &[f64], out: &mut [f64]) {
        match self.target {
            Target::Observation(i) => self.model.grad_obs(i, theta, out),
            Target::Mean => self.model.grad_mean_into(theta, out),
        }
    }

    fn hessian(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        self.model.hessian(self.target, theta).ok()
    }
}

/// `θ ↦ −log p_θ(X_i)` for one observation.
#[derive(Debug, Clone, Copy)]
pub struct NegLogLik<'a> {
    model: &'a PotentialModel,
    i: usize,
}

impl Potential for NegLogLik<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn value(&self, theta: &[f64]) -> f64 {
        self.model
            .likelihood
            .value(theta, self.model.observations.point(self.i))
    }

    fn gradient(&self, theta: &[f64], out: &mut [f64]) {
        self.model.likelihood.gradient_scaled(
            theta,
            self.model.observations.point(self.i),
            1.0,
            out,
        );
    }

    fn hessian(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        let d = self.dim();
        let mut h = DMatrix::zeros(d, d);
        self.model.likelihood.add_hessian(
            theta,
            self.model.observations.point(self.i),
            1.0,
            &mut h,
        );
        Some(h)
    }
}

/// `V(θ) = scale · (1 + ‖θ − center‖²)^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerPotential {
    pub exponent: f64,
    pub scale: f64,
    pub center: Vec<f64>,
}

impl PowerPotential {
    pub fn new(exponent: f64, center: Vec<f64>) -> Self {
        Self {
            exponent,
            scale: 1.0,
            center,
        }
    }

    fn as_likelihood(&self) -> Likelihood {
        Likelihood::Power {
            exponent: self.exponent,
            scale: self.scale,
        }
    }
}

impl Potential for PowerPotential {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, theta: &[f64]) -> f64 {
        self.as_likelihood().value(theta, &self.center)
    }

    fn gradient(&self, theta: &[f64], out: &mut [f64]) {
        self.as_likelihood()
            .gradient_scaled(theta, &self.center, 1.0, out);
    }

    fn hessian(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        let d = self.dim();
        let mut h = DMatrix::zeros(d, d);
        self.as_likelihood()
            .add_hessian(theta, &self.center, 1.0, &mut h);
        Some(h)
    }
}

/// `V(θ) = offset + ½ (θ − center)ᵀ A (θ − center)` with `A` symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPotential {
    pub matrix: DMatrix<f64>,
    pub center: Vec<f64>,
    pub offset: f64,
}

impl QuadraticPotential {
    /// `offset + ‖θ − center‖²`.
    pub fn isotropic(offset: f64, center: Vec<f64>) -> Self {
        let d = center.len();
        Self {
            matrix: DMatrix::from_diagonal_element(d, d, 2.0),
            center,
            offset,
        }
    }
}

impl Potential for QuadraticPotential {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let d = self.dim();
        let mut q = 0.0;
        for j in 0..d {
            let uj = theta[j] - self.center[j];
            for k in 0..d {
                q += uj * self.matrix[(j, k)] * (theta[k] - self.center[k]);
            }
        }
        self.offset + 0.5 * q
    }

    fn gradient(&self, theta: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for j in 0..d {
            out[j] = (0..d)
                .map(|k| self.matrix[(j, k)] * (theta[k] - self.center[k]))
                .sum();
        }
    }

    fn hessian(&self, _theta: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.matrix.clone())
    }
}
