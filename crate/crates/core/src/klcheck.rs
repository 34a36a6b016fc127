//! Numerical certification of the curvature hypothesis
//! `c · V(θ)^{−r} ≤ λ_min(∇²V(θ))` and of the growth bounds it implies.
//!
//! All checks run over a finite grid. A pass is therefore evidence, not
//! proof: the hypotheses are global statements.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{
    find_minimizer, min_eigenvalue, MinimizerResult, Potential, PotentialModel, Target,
};

/// Constants of the curvature hypothesis plus the prior Lipschitz constant
/// and the minimizer-localization exponent `β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlParams {
    pub c: f64,
    pub r: f64,
    /// Lipschitz constant `L` of `∇V`.
    pub lipschitz: f64,
    /// `Λ̄`, Lipschitz constant of the prior potential gradient.
    pub prior_lipschitz: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_beta() -> f64 {
    1.0
}

impl KlParams {
    pub fn new(c: f64, r: f64, lipschitz: f64, prior_lipschitz: f64, beta: f64) -> Result<Self> {
        let p = Self {
            c,
            r,
            lipschitz,
            prior_lipschitz,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(0.0..1.0).contains(&self.r) {
            bad.push(format!("r = {} must lie in [0, 1)", self.r));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            bad.push(format!("c = {} must be positive", self.c));
        }
        if !(self.lipschitz > 0.0 && self.lipschitz.is_finite()) {
            bad.push(format!("L = {} must be positive", self.lipschitz));
        }
        if !(self.prior_lipschitz > 0.0 && self.prior_lipschitz.is_finite()) {
            bad.push(format!("Λ̄ = {} must be positive", self.prior_lipschitz));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            bad.push(format!("β = {} must be nonnegative", self.beta));
        }
        if bad.is_empty() {
            let cap = (8.0 * self.lipschitz / (1.0 + self.r)).powf(1.0 + self.r);
            if self.c > cap {
                bad.push(format!("c = {} exceeds (8L/(1+r))^(1+r) = {cap}", self.c));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::HypothesisViolation(bad.join("; ")))
        }
    }

    /// Constants of the power potential `(1 + ‖θ − x‖²)^p`:
    /// `r = (1 − p)/p`, `c = 2p(2p − 1)`, `L = 2p`.
    pub fn power(p: f64, prior_lipschitz: f64) -> Result<Self> {
        Self::new(
            2.0 * p * (2.0 * p - 1.0),
            (1.0 - p) / p,
            2.0 * p,
            prior_lipschitz,
            1.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tolerance {
    /// Slack must be `≥ −tol`.
    Absolute(f64),
    /// Slack must be `≥ −tol · max(1, |rhs|)` pointwise.
    Relative(f64),
}

impl Tolerance {
    fn allowance(self, scale: f64) -> f64 {
        match self {
            Tolerance::Absolute(t) => t,
            Tolerance::Relative(t) => t * scale.abs().max(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub passed: bool,
    /// Most negative slack seen (absolute units).
    pub worst_margin: f64,
    pub worst_point: Vec<f64>,
    pub points_checked: usize,
    pub violations: usize,
    pub tolerance: Tolerance,
    /// Name of the inequality that produced `worst_margin`.
    pub worst_check: String,
}

struct Accumulator {
    tol: Tolerance,
    worst_margin: f64,
    worst_point: Vec<f64>,
    worst_check: &'static str,
    violations: usize,
    points: usize,
}

impl Accumulator {
    fn new(tol: Tolerance) -> Self {
        Self {
            tol,
            worst_margin: f64::INFINITY,
            worst_point: Vec::new(),
            worst_check: "",
            violations: 0,
            points: 0,
        }
    }

    fn record(&mut self, name: &'static str, slack: f64, scale: f64, theta: &[f64]) {
        let slack = if slack.is_nan() {
            f64::NEG_INFINITY
        } else {
            slack
        };
        if slack < -self.tol.allowance(scale) {
            self.violations += 1;
        }
        if slack < self.worst_margin {
            self.worst_margin = slack;
            self.worst_point = theta.to_vec();
            self.worst_check = name;
        }
    }

    fn finish(self) -> CheckReport {
        CheckReport {
            passed: self.violations == 0 && self.points > 0,
            worst_margin: self.worst_margin,
            worst_point: self.worst_point,
            points_checked: self.points,
            violations: self.violations,
            tolerance: self.tol,
            worst_check: self.worst_check.to_string(),
        }
    }
}

fn positive_value<P: Potential + ?Sized>(potential: &P, theta: &[f64]) -> Result<f64> {
    let v = potential.value(theta);
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::HypothesisViolation(format!(
            "potential must be positive and finite, got V = {v} at {theta:?}"
        )));
    }
    Ok(v)
}

/// Checks `λ_min(∇²V(θ)) − c·V(θ)^{−r} ≥ −tol` on every grid point.
pub fn check_hkl<P: Potential + ?Sized>(
    potential: &P,
    params: &KlParams,
    grid: &[Vec<f64>],
    tol: Tolerance,
) -> Result<CheckReport> {
    let mut acc = Accumulator::new(tol);
    for theta in grid {
        let v = positive_value(potential, theta)?;
        let lam = min_eigenvalue(potential, theta)?;
        let floor = params.c * v.powf(-params.r);
        acc.record("curvature", lam - floor, floor, theta);
        acc.points += 1;
    }
    Ok(acc.finish())
}

/// Largest observed difference quotient `‖∇V(a) − ∇V(b)‖ / ‖a − b‖`; a lower
/// bound on the true Lipschitz constant.
pub fn estimate_lipschitz<P: Potential + ?Sized>(
    potential: &P,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<f64> {
    let d = potential.dim();
    let mut ga = vec![0.0; d];
    let mut gb = vec![0.0; d];
    let mut best: Option<f64> = None;
    for (a, b) in pairs {
        let dist = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        if dist < 1e-12 {
            continue;
        }
        potential.gradient(a, &mut ga);
        potential.gradient(b, &mut gb);
        let num = ga
            .iter()
            .zip(&gb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let q = num / dist;
        best = Some(best.map_or(q, |m: f64| m.max(q)));
    }
    best.ok_or_else(|| Error::DegenerateInput("every pair was coincident".into()))
}

/// Checks the gradient and growth inequalities implied by the curvature
/// hypothesis, against the minimizer `θ*` and minimum `m = V(θ*)`:
///
/// ```text
/// (2c/(1−r)) [V^{1−r} − m^{1−r}] ≤ ‖∇V‖² ≤ 2L [V − m]
/// V^{1+r} − m^{1+r} ≥ ((1+r)c/2) ‖θ − θ*‖²
/// V − m ≤ (L/2) ‖θ − θ*‖²
/// V ≥ 2^{−r/(1+r)} (m + ((1+r)c/2)^{1/(1+r)} ‖θ − θ*‖^{2/(1+r)})
/// ```
pub fn check_growth_bounds<P: Potential + ?Sized>(
    potential: &P,
    params: &KlParams,
    minimizer: &MinimizerResult,
    grid: &[Vec<f64>],
    tol: Tolerance,
) -> Result<CheckReport> {
    let KlParams {
        c, r, lipschitz, ..
    } = *params;
    let m = minimizer.min_value;
    if !(m > 0.0) {
        return Err(Error::HypothesisViolation(format!(
            "min V = {m} must be > 0"
        )));
    }
    let d = potential.dim();
    let mut g = vec![0.0; d];
    let mut acc = Accumulator::new(tol);
    let k = (1.0 + r) * c / 2.0;
    for theta in grid {
        let v = positive_value(potential, theta)?;
        potential.gradient(theta, &mut g);
        let gsq: f64 = g.iter().map(|x| x * x).sum();
        let dsq: f64 = theta
            .iter()
            .zip(&minimizer.argmin)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();

        let lower_grad = 2.0 * c * power_gap(v, m, 1.0 - r);
        acc.record(
            "gradient lower bound",
            gsq - lower_grad,
            gsq.max(lower_grad.abs()),
            theta,
        );

        let upper_grad = 2.0 * lipschitz * (v - m);
        acc.record(
            "gradient upper bound",
            upper_grad - gsq,
            gsq.max(upper_grad.abs()),
            theta,
        );

        let grow_lhs = v.powf(1.0 + r) - m.powf(1.0 + r);
        let grow_rhs = k * dsq;
        acc.record(
            "minimal growth",
            grow_lhs - grow_rhs,
            grow_lhs.abs().max(grow_rhs),
            theta,
        );

        let up_rhs = 0.5 * lipschitz * dsq;
        acc.record(
            "maximal growth",
            up_rhs - (v - m),
            up_rhs.max((v - m).abs()),
            theta,
        );

        let power_floor =
            2f64.powf(-r / (1.0 + r)) * (m + k.powf(1.0 / (1.0 + r)) * dsq.powf(1.0 / (1.0 + r)));
        acc.record("power growth", v - power_floor, v.max(power_floor), theta);

        acc.points += 1;
    }
    Ok(acc.finish())
}

/// `(v^s − m^s)/s`, continued by `ln(v/m)` at `s = 0`.
fn power_gap(v: f64, m: f64, s: f64) -> f64 {
    let l = (v / m).ln();
    if s == 0.0 {
        l
    } else {
        m.powf(s) * (s * l).exp_m1() / s
    }
}

/// Constants for `U_{ν_n}` given per-observation constants:
/// `(c·n^{1+r}, r)` with gradient Lipschitz constant `nL + Λ̄`.
pub fn compose_posterior_kl(params: &KlParams, n: usize) -> Result<KlParams> {
    params.validate()?;
    if n == 0 {
        return Err(Error::InvalidInput("n must be >= 1".into()));
    }
    let nf = n as f64;
    KlParams::new(
        params.c * nf.powf(1.0 + params.r),
        params.r,
        nf * params.lipschitz + params.prior_lipschitz,
        params.prior_lipschitz,
        params.beta,
    )
}

/// Slack constants for the minimizer-localization check; the hypothesis
/// holds up to unspecified universal constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HminSettings {
    #[serde(default = "default_kappa")]
    pub kappa1: f64,
    #[serde(default = "default_kappa")]
    pub kappa2: f64,
    /// Scale `M_{n,d}` of the per-observation minima. Defaults to
    /// `n·d·ℓ^{2β}` with `ℓ = max(1, ln n)`.
    #[serde(default)]
    pub m_nd: Option<f64>,
}

fn default_kappa() -> f64 {
    10.0
}

impl Default for HminSettings {
    fn default() -> Self {
        Self {
            kappa1: 10.0,
            kappa2: 10.0,
            m_nd: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HminReport {
    pub check: CheckReport,
    pub max_argmin_norm: f64,
    pub max_min_value: f64,
    pub argmin_threshold: f64,
    pub min_value_threshold: f64,
}

/// Localization of the per-observation minimizers:
/// `max_i ‖argmin U_{X_i}‖ ≤ κ₁ √d ℓ^β` and `max_i min U_{X_i} ≤ κ₂ M_{n,d}`.
pub fn check_hmin(
    model: &PotentialModel,
    beta: f64,
    settings: &HminSettings,
    tol: Tolerance,
) -> Result<HminReport> {
    let n = model.n();
    let d = model.dim();
    let log_factor = (n as f64).ln().max(1.0);
    let mut max_norm: f64 = 0.0;
    let mut max_min = f64::NEG_INFINITY;
    let mut worst_point = Vec::new();
    for i in 0..n {
        let pot = model.potential(Target::Observation(i));
        let res = find_minimizer(&pot, model.observations().point(i), 1e-9)?;
        let nrm = res.argmin.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm >= max_norm {
            max_norm = nrm;
            worst_point = res.argmin.clone();
        }
        max_min = max_min.max(res.min_value);
    }
    let argmin_threshold = settings.kappa1 * (d as f64).sqrt() * log_factor.powf(beta);
    let m_nd = settings
        .m_nd
        .unwrap_or_else(|| n as f64 * d as f64 * log_factor.powf(2.0 * beta));
    let min_value_threshold = settings.kappa2 * m_nd;
    let mut acc = Accumulator::new(tol);
    acc.record(
        "argmin localization",
        argmin_threshold - max_norm,
        argmin_threshold,
        &worst_point,
    );
    acc.record(
        "minimum size",
        min_value_threshold - max_min,
        min_value_threshold,
        &worst_point,
    );
    acc.points = n;
    Ok(HminReport {
        check: acc.finish(),
        max_argmin_norm: max_norm,
        max_min_value: max_min,
        argmin_threshold,
        min_value_threshold,
    })
}

/// Grid of `random + radial` points: `random` draws from `N(center, σ²I)`
/// and `radial` deterministic points along fixed directions out to radius
/// `10√d` around `center`.
pub fn build_grid(
    center: &[f64],
    sigma2: f64,
    random: usize,
    radial: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let d = center.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = sigma2.sqrt();
    let mut grid = Vec::with_capacity(random + radial);
    for _ in 0..random {
        grid.push(
            center
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + sd * z
                })
                .collect(),
        );
    }
    let dirs = directions(d);
    let r_max = 10.0 * (d as f64).sqrt();
    let per_dir = radial.div_ceil(dirs.len()).max(1);
    'outer: for k in 1..=per_dir {
        let rad = r_max * k as f64 / per_dir as f64;
        for dir in &dirs {
            if grid.len() >= random + radial {
                break 'outer;
            }
            grid.push(center.iter().zip(dir).map(|(c, u)| c + rad * u).collect());
        }
    }
    grid
}

fn directions(d: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..16)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / 8.0;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let mut v = Vec::new();
            for k in 0..d {
                for s in [1.0, -1.0] {
                    let mut e = vec![0.0; d];
                    e[k] = s;
                    v.push(e);
                }
            }
            let u = 1.0 / (d as f64).sqrt();
            v.push(vec![u; d]);
            v.push(vec![-u; d]);
            v
        }
    }
}

/// Random pairs of points in `N(center, σ²I)` for Lipschitz estimation.
pub fn random_pairs(
    center: &[f64],
    sigma2: f64,
    count: usize,
    seed: u64,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = sigma2.sqrt();
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        center
            .iter()
            .map(|c| c + sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    (0..count)
        .map(|_| {
            let a = draw(&mut rng);
            let b = draw(&mut rng);
            (a, b)
        })
        .collect()
}
