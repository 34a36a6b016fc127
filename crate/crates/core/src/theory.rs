//! Closed-form rates and bounds.
//!
//! Every formula holds up to universal constants that are not determined
//! explicitly; they are exposed in [`TheoryConstants`] and default to 1, except
//! the weak log-Sobolev constants `a = 32` and `ln c_univ`, which are pinned.
//! Logarithms are natural. Quantities that overflow a double for realistic
//! `(n, d)` are returned on log scale.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `ln c_univ = 3/(14e²)(1/e + 1/2) + 1 + ln(14/3)`.
pub fn log_c_univ() -> f64 {
    3.0 / (14.0 * E * E) * (1.0 / E + 0.5) + 1.0 + (14.0f64 / 3.0).ln()
}

/// Above this `s` the weak log-Sobolev rate function vanishes.
pub fn wlsi_threshold() -> f64 {
    1.0 / E + 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConstants {
    pub kappa: f64,
    pub a: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Overall multiplicative constant `C`.
    pub c: f64,
    pub log_c_univ: f64,
}

impl Default for TheoryConstants {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            a: 32.0,
            c1: 1.0,
            c2: 1.0,
            c3: 1.0,
            c: 1.0,
            log_c_univ: log_c_univ(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryInputs {
    pub n: usize,
    pub d: usize,
    pub r: f64,
    #[serde(default = "one")]
    pub beta: f64,
    /// Curvature constant `c` of a single potential.
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default = "one")]
    pub lipschitz: f64,
    #[serde(default = "one")]
    pub prior_lipschitz: f64,
    /// Overrides the Poincaré floor when set.
    #[serde(default)]
    pub c_p: Option<f64>,
    #[serde(default)]
    pub constants: TheoryConstants,
}

fn one() -> f64 {
    1.0
}

impl TheoryInputs {
    /// Inputs with every constant at its default.
    pub fn new(n: usize, d: usize, r: f64) -> Self {
        Self {
            n,
            d,
            r,
            beta: 1.0,
            c: 1.0,
            lipschitz: 1.0,
            prior_lipschitz: 1.0,
            c_p: None,
            constants: TheoryConstants::default(),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.n < 2 {
            v.push(format!("n = {} must be >= 2", self.n));
        }
        if self.d < 1 {
            v.push("d must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.r) {
            v.push(format!("r = {} must lie in [0, 1)", self.r));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            v.push(format!("beta = {} must be >= 0", self.beta));
        }
        let positive = [
            ("c", self.c),
            ("lipschitz", self.lipschitz),
            ("prior_lipschitz", self.prior_lipschitz),
            ("constants.kappa", self.constants.kappa),
            ("constants.a", self.constants.a),
            ("constants.c1", self.constants.c1),
            ("constants.c2", self.constants.c2),
            ("constants.c3", self.constants.c3),
            ("constants.c", self.constants.c),
            ("constants.log_c_univ", self.constants.log_c_univ),
        ];
        for (name, x) in positive {
            if !(x > 0.0 && x.is_finite()) {
                v.push(format!("{name} = {x} must be positive"));
            }
        }
        if let Some(cp) = self.c_p {
            if !(cp > 0.0 && cp.is_finite()) {
                v.push(format!("c_p = {cp} must be positive"));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    fn ln_n(&self) -> f64 {
        (self.n as f64).ln()
    }

    /// `d ln²n`.
    fn lnb(&self) -> f64 {
        let l = self.ln_n();
        self.d as f64 * l * l
    }

    /// The Poincaré constant in use: the override, else the floor.
    pub fn poincare_constant(&self) -> f64 {
        self.c_p.unwrap_or_else(|| poincare_lower_bound(self))
    }
}

/// Weak log-Sobolev rate `φ(s) = (a/C_P) ln(c_univ/s)` for `s ≤ 1/e + 1/2`,
/// and 0 above, with `a = 32`.
pub fn wlsi_phi(s: f64, c_p: f64) -> f64 {
    wlsi_phi_with(s, c_p, &TheoryConstants::default())
}

pub fn wlsi_phi_with(s: f64, c_p: f64, constants: &TheoryConstants) -> f64 {
    if s > wlsi_threshold() {
        0.0
    } else {
        constants.a / c_p * (constants.log_c_univ - s.ln())
    }
}

/// `κ / (d ln²n)^{(1+r)²}`.
pub fn poincare_lower_bound(inputs: &TheoryInputs) -> f64 {
    let e = (1.0 + inputs.r) * (1.0 + inputs.r);
    inputs.constants.kappa / inputs.lnb().powf(e)
}

/// Averaged floor `κ (n / (L d ln n))^α` with a user-supplied exponent.
pub fn poincare_avg_lower_bound(
    n: usize,
    d: usize,
    lipschitz: f64,
    alpha: f64,
    kappa: f64,
) -> Result<f64> {
    if n < 2 || d == 0 || !(lipschitz > 0.0) || !(alpha >= 0.0) {
        return Err(Error::InvalidInput(
            "need n >= 2, d >= 1, L > 0 and alpha >= 0".into(),
        ));
    }
    let nf = n as f64;
    Ok(kappa * (nf / (lipschitz * d as f64 * nf.ln())).powf(alpha))
}

/// `c_{n,d} = n⁴ (d ln²n)^{1+r}`.
pub fn cnd(inputs: &TheoryInputs) -> f64 {
    (inputs.n as f64).powi(4) * inputs.lnb().powf(1.0 + inputs.r)
}

/// `d^{1+r} (ln n)^{2β(1+r)}`, shared by the oscillation and `J₀` bounds.
fn growth_term(inputs: &TheoryInputs) -> f64 {
    let p = 1.0 + inputs.r;
    (inputs.d as f64).powf(p) * inputs.ln_n().powf(2.0 * inputs.beta * p)
}

/// `ln` of the sup-norm bound on the initial density ratio:
/// `(dr/2) ln(C₁ d/n) + C₂ n d^{1+r} (ln n)^{2β(1+r)}`.
pub fn osc_bound_log(inputs: &TheoryInputs) -> f64 {
    let d = inputs.d as f64;
    let n = inputs.n as f64;
    let first = if inputs.r == 0.0 {
        0.0
    } else {
        d * inputs.r / 2.0 * (inputs.constants.c1 * d / n).ln()
    };
    first + inputs.constants.c2 * n * growth_term(inputs)
}

/// `C (n d^{1+r} (ln n)^{2β(1+r)} + d ln(d/n))`; may be negative.
pub fn j0_bound(inputs: &TheoryInputs) -> f64 {
    let d = inputs.d as f64;
    let n = inputs.n as f64;
    inputs.constants.c * (n * growth_term(inputs) + d * (d / n).ln())
}

fn logsumexp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// `ln` of the time-zero prefactor of the entropy envelope,
/// `C (J₀ + (c_{n,d}/α)[1 + (C_P/α + √C_P) e^{√C_P/√a + C_P/(3α)}] + O_{n,d})`.
pub fn envelope_log_prefactor(j0: f64, inputs: &TheoryInputs, alpha_n: f64) -> f64 {
    let cp = inputs.poincare_constant();
    let a = inputs.constants.a;
    let inner_log = logsumexp(&[
        0.0,
        (cp / alpha_n + cp.sqrt()).ln() + cp.sqrt() / a.sqrt() + cp / (3.0 * alpha_n),
    ]);
    let middle = (cnd(inputs) / alpha_n).ln() + inner_log;
    let positive = logsumexp(&[middle, osc_bound_log(inputs)]);
    let total = if j0 > 0.0 {
        logsumexp(&[positive, j0.ln()])
    } else if j0 < 0.0 {
        positive + (-((-j0).ln() - positive).exp()).ln_1p()
    } else {
        positive
    };
    inputs.constants.c.ln() + total
}

/// `ln` of the entropy envelope at time `t`.
pub fn entropy_envelope_log(t: f64, j0: f64, inputs: &TheoryInputs, alpha_n: f64) -> f64 {
    let b = inputs.poincare_constant().sqrt() / inputs.constants.a.sqrt();
    envelope_log_prefactor(j0, inputs, alpha_n) + 0.25 * (1.0 + t).ln()
        - b * ((1.0 + t).sqrt() - 1.0)
}

/// Envelope `prefactor · (1+t)^{1/4} · exp(−(√C_P/√a)(√(1+t) − 1))` on the
/// relative entropy; `+∞` when it exceeds the double range.
pub fn entropy_envelope(t: f64, j0: f64, inputs: &TheoryInputs, alpha_n: f64) -> f64 {
    entropy_envelope_log(t, j0, inputs, alpha_n).exp()
}

/// Time after which the envelope decreases: `1/(4b²) − 1` with `b = √C_P/√a`,
/// clamped at 0.
pub fn envelope_peak_time(inputs: &TheoryInputs) -> f64 {
    let b2 = inputs.poincare_constant() / inputs.constants.a;
    (0.25 / b2 - 1.0).max(0.0)
}

/// `C (d ln²n)^{(1+r)²} [ln²(1/ε) + n² (d ln²n)^{2(1+r)} + d² ln²d]`.
pub fn mixing_time(eps: f64, inputs: &TheoryInputs) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidInput(format!(
            "eps = {eps} must lie in (0, 1)"
        )));
    }
    let lnb = inputs.lnb();
    let p = 1.0 + inputs.r;
    let n = inputs.n as f64;
    let d = inputs.d as f64;
    let le = eps.ln();
    let ld = d.ln();
    let bracket = le * le + n * n * lnb.powf(2.0 * p) + d * d * ld * ld;
    Ok(inputs.constants.c * lnb.powf(p * p) * bracket)
}

/// `C n^α (d ln²n)^{α(1+r)}`.
pub fn moment_bound(inputs: &TheoryInputs, alpha_mom: f64) -> Result<f64> {
    if !(alpha_mom >= 1.0) {
        return Err(Error::InvalidInput(format!(
            "moment order {alpha_mom} must be >= 1"
        )));
    }
    Ok(inputs.constants.c
        * (inputs.n as f64).powf(alpha_mom)
        * inputs.lnb().powf(alpha_mom * (1.0 + inputs.r)))
}

/// `ln[C₁ (d ln²n)^{r/(1+r)} e^{C₂ n d ln²n} + C₃^d e^{(1+r) n c^{1/(1+r)}/16}]`.
pub fn exp_moment_bound_log(inputs: &TheoryInputs) -> f64 {
    let k = &inputs.constants;
    let lnb = inputs.lnb();
    let n = inputs.n as f64;
    let p = 1.0 + inputs.r;
    let first = k.c1.ln() + inputs.r / p * lnb.ln() + k.c2 * n * lnb;
    let second = inputs.d as f64 * k.c3.ln() + p * n * inputs.c.powf(1.0 / p) / 16.0;
    logsumexp(&[first, second])
}

/// `1 / (n (d ln²n)^{1+r})`.
pub fn alpha_n(inputs: &TheoryInputs) -> f64 {
    1.0 / (inputs.n as f64 * inputs.lnb().powf(1.0 + inputs.r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub alpha_n: f64,
    pub c_p_floor: f64,
    /// Poincaré constant actually used (override or floor).
    pub c_p: f64,
    pub c_nd: f64,
    pub o_nd_log: f64,
    pub j0_bound: f64,
    pub envelope_log_prefactor: f64,
    pub envelope_peak_time: f64,
    pub eps: f64,
    pub t_eps: f64,
    pub moment_bound: f64,
    pub exp_moment_bound_log: f64,
    pub inputs: TheoryInputs,
}

/// Evaluates every calculator at the default jump intensity.
pub fn theory_report(inputs: &TheoryInputs, eps: f64) -> Result<TheoryReport> {
    inputs.validate()?;
    let alpha = alpha_n(inputs);
    let j0 = j0_bound(inputs);
    Ok(TheoryReport {
        alpha_n: alpha,
        c_p_floor: poincare_lower_bound(inputs),
        c_p: inputs.poincare_constant(),
        c_nd: cnd(inputs),
        o_nd_log: osc_bound_log(inputs),
        j0_bound: j0,
        envelope_log_prefactor: envelope_log_prefactor(j0, inputs, alpha),
        envelope_peak_time: envelope_peak_time(inputs),
        eps,
        t_eps: mixing_time(eps, inputs)?,
        moment_bound: moment_bound(inputs, 1.0)?,
        exp_moment_bound_log: exp_moment_bound_log(inputs),
        inputs: *inputs,
    })
}
