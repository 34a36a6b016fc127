//! Posterior normalizer `Z_n = ∫ exp(−U_{ν_n}(θ)) dθ`.
//!
//! For `d ≤ 2` a tensor composite Simpson rule is used on a box centred at the
//! minimizer of the potential. The half-width is grown until the integrand on
//! the box boundary sits below `boundary_ratio` times its peak. The reported
//! error is the change between the rule on `N` and `N/2` panels per axis.
//! For `d > 2`, importance sampling with a Gaussian proposal.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{find_minimizer, ModelPotential, Potential, PotentialModel, Target};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerMethod {
    TensorQuadrature,
    ImportanceSampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerEstimate {
    pub z: f64,
    /// `ln Z_n`, finite even when `Z_n` under- or overflows.
    pub log_z: f64,
    pub method: NormalizerMethod,
    pub error_estimate: f64,
    /// Box centre and half-width used by tensor quadrature.
    pub center: Vec<f64>,
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSettings {
    /// Simpson panels per axis (rounded up to a multiple of 4).
    pub panels: usize,
    /// Integrand ratio boundary/peak that the box must reach.
    pub boundary_ratio: f64,
    /// Fixed half-width; `None` grows it automatically.
    pub half_width: Option<f64>,
    /// Hard limit for the automatic growth.
    pub max_half_width: f64,
}

impl QuadratureSettings {
    pub fn for_dim(d: usize) -> Self {
        Self {
            panels: if d == 1 { 4000 } else { 400 },
            boundary_ratio: 1e-12,
            half_width: None,
            max_half_width: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportanceSettings {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum NormalizerSettings {
    TensorQuadrature(QuadratureSettings),
    ImportanceSampling(ImportanceSettings),
}

/// `Z_n` for a model's mean potential.
pub fn normalize_posterior(
    model: &PotentialModel,
    settings: &NormalizerSettings,
) -> Result<NormalizerEstimate> {
    let pot: ModelPotential<'_> = model.potential(Target::Mean);
    normalize(&pot, settings)
}

/// `∫ exp(−V)` for an arbitrary convex potential.
pub fn normalize<P: Potential + ?Sized>(
    potential: &P,
    settings: &NormalizerSettings,
) -> Result<NormalizerEstimate> {
    match settings {
        NormalizerSettings::TensorQuadrature(q) => tensor_quadrature(potential, q),
        NormalizerSettings::ImportanceSampling(s) => importance_sampling(potential, s),
    }
}

fn simpson_weights(panels: usize, step: f64) -> Vec<f64> {
    (0..=panels)
        .map(|k| {
            let w = if k == 0 || k == panels {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * step / 3.0
        })
        .collect()
}

struct GridResult {
    integral: f64,
    boundary_max: f64,
}

/// Integrates `exp(−(V − v_min))` over the box with `panels` Simpson panels.
fn grid_integral<P: Potential + ?Sized>(
    potential: &P,
    center: &[f64],
    half_width: f64,
    panels: usize,
    v_min: f64,
) -> GridResult {
    let d = center.len();
    let step = 2.0 * half_width / panels as f64;
    let w = simpson_weights(panels, step);
    let node = |c: f64, k: usize| c - half_width + k as f64 * step;
    let mut integral = 0.0;
    let mut boundary_max: f64 = 0.0;
    match d {
        1 => {
            let mut th = [0.0];
            for k in 0..=panels {
                th[0] = node(center[0], k);
                let f = (-(potential.value(&th) - v_min)).exp();
                integral += w[k] * f;
                if k == 0 || k == panels {
                    boundary_max = boundary_max.max(f);
                }
            }
        }
        2 => {
            let mut th = [0.0; 2];
            for j in 0..=panels {
                th[0] = node(center[0], j);
                let mut row = 0.0;
                for k in 0..=panels {
                    th[1] = node(center[1], k);
                    let f = (-(potential.value(&th) - v_min)).exp();
                    row += w[k] * f;
                    if j == 0 || j == panels || k == 0 || k == panels {
                        boundary_max = boundary_max.max(f);
                    }
                }
                integral += w[j] * row;
            }
        }
        _ => unreachable!("tensor quadrature is limited to d <= 2"),
    }
    GridResult {
        integral,
        boundary_max,
    }
}

fn tensor_quadrature<P: Potential + ?Sized>(
    potential: &P,
    settings: &QuadratureSettings,
) -> Result<NormalizerEstimate> {
    let d = potential.dim();
    if !(1..=2).contains(&d) {
        return Err(Error::InvalidInput(format!(
            "tensor quadrature needs d <= 2 (got {d}); use importance sampling"
        )));
    }
    if settings.panels < 4 {
        return Err(Error::InvalidInput(
            "need at least 4 panels per axis".into(),
        ));
    }
    let panels = settings.panels.div_ceil(4) * 4;
    let min = find_minimizer(potential, &vec![0.0; d], 1e-9)?;
    let center = min.argmin;
    let v_min = min.min_value;
    let threshold = settings.boundary_ratio;
    let log_threshold = -threshold.ln();

    let mut half_width = match settings.half_width {
        Some(w) => w,
        None => {
            // grow along the axes first; the full boundary is re-checked below
            let mut w: f64 = 1.0;
            let mut probe = center.clone();
            'grow: while w < settings.max_half_width {
                for k in 0..d {
                    for sign in [-1.0, 1.0] {
                        probe.copy_from_slice(&center);
                        probe[k] += sign * w;
                        if potential.value(&probe) - v_min < log_threshold {
                            w *= 2.0;
                            continue 'grow;
                        }
                    }
                }
                break;
            }
            w
        }
    };

    loop {
        let fine = grid_integral(potential, &center, half_width, panels, v_min);
        if fine.boundary_max > threshold {
            if settings.half_width.is_some() || half_width * 2.0 > settings.max_half_width {
                return Err(Error::DomainTooSmall {
                    boundary_ratio: fine.boundary_max,
                    suggested_half_width: half_width * 2.0,
                });
            }
            half_width *= 2.0;
            continue;
        }
        let coarse = grid_integral(potential, &center, half_width, panels / 2, v_min);
        let log_z = fine.integral.ln() - v_min;
        let z = log_z.exp();
        let error_estimate = (fine.integral - coarse.integral).abs() * (-v_min).exp();
        return Ok(NormalizerEstimate {
            z,
            log_z,
            method: NormalizerMethod::TensorQuadrature,
            error_estimate,
            center,
            half_width,
        });
    }
}

fn importance_sampling<P: Potential + ?Sized>(
    potential: &P,
    settings: &ImportanceSettings,
) -> Result<NormalizerEstimate> {
    let d = potential.dim();
    if settings.mean.len() != d || settings.std.len() != d {
        return Err(Error::InvalidInput("proposal dimension mismatch".into()));
    }
    if settings.std.iter().any(|s| !(*s > 0.0)) || settings.samples < 2 {
        return Err(Error::InvalidInput(
            "proposal std must be positive and samples >= 2".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let log_norm: f64 = settings
        .std
        .iter()
        .map(|s| 0.5 * (2.0 * std::f64::consts::PI).ln() + s.ln())
        .sum();
    let mut log_w = Vec::with_capacity(settings.samples);
    let mut th = vec![0.0; d];
    for _ in 0..settings.samples {
        let mut log_q = -log_norm;
        for k in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            th[k] = settings.mean[k] + settings.std[k] * z;
            log_q -= 0.5 * z * z;
        }
        log_w.push(-potential.value(&th) - log_q);
    }
    let shift = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m = settings.samples as f64;
    let w: Vec<f64> = log_w.iter().map(|l| (l - shift).exp()).collect();
    let mean = w.iter().sum::<f64>() / m;
    let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    let log_z = mean.ln() + shift;
    Ok(NormalizerEstimate {
        z: log_z.exp(),
        log_z,
        method: NormalizerMethod::ImportanceSampling,
        error_estimate: (var / m).sqrt() * shift.exp(),
        center: settings.mean.clone(),
        half_width: f64::NAN,
    })
}
