//! Ensemble estimators: the conditional `L²` distance `I_t` of the active
//! observation from uniform, the relative entropy `J_t` of the θ-marginal
//! with respect to the posterior, empirical moments of `U_{ν_n}`, and the
//! generator-consistency residual.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::ObservationModel;
use crate::sampler::{
    apply_generator, run_ensemble, EnsembleSnapshot, SamplerConfig, SamplerKind, TestFunction,
};

/// Bootstrap resamples behind the standard error of `Î_t`.
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Smallest expected number of replicas per bin.
pub const MIN_BIN_COUNT: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalL2Estimate {
    pub value: f64,
    /// Bins actually used (for `d = 2`, the square of the per-axis count).
    pub bins: usize,
    pub per_bin_counts: Vec<usize>,
    pub standard_error: f64,
    /// Expected value `(n − 1)·bins/R` of the estimator when the active
    /// observation is independent of θ.
    pub plug_in_bias: f64,
}

/// Rice rule `⌈2 R^{1/3}⌉`, capped so bins hold at least
/// [`MIN_BIN_COUNT`] replicas on average.
pub fn default_bins(replicas: usize) -> usize {
    let rice = (2.0 * (replicas as f64).cbrt()).ceil() as usize;
    rice.min(replicas / MIN_BIN_COUNT).max(1)
}

/// Assigns each replica in `idx` to an equal-count quantile bin.
fn bin_labels(snap: &EnsembleSnapshot, idx: &[usize], bins: usize) -> Vec<usize> {
    let d = snap.dim;
    let m = idx.len();
    let mut labels = vec![0usize; m];
    let by_axis = |order: &mut [usize], axis: usize| {
        order.sort_by(|&a, &b| {
            snap.theta(idx[a])[axis]
                .total_cmp(&snap.theta(idx[b])[axis])
                .then(a.cmp(&b))
        });
    };
    let mut order: Vec<usize> = (0..m).collect();
    if d == 1 {
        by_axis(&mut order, 0);
        for (rank, &k) in order.iter().enumerate() {
            labels[k] = rank * bins / m;
        }
    } else {
        let per_axis = (bins as f64).sqrt().round().max(1.0) as usize;
        by_axis(&mut order, 0);
        let mut start = 0;
        for col in 0..per_axis {
            let end = (col + 1) * m / per_axis;
            let slab = &mut order[start..end];
            by_axis(slab, 1);
            let len = slab.len();
            for (rank, &k) in slab.iter().enumerate() {
                labels[k] = col * per_axis + rank * per_axis / len.max(1);
            }
            start = end;
        }
    }
    labels
}

fn effective_bins(d: usize, bins: usize) -> usize {
    if d == 1 {
        bins
    } else {
        let k = (bins as f64).sqrt().round().max(1.0) as usize;
        k * k
    }
}

/// `Σ_b (count_b/R) Σ_i n (p̂(i|b) − 1/n)²` over the replicas listed in `idx`,
/// evaluated as `(n/R) Σ_b Σ_i c_{bi}²/c_b − 1` so that integer counts give
/// exact values in degenerate cases.
fn conditional_l2(
    snap: &EnsembleSnapshot,
    idx: &[usize],
    n: usize,
    bins: usize,
) -> (f64, Vec<usize>) {
    let nb = effective_bins(snap.dim, bins);
    let labels = bin_labels(snap, idx, bins);
    let mut counts = vec![0usize; nb];
    let mut table = vec![0usize; nb * n];
    for (k, &b) in labels.iter().enumerate() {
        counts[b] += 1;
        table[b * n + snap.active_obs[idx[k]]] += 1;
    }
    let mut sum = 0.0;
    for b in 0..nb {
        if counts[b] == 0 {
            continue;
        }
        let squares: u64 = table[b * n..(b + 1) * n]
            .iter()
            .map(|&c| (c as u64) * (c as u64))
            .sum();
        sum += squares as f64 / counts[b] as f64;
    }
    let value = (n as f64 * sum / idx.len() as f64 - 1.0).max(0.0);
    (value, counts)
}

/// Estimates `I_t` by quantile binning of θ (`d ≤ 2`).
pub fn estimate_it(
    snap: &EnsembleSnapshot,
    n: usize,
    bins: usize,
    seed: u64,
) -> Result<ConditionalL2Estimate> {
    let r = snap.len();
    if !(1..=2).contains(&snap.dim) {
        return Err(Error::InvalidInput(format!(
            "conditional estimation by binning needs d <= 2, got {}",
            snap.dim
        )));
    }
    if r < 2 {
        return Err(Error::DegenerateInput("need at least two replicas".into()));
    }
    if n == 0 {
        return Err(Error::InvalidInput("n must be >= 1".into()));
    }
    if let Some(&bad) = snap.active_obs.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidInput(format!(
            "active observation {bad} out of range for n = {n}"
        )));
    }
    let mut bins = bins.min(r);
    let idx: Vec<usize> = (0..r).collect();
    let (value, counts) = loop {
        if bins == 0 {
            return Err(Error::DegenerateInput("no non-empty binning exists".into()));
        }
        let (v, c) = conditional_l2(snap, &idx, n, bins);
        if c.iter().all(|&k| k > 0) {
            break (v, c);
        }
        bins -= 1;
    };
    let boot: Vec<f64> = (0..BOOTSTRAP_RESAMPLES as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let sample: Vec<usize> = (0..r).map(|_| rng.random_range(0..r)).collect();
            conditional_l2(snap, &sample, n, bins).0
        })
        .collect();
    let mean = boot.iter().sum::<f64>() / boot.len() as f64;
    let var = boot.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (boot.len() - 1) as f64;
    let nb = counts.len();
    Ok(ConditionalL2Estimate {
        value,
        bins: nb,
        per_bin_counts: counts,
        standard_error: var.sqrt(),
        plug_in_bias: (n as f64 - 1.0) * nb as f64 / r as f64,
    })
}

/// Kernel bandwidth selection for the entropy estimator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// `σ_k (4/((d+2)R))^{1/(d+4)}` per axis.
    #[default]
    Silverman,
    /// `σ_k R^{−1/(d+4)}` per axis.
    Scott,
    /// Silverman bandwidth times a factor.
    ScaledSilverman(f64),
    Fixed(f64),
}

fn axis_std(snap: &EnsembleSnapshot) -> Vec<f64> {
    let d = snap.dim;
    let r = snap.len() as f64;
    (0..d)
        .map(|k| {
            let m = snap.iter().map(|(t, _)| t[k]).sum::<f64>() / r;
            (snap
                .iter()
                .map(|(t, _)| (t[k] - m) * (t[k] - m))
                .sum::<f64>()
                / (r - 1.0))
                .sqrt()
        })
        .collect()
}

pub fn bandwidths(snap: &EnsembleSnapshot, rule: BandwidthRule) -> Vec<f64> {
    let d = snap.dim as f64;
    let r = snap.len() as f64;
    let sd = axis_std(snap);
    let silverman = |s: f64| s * (4.0 / ((d + 2.0) * r)).powf(1.0 / (d + 4.0));
    sd.into_iter()
        .map(|s| match rule {
            BandwidthRule::Silverman => silverman(s),
            BandwidthRule::Scott => s * r.powf(-1.0 / (d + 4.0)),
            BandwidthRule::ScaledSilverman(f) => f * silverman(s),
            BandwidthRule::Fixed(h) => h,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub value: f64,
    /// Per-axis kernel bandwidths.
    pub bandwidth: Vec<f64>,
    pub log_z_used: f64,
    pub standard_error: f64,
    /// Set when the estimate is negative by more than one standard error.
    pub below_zero: bool,
}

/// Kernels further than this many bandwidths (along the sorted axis) are
/// dropped; `exp(−50)` is below double resolution relative to the peak.
const KERNEL_CUTOFF: f64 = 10.0;

/// Leave-one-out Gaussian kernel density at every replica.
fn loo_density(snap: &EnsembleSnapshot, bw: &[f64]) -> Vec<f64> {
    let d = snap.dim;
    let r = snap.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| {
        snap.theta(a)[0]
            .total_cmp(&snap.theta(b)[0])
            .then(a.cmp(&b))
    });
    let sorted: Vec<f64> = order
        .iter()
        .flat_map(|&i| snap.theta(i).iter().copied())
        .collect();
    let inv: Vec<f64> = bw.iter().map(|h| 1.0 / h).collect();
    let norm = bw
        .iter()
        .map(|h| (2.0 * std::f64::consts::PI).sqrt() * h)
        .product::<f64>()
        * (r - 1) as f64;
    let reach = KERNEL_CUTOFF * bw[0];
    let dens_sorted: Vec<f64> = (0..r)
        .into_par_iter()
        .map(|p| {
            let x = &sorted[p * d..(p + 1) * d];
            let mut acc = 0.0;
            let mut visit = |q: usize| {
                let y = &sorted[q * d..(q + 1) * d];
                let mut e = 0.0;
                for k in 0..d {
                    let u = (x[k] - y[k]) * inv[k];
                    e += u * u;
                }
                acc += (-0.5 * e).exp();
            };
            let mut q = p;
            while q > 0 && x[0] - sorted[(q - 1) * d] <= reach {
                q -= 1;
                visit(q);
            }
            let mut q = p + 1;
            while q < r && sorted[q * d] - x[0] <= reach {
                visit(q);
                q += 1;
            }
            acc / norm
        })
        .collect();
    let mut dens = vec![0.0; r];
    for (p, &i) in order.iter().enumerate() {
        dens[i] = dens_sorted[p];
    }
    dens
}

/// `Ĵ_t = mean_r [ln n̂(θ_r) + U_{ν_n}(θ_r) + ln Z_n]` with a leave-one-out
/// Gaussian kernel density `n̂` (`d ≤ 3`).
pub fn estimate_jt<M: ObservationModel + ?Sized>(
    snap: &EnsembleSnapshot,
    model: &M,
    log_z: f64,
    rule: BandwidthRule,
) -> Result<EntropyEstimate> {
    let r = snap.len();
    if snap.dim > 3 {
        return Err(Error::InvalidInput(format!(
            "kernel entropy estimation is limited to d <= 3, got {}",
            snap.dim
        )));
    }
    if snap.dim != model.dim() {
        return Err(Error::InvalidInput(
            "snapshot and model dimensions differ".into(),
        ));
    }
    if r < 2 {
        return Err(Error::DegenerateInput("need at least two replicas".into()));
    }
    let bw = bandwidths(snap, rule);
    if bw.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
        return Err(Error::DegenerateInput(format!(
            "bandwidth {bw:?} is not positive; replicas may coincide"
        )));
    }
    let dens = loo_density(snap, &bw);
    let mut terms = Vec::with_capacity(r);
    for (i, (theta, _)) in snap.iter().enumerate() {
        if !(dens[i] > 0.0) {
            return Err(Error::BandwidthUnderflow {
                replica: i,
                bandwidth: bw[0],
            });
        }
        terms.push(dens[i].ln() + model.value_mean(theta) + log_z);
    }
    let (value, se) = mean_and_se(&terms);
    Ok(EntropyEstimate {
        value,
        bandwidth: bw,
        log_z_used: log_z,
        standard_error: se,
        below_zero: value < -se,
    })
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// `(1/R) Σ_r U_{ν_n}(θ_r)^α` and its standard error.
pub fn estimate_moments<M: ObservationModel + ?Sized>(
    snap: &EnsembleSnapshot,
    model: &M,
    alpha_mom: f64,
) -> Result<(f64, f64)> {
    if !(alpha_mom >= 1.0) {
        return Err(Error::InvalidInput(format!(
            "moment order {alpha_mom} must be >= 1"
        )));
    }
    if snap.is_empty() {
        return Err(Error::DegenerateInput("empty snapshot".into()));
    }
    let xs: Vec<f64> = snap
        .iter()
        .map(|(t, _)| model.value_mean(t).powf(alpha_mom))
        .collect();
    Ok(mean_and_se(&xs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorCheck {
    /// `(Ê[f]_{t+Δt} − Ê[f]_t)/Δt`.
    pub time_derivative: f64,
    pub time_derivative_se: f64,
    /// `Ê[L f]_t`.
    pub generator_mean: f64,
    pub generator_se: f64,
    /// `|time_derivative − generator_mean|`.
    pub residual: f64,
    /// `|generator_mean|` plus the two standard errors in quadrature.
    pub scale: f64,
    /// Residual against the trapezoid average `½(Ê[L f]_t + Ê[L f]_{t+Δt})`,
    /// which removes the `O(Δt)` quadrature bias.
    pub residual_trapezoid: f64,
    /// Nonzero residual with zero scale.
    pub inconsistent: bool,
}

/// Compares the time derivative of `E[f(θ_t, X_t)]` with `E[(L f)(θ_t, X_t)]`.
/// Both times come from the same replicas, so the finite difference uses
/// common random numbers.
pub fn generator_consistency<M, F>(
    model: &M,
    cfg: &SamplerConfig,
    f: &F,
    t: f64,
    dt: f64,
    replicas: usize,
) -> Result<GeneratorCheck>
where
    M: ObservationModel + ?Sized,
    F: TestFunction + ?Sized,
{
    if !(dt >= 10.0 * cfg.h) || !(t >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "need t >= 0 and dt >= 10 h (dt = {dt}, h = {})",
            cfg.h
        )));
    }
    if replicas < 2 {
        return Err(Error::InvalidInput("need at least two replicas".into()));
    }
    let mut run = cfg.clone();
    run.horizon = t + dt;
    let ens = run_ensemble(model, &run, SamplerKind::Slmc, &[t, t + dt], replicas)?;
    let (a, b) = (&ens.snapshots[0], &ens.snapshots[1]);
    let mut diff = Vec::with_capacity(replicas);
    let mut gen0 = Vec::with_capacity(replicas);
    let mut trap = Vec::with_capacity(replicas);
    for ((ta, xa), (tb, xb)) in a.iter().zip(b.iter()) {
        diff.push((f.value(tb, xb) - f.value(ta, xa)) / dt);
        let g0 = apply_generator(model, cfg.alpha_n, f, ta, xa);
        let g1 = apply_generator(model, cfg.alpha_n, f, tb, xb);
        gen0.push(g0);
        trap.push(0.5 * (g0 + g1));
    }
    let (lhs, lhs_se) = mean_and_se(&diff);
    let (rhs, rhs_se) = mean_and_se(&gen0);
    let (rhs_t, _) = mean_and_se(&trap);
    let residual = (lhs - rhs).abs();
    let scale = rhs.abs() + lhs_se.hypot(rhs_se);
    Ok(GeneratorCheck {
        time_derivative: lhs,
        time_derivative_se: lhs_se,
        generator_mean: rhs,
        generator_se: rhs_se,
        residual,
        scale,
        residual_trapezoid: (lhs - rhs_t).abs(),
        inconsistent: scale == 0.0 && residual > 0.0,
    })
}
