//! Continuous-time stochastic Langevin sampler with Poissonian subsampling.
//!
//! The joint process `(θ_t, X_t)` alternates between an exponential clock of
//! intensity `α_n` that redraws the active observation uniformly, and the
//! over-damped Langevin diffusion `dθ = −∇U_{X_t}(θ) dt + √2 dB_t` driven by
//! that observation. Between events the diffusion is discretized by
//! Euler–Maruyama with step `h`; the last sub-step before a jump or record
//! time is shortened so both are hit exactly.
//!
//! Each replica owns two ChaCha8 streams derived from `(seed, replica)`: one
//! feeds the Brownian increments, the other the initial draw and the jump
//! clock. Jump schedules therefore do not depend on `h`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::ObservationModel;

/// Initial law of the active observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitX {
    Uniform,
    /// Zero-based observation index.
    Fixed(usize),
}

/// Brownian forcing; `Zero` turns the sampler into a gradient flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Gaussian,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Jump intensity; the mean waiting time between switches is `1/α_n`.
    pub alpha_n: f64,
    /// Euler step.
    pub h: f64,
    /// Horizon `T`.
    pub horizon: f64,
    /// Variance of the initial law `N(0, σ² I)`.
    pub sigma2: f64,
    pub seed: u64,
    #[serde(default = "default_init_x")]
    pub init_x: InitX,
    #[serde(default)]
    pub noise: NoiseMode,
}

fn default_init_x() -> InitX {
    InitX::Uniform
}

impl SamplerConfig {
    /// Every violated constraint, each naming its field.
    pub fn violations(&self, n: Option<usize>) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.alpha_n >= 0.0 && self.alpha_n.is_finite()) {
            v.push(format!(
                "alpha_n = {} must be finite and >= 0",
                self.alpha_n
            ));
        }
        if !(self.h >= 0.0 && self.h.is_finite()) {
            v.push(format!("h = {} must be finite and >= 0", self.h));
        } else if self.h == 0.0 && self.horizon > 0.0 {
            v.push("h = 0 cannot reach a positive horizon".into());
        } else if self.alpha_n > 0.0 && self.h > 0.1 / self.alpha_n {
            v.push(format!(
                "h = {} exceeds 1/(10 alpha_n) = {}",
                self.h,
                0.1 / self.alpha_n
            ));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            v.push(format!(
                "horizon = {} must be finite and >= 0",
                self.horizon
            ));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            v.push(format!("sigma2 = {} must be positive", self.sigma2));
        }
        if let (InitX::Fixed(i), Some(n)) = (self.init_x, n) {
            if i >= n {
                v.push(format!("init_x = fixed({i}) is out of range for n = {n}"));
            }
        }
        v
    }

    pub fn validate(&self, n: Option<usize>) -> Result<()> {
        let v = self.violations(n);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// `σ² = ((c₁ + c₂)/2) / (nL + Λ̄)`, the midpoint of the admissible window
/// `c₁/(nL + Λ̄) ≤ σ² ≤ c₂/(nL + Λ̄)`.
pub fn init_sigma(n: usize, lipschitz: f64, prior_lipschitz: f64, c1: f64, c2: f64) -> Result<f64> {
    if !(c2 < 1.0) {
        return Err(Error::HypothesisViolation(format!("c2 = {c2} must be < 1")));
    }
    if !(c1 > 0.0 && c1 <= c2) {
        return Err(Error::InvalidInput(format!(
            "need 0 < c1 <= c2, got c1 = {c1}, c2 = {c2}"
        )));
    }
    if n == 0 || !(lipschitz > 0.0) || !(prior_lipschitz > 0.0) {
        return Err(Error::HypothesisViolation(
            "need n >= 1, L > 0 and prior Lipschitz constant > 0".into(),
        ));
    }
    Ok(0.5 * (c1 + c2) / (n as f64 * lipschitz + prior_lipschitz))
}

/// `α_n = 1 / (n (d ln²n)^{1+r})`.
pub fn default_alpha(n: usize, d: usize, r: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "default alpha needs n >= 2 (got {n})"
        )));
    }
    if d == 0 {
        return Err(Error::InvalidInput("d must be >= 1".into()));
    }
    let ln = (n as f64).ln();
    Ok(1.0 / (n as f64 * (d as f64 * ln * ln).powf(1.0 + r)))
}

/// Arrival times of a Poisson process of intensity `alpha_n` on `[0, horizon]`.
pub fn sample_jump_schedule<R: Rng + ?Sized>(alpha_n: f64, horizon: f64, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::new();
    if !(alpha_n > 0.0) {
        return out;
    }
    let exp = Exp::new(alpha_n).expect("positive rate");
    let mut t = exp.sample(rng);
    while t <= horizon {
        out.push(t);
        t += exp.sample(rng);
    }
    out
}

/// Which drift the sampler integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Subsampled drift `−∇U_{X_t}`.
    Slmc,
    /// Full drift `−∇U_{ν_n}`. With `align_to_jump_clock` the step grid is
    /// cut at the same clock times an SLMC run with this seed would use, so
    /// both samplers take identical steps and share their Brownian increments.
    FullLmc { align_to_jump_clock: bool },
}

/// State of one replica.
#[derive(Debug, Clone)]
pub struct SamplerState {
    pub t: f64,
    pub theta: Vec<f64>,
    pub active_obs: usize,
    pub next_jump_t: f64,
    pub gradient_evals: u64,
    pub steps: u64,
    noise_rng: ChaCha8Rng,
    event_rng: ChaCha8Rng,
    clock: Option<Exp<f64>>,
    grad: Vec<f64>,
    scratch: Vec<f64>,
}

fn replica_rngs(seed: u64, replica: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut noise = ChaCha8Rng::seed_from_u64(seed);
    noise.set_stream(2 * replica);
    let mut event = ChaCha8Rng::seed_from_u64(seed);
    event.set_stream(2 * replica + 1);
    (noise, event)
}

impl SamplerState {
    /// Draws `θ₀ ~ N(0, σ² I)`, then `X₀`, then the first clock ring.
    pub fn initial<M: ObservationModel + ?Sized>(
        model: &M,
        cfg: &SamplerConfig,
        replica: u64,
        with_clock: bool,
    ) -> Self {
        let d = model.dim();
        let n = model.num_observations();
        let (noise_rng, mut event_rng) = replica_rngs(cfg.seed, replica);
        let sd = cfg.sigma2.sqrt();
        let theta: Vec<f64> = (0..d)
            .map(|_| sd * event_rng.sample::<f64, _>(StandardNormal))
            .collect();
        let active_obs = match cfg.init_x {
            InitX::Fixed(i) => i,
            InitX::Uniform => event_rng.random_range(0..n),
        };
        let clock = if with_clock && cfg.alpha_n > 0.0 {
            Some(Exp::new(cfg.alpha_n).expect("positive rate"))
        } else {
            None
        };
        let next_jump_t = match &clock {
            Some(c) => c.sample(&mut event_rng),
            None => f64::INFINITY,
        };
        Self {
            t: 0.0,
            theta,
            active_obs,
            next_jump_t,
            gradient_evals: 0,
            steps: 0,
            noise_rng,
            event_rng,
            clock,
            grad: vec![0.0; d],
            scratch: vec![0.0; d],
        }
    }

    /// Builds a state at an arbitrary point, for single-step use.
    pub fn at(theta: Vec<f64>, active_obs: usize, next_jump_t: f64, seed: u64) -> Self {
        let d = theta.len();
        let (noise_rng, event_rng) = replica_rngs(seed, 0);
        Self {
            t: 0.0,
            theta,
            active_obs,
            next_jump_t,
            gradient_evals: 0,
            steps: 0,
            noise_rng,
            event_rng,
            clock: None,
            grad: vec![0.0; d],
            scratch: vec![0.0; d],
        }
    }

    /// Moves the clock: redraws the active observation and the next ring.
    fn jump(&mut self, n: usize) {
        self.active_obs = self.event_rng.random_range(0..n);
        let wait = self
            .clock
            .as_ref()
            .map_or(f64::INFINITY, |c| c.sample(&mut self.event_rng));
        self.next_jump_t += wait;
    }

    /// Same clock bookkeeping as [`jump`](Self::jump) without changing the
    /// observation, for the aligned full-gradient sampler.
    fn tick(&mut self, n: usize) {
        let _: usize = self.event_rng.random_range(0..n);
        let wait = self
            .clock
            .as_ref()
            .map_or(f64::INFINITY, |c| c.sample(&mut self.event_rng));
        self.next_jump_t += wait;
    }
}

fn euler<M: ObservationModel + ?Sized>(
    model: &M,
    state: &mut SamplerState,
    h: f64,
    noise: NoiseMode,
    full: bool,
) -> Result<()> {
    if h == 0.0 {
        return Ok(());
    }
    let n = model.num_observations();
    if full {
        state.grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            model.grad_obs(i, &state.theta, &mut state.scratch);
            for (g, s) in state.grad.iter_mut().zip(&state.scratch) {
                *g += s;
            }
        }
        let inv = 1.0 / n as f64;
        state.grad.iter_mut().for_each(|g| *g *= inv);
        state.gradient_evals += n as u64;
    } else {
        model.grad_obs(state.active_obs, &state.theta, &mut state.grad);
        state.gradient_evals += 1;
    }
    let amp = (2.0 * h).sqrt();
    let mut sq = 0.0;
    for (th, g) in state.theta.iter_mut().zip(&state.grad) {
        *th -= h * g;
        if noise == NoiseMode::Gaussian {
            let z: f64 = state.noise_rng.sample(StandardNormal);
            *th += amp * z;
        }
        sq += *th * *th;
    }
    state.t += h;
    state.steps += 1;
    let d = state.theta.len() as f64;
    if !sq.is_finite() || sq > 1e12 * d {
        return Err(Error::Divergence {
            t: state.t,
            theta: state.theta.clone(),
            h,
        });
    }
    Ok(())
}

/// One Euler–Maruyama step `θ ← θ − h ∇U_{X}(θ) + √(2h) ξ` for the active
/// observation. The step may not cross the next jump time.
pub fn step_euler<M: ObservationModel + ?Sized>(
    model: &M,
    state: &mut SamplerState,
    h: f64,
    noise: NoiseMode,
) -> Result<()> {
    if !(h >= 0.0) {
        return Err(Error::InvalidInput(format!("step h = {h} must be >= 0")));
    }
    if state.t + h > state.next_jump_t * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(format!(
            "step to {} crosses the jump at {}",
            state.t + h,
            state.next_jump_t
        )));
    }
    euler(model, state, h, noise, false)
}

fn advance_to<M: ObservationModel + ?Sized>(
    model: &M,
    state: &mut SamplerState,
    stop: f64,
    h: f64,
    noise: NoiseMode,
    full: bool,
) -> Result<()> {
    loop {
        let rem = stop - state.t;
        if rem <= 0.0 {
            state.t = state.t.max(stop);
            return Ok(());
        }
        if rem <= h * (1.0 + 1e-9) {
            euler(model, state, rem, noise, full)?;
            state.t = stop;
            return Ok(());
        }
        euler(model, state, h, noise, full)?;
    }
}

/// Recorded path of one replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub thetas: Vec<Vec<f64>>,
    pub active_obs_seq: Vec<usize>,
    pub jump_times: Vec<f64>,
    pub gradient_evals: u64,
    pub steps: u64,
}

fn check_record_times(record_times: &[f64], horizon: f64) -> Result<()> {
    let mut bad = Vec::new();
    for (k, &t) in record_times.iter().enumerate() {
        if !(0.0..=horizon).contains(&t) {
            bad.push(format!(
                "record_times[{k}] = {t} lies outside [0, {horizon}]"
            ));
        }
        if k > 0 && !(t > record_times[k - 1]) {
            bad.push(format!(
                "record_times must be strictly increasing (index {k})"
            ));
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(bad))
    }
}

/// Simulates one replica, calling `record` at every record time.
fn simulate<M, F>(
    model: &M,
    cfg: &SamplerConfig,
    kind: SamplerKind,
    record_times: &[f64],
    replica: u64,
    mut jump_log: Option<&mut Vec<f64>>,
    mut record: F,
) -> Result<SamplerState>
where
    M: ObservationModel + ?Sized,
    F: FnMut(&SamplerState),
{
    let n = model.num_observations();
    let (full, with_clock) = match kind {
        SamplerKind::Slmc => (false, true),
        SamplerKind::FullLmc {
            align_to_jump_clock,
        } => (true, align_to_jump_clock),
    };
    let mut state = SamplerState::initial(model, cfg, replica, with_clock);
    let mut k = 0;
    loop {
        let target = record_times.get(k).copied().unwrap_or(cfg.horizon);
        if state.next_jump_t <= target {
            let tj = state.next_jump_t;
            advance_to(model, &mut state, tj, cfg.h, cfg.noise, full)?;
            if full {
                state.tick(n);
            } else {
                state.jump(n);
            }
            if let Some(log) = jump_log.as_deref_mut() {
                log.push(tj);
            }
        } else {
            advance_to(model, &mut state, target, cfg.h, cfg.noise, full)?;
            if k < record_times.len() {
                record(&state);
                k += 1;
            } else {
                return Ok(state);
            }
        }
    }
}

fn run_single<M: ObservationModel + ?Sized>(
    model: &M,
    cfg: &SamplerConfig,
    kind: SamplerKind,
    record_times: &[f64],
) -> Result<Trajectory> {
    cfg.validate(Some(model.num_observations()))?;
    check_record_times(record_times, cfg.horizon)?;
    let mut traj = Trajectory {
        times: Vec::with_capacity(record_times.len()),
        thetas: Vec::with_capacity(record_times.len()),
        active_obs_seq: Vec::with_capacity(record_times.len()),
        jump_times: Vec::new(),
        gradient_evals: 0,
        steps: 0,
    };
    let mut jumps = Vec::new();
    let end = simulate(model, cfg, kind, record_times, 0, Some(&mut jumps), |s| {
        traj.times.push(s.t);
        traj.thetas.push(s.theta.clone());
        traj.active_obs_seq.push(s.active_obs);
    })?;
    if matches!(kind, SamplerKind::Slmc) {
        traj.jump_times = jumps;
    }
    traj.gradient_evals = end.gradient_evals;
    traj.steps = end.steps;
    Ok(traj)
}

/// Runs one SLMC replica (replica id 0) to the horizon.
pub fn run_slmc<M: ObservationModel + ?Sized>(
    model: &M,
    cfg: &SamplerConfig,
    record_times: &[f64],
) -> Result<Trajectory> {
    run_single(model, cfg, SamplerKind::Slmc, record_times)
}

/// Runs the full-gradient Langevin baseline (replica id 0). `α_n` is
/// ignored; `active_obs_seq` holds the unused initial index draw.
pub fn run_full_lmc<M: ObservationModel + ?Sized>(
    model: &M,
    cfg: &SamplerConfig,
    record_times: &[f64],
) -> Result<Trajectory> {
    run_single(
        model,
        cfg,
        SamplerKind::FullLmc {
            align_to_jump_clock: false,
        },
        record_times,
    )
}

/// `R` replicas of `(θ, active observation)` at one time, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSnapshot {
    pub time: f64,
    pub dim: usize,
    pub thetas: Vec<f64>,
    pub active_obs: Vec<usize>,
}

impl EnsembleSnapshot {
    pub fn new(time: f64, dim: usize, thetas: Vec<f64>, active_obs: Vec<usize>) -> Result<Self> {
        if dim == 0 || thetas.len() != dim * active_obs.len() {
            return Err(Error::InvalidInput(format!(
                "snapshot holds {} coordinates for {} replicas of dimension {dim}",
                thetas.len(),
                active_obs.len()
            )));
        }
        Ok(Self {
            time,
            dim,
            thetas,
            active_obs,
        })
    }

    pub fn len(&self) -> usize {
        self.active_obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active_obs.is_empty()
    }

    pub fn theta(&self, r: usize) -> &[f64] {
        &self.thetas[r * self.dim..(r + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.thetas
            .chunks_exact(self.dim)
            .zip(self.active_obs.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub snapshots: Vec<EnsembleSnapshot>,
    pub replicas: usize,
    pub config: SamplerConfig,
    pub kind: SamplerKind,
    pub gradient_evals: u64,
    pub steps: u64,
}

impl Ensemble {
    pub fn snapshot_at(&self, time: f64) -> Option<&EnsembleSnapshot> {
        self.snapshots.iter().find(|s| s.time == time)
    }
}

/// Recorded thetas, active observations, gradient evaluations and steps of
/// one replica.
type ReplicaRecord = (Vec<f64>, Vec<usize>, u64, u64);

/// Runs `replicas` independent replicas on the current rayon pool. Replica
/// `r` uses streams derived from `(seed, r)`, so the result does not depend
/// on scheduling. The first failure by replica id is returned.
pub fn run_ensemble<M: ObservationModel + ?Sized>(
    model: &M,
    cfg: &SamplerConfig,
    kind: SamplerKind,
    record_times: &[f64],
    replicas: usize,
) -> Result<Ensemble> {
    cfg.validate(Some(model.num_observations()))?;
    check_record_times(record_times, cfg.horizon)?;
    if replicas == 0 {
        return Err(Error::InvalidInput("need at least one replica".into()));
    }
    let d = model.dim();
    let m = record_times.len();
    let results: Vec<Result<ReplicaRecord>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut thetas = Vec::with_capacity(m * d);
            let mut obs = Vec::with_capacity(m);
            let end = simulate(model, cfg, kind, record_times, r, None, |s| {
                thetas.extend_from_slice(&s.theta);
                obs.push(s.active_obs);
            })?;
            Ok((thetas, obs, end.gradient_evals, end.steps))
        })
        .collect();

    let mut snapshots: Vec<EnsembleSnapshot> = record_times
        .iter()
        .map(|&t| EnsembleSnapshot {
            time: t,
            dim: d,
            thetas: Vec::with_capacity(replicas * d),
            active_obs: Vec::with_capacity(replicas),
        })
        .collect();
    let mut gradient_evals = 0;
    let mut steps = 0;
    for res in results {
        let (thetas, obs, evals, st) = res?;
        for (k, snap) in snapshots.iter_mut().enumerate() {
            snap.thetas.extend_from_slice(&thetas[k * d..(k + 1) * d]);
            snap.active_obs.push(obs[k]);
        }
        gradient_evals += evals;
        steps += st;
    }
    Ok(Ensemble {
        snapshots,
        replicas,
        config: cfg.clone(),
        kind,
        gradient_evals,
        steps,
    })
}

/// Test function `f(θ, x)` with its θ-gradient and θ-Laplacian, the input of
/// the generator.
pub trait TestFunction: Sync {
    fn value(&self, theta: &[f64], obs: usize) -> f64;
    fn gradient(&self, theta: &[f64], obs: usize, out: &mut [f64]);
    fn laplacian(&self, theta: &[f64], obs: usize) -> f64;
}

/// `f ≡ c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

/// `f(θ, x) = ‖θ‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquaredNorm;

/// `f(θ, x) = 1{x = X_k}` (zero-based `k`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Indicator(pub usize);

impl TestFunction for Constant {
    fn value(&self, _: &[f64], _: usize) -> f64 {
        self.0
    }
    fn gradient(&self, _: &[f64], _: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    fn laplacian(&self, _: &[f64], _: usize) -> f64 {
        0.0
    }
}

impl TestFunction for SquaredNorm {
    fn value(&self, theta: &[f64], _: usize) -> f64 {
        theta.iter().map(|t| t * t).sum()
    }
    fn gradient(&self, theta: &[f64], _: usize, out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(theta) {
            *o = 2.0 * t;
        }
    }
    fn laplacian(&self, theta: &[f64], _: usize) -> f64 {
        2.0 * theta.len() as f64
    }
}

impl TestFunction for Indicator {
    fn value(&self, _: &[f64], obs: usize) -> f64 {
        if obs == self.0 {
            1.0
        } else {
            0.0
        }
    }
    fn gradient(&self, _: &[f64], _: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    fn laplacian(&self, _: &[f64], _: usize) -> f64 {
        0.0
    }
}

/// `(L f)(θ, X_i) = −⟨∇U_{X_i}(θ), ∇_θ f⟩ + Δ_θ f + (α_n/n) Σ_j [f(θ, X_j) − f(θ, X_i)]`.
pub fn apply_generator<M, F>(model: &M, alpha_n: f64, f: &F, theta: &[f64], obs: usize) -> f64
where
    M: ObservationModel + ?Sized,
    F: TestFunction + ?Sized,
{
    let d = theta.len();
    let n = model.num_observations();
    let mut gu = vec![0.0; d];
    let mut gf = vec![0.0; d];
    model.grad_obs(obs, theta, &mut gu);
    f.gradient(theta, obs, &mut gf);
    let drift: f64 = gu.iter().zip(&gf).map(|(a, b)| a * b).sum();
    let here = f.value(theta, obs);
    let jump: f64 = (0..n).map(|j| f.value(theta, j) - here).sum();
    -drift + f.laplacian(theta, obs) + alpha_n / n as f64 * jump
}
