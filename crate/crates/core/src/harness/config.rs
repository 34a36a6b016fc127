//! Experiment configuration: one TOML or JSON file with a strict schema.
//!
//! ```toml
//! version = 1
//! replicas = 1000
//! record_times = [0.0, 0.5, 1.0]
//!
//! [model.prior]
//! kind = "gaussian"
//! mean = [0.0]
//! variance = 1.0
//!
//! [model.likelihood]
//! kind = "gaussian"
//! noise_variance = 1.0
//!
//! [model.observations.generate]
//! n = 10
//! center = [1.0]
//! spread = 1.0
//! seed = 11
//!
//! [sampler]
//! h = 0.001
//! horizon = 1.0
//! seed = 7
//! ```
//!
//! Unknown keys are rejected. Validation reports every violated field at once.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::BandwidthRule;
use crate::error::{Error, Result};
use crate::klcheck::{HminSettings, KlParams, Tolerance};
use crate::potential::{
    Likelihood, NormalizerSettings, ObservationSet, PotentialModel, PriorSpec, QuadratureSettings,
};
use crate::sampler::{default_alpha, init_sigma, InitX, NoiseMode, SamplerConfig, SamplerKind};
use crate::theory::{TheoryConstants, TheoryInputs};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservationSpec {
    Points(Vec<Vec<f64>>),
    Generate {
        n: usize,
        center: Vec<f64>,
        spread: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub prior: PriorSpec,
    pub likelihood: Likelihood,
    pub observations: ObservationSpec,
}

impl ModelSpec {
    pub fn build(&self) -> Result<PotentialModel> {
        let obs = match &self.observations {
            ObservationSpec::Points(p) => ObservationSet::new(p.clone())?,
            ObservationSpec::Generate {
                n,
                center,
                spread,
                seed,
            } => ObservationSet::generate(*n, center, *spread, *seed)?,
        };
        PotentialModel::new(obs, self.prior.clone(), self.likelihood.clone())
    }

    /// Curvature and Lipschitz constants `(c, r, L)` of a single
    /// negative log-likelihood, when they are known in closed form.
    pub fn likelihood_constants(&self) -> Option<(f64, f64, f64)> {
        match self.likelihood {
            Likelihood::Gaussian { noise_variance } => {
                let k = 1.0 / noise_variance;
                Some((k, 0.0, k))
            }
            Likelihood::Power { exponent, scale } if exponent > 0.5 => {
                let p = exponent;
                let r = (1.0 - p) / p;
                Some((
                    scale.powf(1.0 + r) * 2.0 * p * (2.0 * p - 1.0),
                    r,
                    scale * 2.0 * p,
                ))
            }
            Likelihood::Power { .. } => None,
        }
    }
}

/// Sampler settings; `alpha_n` and `sigma2` fall back to the default jump
/// intensity and the midpoint initial variance when omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    #[serde(default)]
    pub alpha_n: Option<f64>,
    pub h: f64,
    pub horizon: f64,
    #[serde(default)]
    pub sigma2: Option<f64>,
    pub seed: u64,
    #[serde(default = "uniform")]
    pub init_x: InitX,
    #[serde(default)]
    pub noise: NoiseMode,
    #[serde(default = "slmc_kind")]
    pub kind: SamplerKind,
}

fn uniform() -> InitX {
    InitX::Uniform
}

fn slmc_kind() -> SamplerKind {
    SamplerKind::Slmc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSpec {
    #[serde(default)]
    pub conditional_l2: bool,
    /// Bin count for the conditional estimator; Rice rule when omitted.
    #[serde(default)]
    pub bins: Option<usize>,
    #[serde(default)]
    pub entropy: bool,
    #[serde(default)]
    pub bandwidth: BandwidthRule,
    #[serde(default)]
    pub normalizer: Option<NormalizerSettings>,
    #[serde(default)]
    pub moments: bool,
    #[serde(default = "one")]
    pub moment_order: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self {
            conditional_l2: false,
            bins: None,
            entropy: false,
            bandwidth: BandwidthRule::Silverman,
            normalizer: None,
            moments: false,
            moment_order: 1.0,
            seed: 0,
        }
    }
}

impl DiagnosticsSpec {
    pub fn any(&self) -> bool {
        self.conditional_l2 || self.entropy || self.moments
    }
}

fn one() -> f64 {
    1.0
}

/// Theory inputs; `n`, `d`, `c`, `r` and the Lipschitz constants default to
/// those of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySpec {
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default)]
    pub c_p: Option<f64>,
    #[serde(default)]
    pub constants: TheoryConstants,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    0.1
}

impl Default for TheorySpec {
    fn default() -> Self {
        Self {
            r: None,
            c: None,
            beta: 1.0,
            c_p: None,
            constants: TheoryConstants::default(),
            eps: 0.1,
        }
    }
}

/// Declared hypothesis constants and grid settings for the verification suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    pub kl: KlParams,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "one")]
    pub grid_sigma2: f64,
    #[serde(default)]
    pub grid_seed: u64,
    #[serde(default = "default_tolerance")]
    pub tolerance: Tolerance,
    #[serde(default)]
    pub hmin: HminSettings,
}

fn default_grid_points() -> usize {
    1000
}

fn default_tolerance() -> Tolerance {
    Tolerance::Relative(1e-8)
}

/// Sampler comparison settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    /// Also run SLMC with `n` times the horizon, so it spends as many
    /// gradient evaluations as the full-gradient run.
    #[serde(default = "yes")]
    pub matched_budget: bool,
    /// Horizon multiple of the full-gradient reference ensemble used when the
    /// posterior has no closed form.
    #[serde(default = "default_reference_factor")]
    pub reference_factor: f64,
}

fn yes() -> bool {
    true
}

fn default_reference_factor() -> f64 {
    10.0
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            matched_budget: true,
            reference_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub model: ModelSpec,
    pub sampler: SamplerSpec,
    pub replicas: usize,
    pub record_times: Vec<f64>,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
    #[serde(default)]
    pub theory: TheorySpec,
    #[serde(default)]
    pub verify: Option<VerifySpec>,
    #[serde(default)]
    pub bench: BenchSpec,
    /// Excluded from the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text),
            Some("toml") => Self::from_toml(&text),
            other => Err(Error::Config(format!(
                "unknown config extension {other:?}; use .toml or .json"
            ))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Every violated field, checked against the built model.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.version != CONFIG_VERSION {
            v.push(format!(
                "version: expected {CONFIG_VERSION}, got {}",
                self.version
            ));
        }
        let model = match self.model.build() {
            Ok(m) => Some(m),
            Err(e) => {
                v.push(format!("model: {e}"));
                None
            }
        };
        let s = &self.sampler;
        if let Some(a) = s.alpha_n {
            if !(a >= 0.0 && a.is_finite()) {
                v.push(format!("sampler.alpha_n: {a} must be finite and >= 0"));
            }
        }
        if let Some(s2) = s.sigma2 {
            if !(s2 > 0.0 && s2.is_finite()) {
                v.push(format!("sampler.sigma2: {s2} must be positive"));
            }
        }
        if let Some(m) = &model {
            match self.sampler_config(m) {
                Ok(cfg) => {
                    for msg in cfg.violations(Some(m.n())) {
                        v.push(format!("sampler: {msg}"));
                    }
                }
                Err(e) => v.push(format!("sampler: {e}")),
            }
        }
        if self.replicas == 0 {
            v.push("replicas: must be >= 1".into());
        }
        if self.diagnostics.any() && self.replicas < 100 {
            v.push(format!(
                "replicas: {} < 100 while estimators are selected",
                self.replicas
            ));
        }
        if self.record_times.is_empty() {
            v.push("record_times: at least one time is required".into());
        }
        for (k, &t) in self.record_times.iter().enumerate() {
            if !(t >= 0.0 && t <= s.horizon) {
                v.push(format!(
                    "record_times[{k}]: {t} lies outside [0, {}]",
                    s.horizon
                ));
            }
            if k > 0 && !(t > self.record_times[k - 1]) {
                v.push(format!(
                    "record_times[{k}]: times must be strictly increasing"
                ));
            }
        }
        if let Some(m) = &model {
            let d = m.dim();
            if self.diagnostics.conditional_l2 && d > 2 {
                v.push(format!(
                    "diagnostics.conditional_l2: needs d <= 2, model has d = {d}"
                ));
            }
            if self.diagnostics.entropy && d > 3 {
                v.push(format!(
                    "diagnostics.entropy: needs d <= 3, model has d = {d}"
                ));
            }
            if self.diagnostics.entropy && d > 2 && self.diagnostics.normalizer.is_none() {
                v.push("diagnostics.normalizer: importance settings are required for d > 2".into());
            }
        }
        if !(self.diagnostics.moment_order >= 1.0) {
            v.push(format!(
                "diagnostics.moment_order: {} must be >= 1",
                self.diagnostics.moment_order
            ));
        }
        if let Some(b) = self.diagnostics.bins {
            if b == 0 {
                v.push("diagnostics.bins: must be >= 1".into());
            }
        }
        if !(self.theory.eps > 0.0 && self.theory.eps < 1.0) {
            v.push(format!(
                "theory.eps: {} must lie in (0, 1)",
                self.theory.eps
            ));
        }
        if let Some(m) = &model {
            if m.n() >= 2 {
                for msg in self.theory_inputs(m).violations() {
                    v.push(format!("theory: {msg}"));
                }
            }
        }
        if let Some(ver) = &self.verify {
            if let Err(e) = ver.kl.validate() {
                v.push(format!("verify.kl: {e}"));
            }
            if ver.grid_points == 0 {
                v.push("verify.grid_points: must be >= 1".into());
            }
            if !(ver.grid_sigma2 > 0.0) {
                v.push("verify.grid_sigma2: must be positive".into());
            }
        }
        if !(self.bench.reference_factor >= 1.0 && self.bench.reference_factor.is_finite()) {
            v.push(format!(
                "bench.reference_factor: {} must be >= 1",
                self.bench.reference_factor
            ));
        }
        if let Some(w) = self.workers {
            if w == 0 {
                v.push("workers: must be >= 1".into());
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

    /// Resolves defaults against the model.
    pub fn sampler_config(&self, model: &PotentialModel) -> Result<SamplerConfig> {
        let s = &self.sampler;
        let r = self
            .theory
            .r
            .or(self.model.likelihood_constants().map(|k| k.1))
            .unwrap_or(0.0);
        let alpha_n = match s.alpha_n {
            Some(a) => a,
            None => default_alpha(model.n(), model.dim(), r)?,
        };
        let sigma2 = match s.sigma2 {
            Some(v) => v,
            None => {
                let l = self.model.likelihood_constants().map_or(1.0, |k| k.2);
                init_sigma(model.n(), l, model.prior().lipschitz(), 0.5, 0.5)?
            }
        };
        Ok(SamplerConfig {
            alpha_n,
            h: s.h,
            horizon: s.horizon,
            sigma2,
            seed: s.seed,
            init_x: s.init_x,
            noise: s.noise,
        })
    }

    pub fn theory_inputs(&self, model: &PotentialModel) -> TheoryInputs {
        let known = self.model.likelihood_constants();
        TheoryInputs {
            n: model.n(),
            d: model.dim(),
            r: self.theory.r.or(known.map(|k| k.1)).unwrap_or(0.0),
            beta: self.theory.beta,
            c: self.theory.c.or(known.map(|k| k.0)).unwrap_or(1.0),
            lipschitz: known.map_or(1.0, |k| k.2),
            prior_lipschitz: model.prior().lipschitz(),
            c_p: self.theory.c_p,
            constants: self.theory.constants,
        }
    }

    pub fn normalizer(&self, d: usize) -> NormalizerSettings {
        self.diagnostics
            .normalizer
            .clone()
            .unwrap_or_else(|| NormalizerSettings::TensorQuadrature(QuadratureSettings::for_dim(d)))
    }

    /// The config without the settings that cannot change any result.
    pub fn canonical(&self) -> Self {
        let mut canon = self.clone();
        canon.output_dir = None;
        canon.workers = None;
        canon
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory and
    /// worker count (neither changes any result).
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.canonical()).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
