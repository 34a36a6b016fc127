//! Verification suite: certifies declared curvature constants of a model.
//!
//! 1. `H_KL(c, r)` for every per-observation negative log-likelihood on a
//!    grid around its observation.
//! 2. The growth inequalities implied by `H_KL` on the same grids.
//! 3. The composed constants for `U_{ν_n}`, re-checked on a grid around the
//!    posterior mode.
//! 4. Localization of the per-observation minimizers.

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, VerifySpec};
use crate::error::{Error, Result};
use crate::klcheck::{
    build_grid, check_growth_bounds, check_hkl, check_hmin, compose_posterior_kl, CheckReport,
    HminReport, KlParams,
};
use crate::potential::{find_minimizer, PotentialModel, Target};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationBundle {
    pub passed: bool,
    pub declared: KlParams,
    /// Worst case over all observations.
    pub per_observation_hkl: CheckReport,
    pub growth_bounds: CheckReport,
    pub composed: KlParams,
    pub posterior_hkl: CheckReport,
    pub hmin: HminReport,
}

fn named<T>(check: &str, res: Result<T>) -> Result<T> {
    res.map_err(|e| Error::Check {
        check: check.to_string(),
        source: Box::new(e),
    })
}

/// Keeps the report with the most negative margin and sums the counters.
fn merge(acc: Option<CheckReport>, next: CheckReport) -> CheckReport {
    let Some(mut acc) = acc else {
        return next;
    };
    acc.points_checked += next.points_checked;
    acc.violations += next.violations;
    acc.passed &= next.passed;
    if next.worst_margin < acc.worst_margin {
        acc.worst_margin = next.worst_margin;
        acc.worst_point = next.worst_point;
        acc.worst_check = next.worst_check;
    }
    acc
}

fn grid(spec: &VerifySpec, center: &[f64]) -> Vec<Vec<f64>> {
    let radial = spec.grid_points / 5;
    build_grid(
        center,
        spec.grid_sigma2,
        spec.grid_points - radial,
        radial,
        spec.grid_seed,
    )
}

/// Runs every check against `spec`. A check that cannot run halts the suite
/// with an [`Error::Check`] naming it.
pub fn verify_model(model: &PotentialModel, spec: &VerifySpec) -> Result<VerificationBundle> {
    named("declared constants", spec.kl.validate())?;
    let mut hkl: Option<CheckReport> = None;
    let mut growth: Option<CheckReport> = None;
    for i in 0..model.n() {
        let pot = model.neg_log_lik(i);
        let x = model.observations().point(i);
        let g = grid(spec, x);
        hkl = Some(merge(
            hkl,
            named("check_hkl", check_hkl(&pot, &spec.kl, &g, spec.tolerance))?,
        ));
        let min = named("minimizer", find_minimizer(&pot, x, 1e-9))?;
        let rep = named(
            "check_growth_bounds",
            check_growth_bounds(&pot, &spec.kl, &min, &g, spec.tolerance),
        )?;
        growth = Some(merge(growth, rep));
    }
    let per_observation_hkl = hkl.expect("model has observations");
    let growth_bounds = growth.expect("model has observations");

    let composed = named(
        "compose_posterior_kl",
        compose_posterior_kl(&spec.kl, model.n()),
    )?;
    let mean = model.potential(Target::Mean);
    let mode = named(
        "posterior minimizer",
        find_minimizer(&mean, &model.observations().mean(), 1e-9),
    )?;
    let posterior_hkl = named(
        "posterior check_hkl",
        check_hkl(&mean, &composed, &grid(spec, &mode.argmin), spec.tolerance),
    )?;
    let hmin = named(
        "check_hmin",
        check_hmin(model, spec.kl.beta, &spec.hmin, spec.tolerance),
    )?;
    Ok(VerificationBundle {
        passed: per_observation_hkl.passed
            && growth_bounds.passed
            && posterior_hkl.passed
            && hmin.check.passed,
        declared: spec.kl,
        per_observation_hkl,
        growth_bounds,
        composed,
        posterior_hkl,
        hmin,
    })
}

/// [`verify_model`] on the config's model and `verify` section. Without a
/// `verify` section the closed-form constants of the likelihood are used.
pub fn run_verification_suite(config: &ExperimentConfig) -> Result<VerificationBundle> {
    let model = config.model.build()?;
    let spec = match &config.verify {
        Some(s) => s.clone(),
        None => {
            let (c, r, l) = config.model.likelihood_constants().ok_or_else(|| {
                Error::InvalidInput(
                    "likelihood has no closed-form constants; add a [verify] section".into(),
                )
            })?;
            VerifySpec {
                kl: KlParams {
                    c,
                    r,
                    lipschitz: l,
                    prior_lipschitz: model.prior().lipschitz(),
                    beta: config.theory.beta,
                },
                grid_points: 1000,
                grid_sigma2: 1.0,
                grid_seed: 0,
                tolerance: crate::klcheck::Tolerance::Relative(1e-8),
                hmin: Default::default(),
            }
        }
    };
    verify_model(&model, &spec)
}
