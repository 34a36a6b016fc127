//! SLMC against the full-gradient baseline at matched seeds.
//!
//! The full-gradient run cuts its step grid at the SLMC clock times, so both
//! samplers take the same steps and the gradient-evaluation ratio is exactly
//! `n`. Quality is the terminal error of the first and second moments against
//! the closed-form posterior (Gaussian likelihood) or against a longer
//! full-gradient reference ensemble.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{resolve_workers, with_workers, WorkerSource};
use crate::error::Result;
use crate::potential::PotentialModel;
use crate::sampler::{run_ensemble, EnsembleSnapshot, SamplerConfig, SamplerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mean: Vec<f64>,
    /// `E‖θ‖²`.
    pub second_moment: f64,
}

impl MomentSummary {
    pub fn of(snap: &EnsembleSnapshot) -> Self {
        let r = snap.len() as f64;
        let mut mean = vec![0.0; snap.dim];
        let mut sq = 0.0;
        for (theta, _) in snap.iter() {
            for (m, t) in mean.iter_mut().zip(theta) {
                *m += t;
            }
            sq += theta.iter().map(|t| t * t).sum::<f64>();
        }
        mean.iter_mut().for_each(|m| *m /= r);
        Self {
            mean,
            second_moment: sq / r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerOutcome {
    pub sampler: String,
    pub horizon: f64,
    pub wall_time_s: f64,
    pub gradient_evals: Option<u64>,
    pub steps: Option<u64>,
    pub moments: Option<MomentSummary>,
    /// `‖mean − mean*‖`.
    pub mean_error: Option<f64>,
    /// `|E‖θ‖² − E*‖θ‖²|`.
    pub second_moment_error: Option<f64>,
    /// Set when the run failed, e.g. on divergence.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    ClosedForm,
    /// Full-gradient ensemble run for `factor` times the horizon.
    LongRun {
        factor: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n: usize,
    pub replicas: usize,
    pub workers: usize,
    pub workers_source: WorkerSource,
    pub gradient_evals_slmc: Option<u64>,
    pub gradient_evals_lmc: Option<u64>,
    pub wall_time_slmc_s: f64,
    pub wall_time_lmc_s: f64,
    /// `gradient_evals_lmc / gradient_evals_slmc`.
    pub ratio: Option<f64>,
    pub reference_kind: ReferenceKind,
    pub reference: Option<MomentSummary>,
    pub slmc: SamplerOutcome,
    pub lmc: SamplerOutcome,
    /// SLMC with `n` times the horizon: the same gradient budget as `lmc`.
    pub slmc_matched_budget: Option<SamplerOutcome>,
}

fn run_one(
    name: &str,
    model: &PotentialModel,
    cfg: &SamplerConfig,
    kind: SamplerKind,
    replicas: usize,
) -> (SamplerOutcome, Option<EnsembleSnapshot>) {
    let start = Instant::now();
    let res = run_ensemble(model, cfg, kind, &[cfg.horizon], replicas);
    let wall = start.elapsed().as_secs_f64();
    let mut out = SamplerOutcome {
        sampler: name.to_string(),
        horizon: cfg.horizon,
        wall_time_s: wall,
        gradient_evals: None,
        steps: None,
        moments: None,
        mean_error: None,
        second_moment_error: None,
        error: None,
    };
    match res {
        Ok(mut ens) => {
            out.gradient_evals = Some(ens.gradient_evals);
            out.steps = Some(ens.steps);
            let snap = ens.snapshots.pop().expect("one record time");
            out.moments = Some(MomentSummary::of(&snap));
            (out, Some(snap))
        }
        Err(e) => {
            out.error = Some(e.to_string());
            (out, None)
        }
    }
}

fn score(out: &mut SamplerOutcome, reference: &MomentSummary) {
    if let Some(m) = &out.moments {
        let e: f64 = m
            .mean
            .iter()
            .zip(&reference.mean)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        out.mean_error = Some(e.sqrt());
        out.second_moment_error = Some((m.second_moment - reference.second_moment).abs());
    }
}

/// Runs matched-seed SLMC and full-gradient ensembles to the configured
/// horizon. A failure of one sampler is recorded in its outcome and does not
/// stop the others.
pub fn compare_samplers(config: &ExperimentConfig) -> Result<BenchReport> {
    config.validate()?;
    let (workers, workers_source) = resolve_workers(config.workers)?;
    let model = config.model.build()?;
    let cfg = config.sampler_config(&model)?;
    let n = model.n();
    let replicas = config.replicas;
    with_workers(workers, || {
        let (mut slmc, _) = run_one("slmc", &model, &cfg, SamplerKind::Slmc, replicas);
        let aligned = SamplerKind::FullLmc {
            align_to_jump_clock: true,
        };
        let (mut lmc, _) = run_one("full_lmc", &model, &cfg, aligned, replicas);

        let (reference_kind, reference) = match model.gaussian_posterior() {
            Some((mean, var)) => {
                let sq = mean.iter().map(|m| m * m).sum::<f64>() + model.dim() as f64 * var;
                (
                    ReferenceKind::ClosedForm,
                    Some(MomentSummary {
                        mean,
                        second_moment: sq,
                    }),
                )
            }
            None => {
                let factor = config.bench.reference_factor;
                let mut long = cfg.clone();
                long.horizon = cfg.horizon * factor;
                long.seed = cfg.seed ^ 0x5eed_5eed_5eed_5eed;
                let plain = SamplerKind::FullLmc {
                    align_to_jump_clock: false,
                };
                let (out, _) = run_one("reference", &model, &long, plain, replicas);
                (ReferenceKind::LongRun { factor }, out.moments)
            }
        };

        let mut matched = config.bench.matched_budget.then(|| {
            let mut long = cfg.clone();
            long.horizon = cfg.horizon * n as f64;
            run_one(
                "slmc_matched_budget",
                &model,
                &long,
                SamplerKind::Slmc,
                replicas,
            )
            .0
        });
        if let Some(r) = &reference {
            score(&mut slmc, r);
            score(&mut lmc, r);
            if let Some(m) = matched.as_mut() {
                score(m, r);
            }
        }
        let ratio = match (slmc.gradient_evals, lmc.gradient_evals) {
            (Some(s), Some(l)) if s > 0 => Some(l as f64 / s as f64),
            _ => None,
        };
        BenchReport {
            n,
            replicas,
            workers,
            workers_source,
            gradient_evals_slmc: slmc.gradient_evals,
            gradient_evals_lmc: lmc.gradient_evals,
            wall_time_slmc_s: slmc.wall_time_s,
            wall_time_lmc_s: lmc.wall_time_s,
            ratio,
            reference_kind,
            reference,
            slmc,
            lmc,
            slmc_matched_budget: matched,
        }
    })
}
