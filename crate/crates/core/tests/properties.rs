#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use slmc::klcheck::{build_grid, check_hkl, compose_posterior_kl, KlParams, Tolerance};
use slmc::potential::{
    Likelihood, ObservationModel, ObservationSet, Potential, PotentialModel, PowerPotential,
    PriorSpec, Target,
};
use slmc::sampler::{
    default_alpha, run_ensemble, sample_jump_schedule, SamplerConfig, SamplerKind,
};
use slmc::theory::{alpha_n, TheoryInputs};

fn power_model(p: f64, n: usize, d: usize, seed: u64) -> PotentialModel {
    PotentialModel::new(
        ObservationSet::generate(n, &vec![0.5; d], 1.0, seed).unwrap(),
        PriorSpec::Gaussian {
            mean: vec![0.0; d],
            variance: 1.0,
        },
        Likelihood::Power {
            exponent: p,
            scale: 1.0,
        },
    )
    .unwrap()
}

fn theta_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-6.0..6.0f64, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_matches_central_differences(
        p in 0.5..=1.0f64,
        seed in 0u64..1000,
        i in 0usize..5,
        theta in theta_strategy(2),
    ) {
        let m = power_model(p, 5, 2, seed);
        let g = m.grad_potential(i, &theta).unwrap();
        let eps = 1e-6;
        for k in 0..2 {
            let mut a = theta.clone();
            let mut b = theta.clone();
            a[k] += eps;
            b[k] -= eps;
            let fd = (m.eval_potential(i, &a).unwrap() - m.eval_potential(i, &b).unwrap()) / (2.0 * eps);
            prop_assert!((fd - g[k]).abs() <= 1e-5 * (1.0 + g[k].abs()), "k={} fd={} g={}", k, fd, g[k]);
        }
    }

    #[test]
    fn potentials_are_convex(p in 0.5..=1.0f64, seed in 0u64..1000, theta in theta_strategy(2)) {
        let m = power_model(p, 4, 2, seed);
        for t in [Target::Observation(0), Target::Observation(3), Target::Mean] {
            prop_assert!(m.hessian_min_eig(t, &theta).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn mean_potential_is_the_average(p in 0.5..=1.0f64, seed in 0u64..1000, theta in theta_strategy(3)) {
        let m = power_model(p, 6, 3, seed);
        let avg = (0..6).map(|i| m.eval_potential(i, &theta).unwrap()).sum::<f64>() / 6.0;
        let mean = m.eval_mean_potential(&theta).unwrap();
        prop_assert!((avg - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        let g = m.grad_mean_potential(&theta).unwrap();
        for k in 0..3 {
            let gk = (0..6).map(|i| m.grad_potential(i, &theta).unwrap()[k]).sum::<f64>() / 6.0;
            prop_assert!((gk - g[k]).abs() <= 1e-10 * (1.0 + g[k].abs()));
        }
    }

    #[test]
    fn power_potential_meets_its_declared_constants(p in 0.55..=1.0f64, seed in 0u64..100) {
        let params = KlParams::power(p, 1.0).unwrap();
        let pot = PowerPotential::new(p, vec![0.3, -0.2]);
        let grid = build_grid(&[0.3, -0.2], 1.0, 150, 50, seed);
        let rep = check_hkl(&pot, &params, &grid, Tolerance::Relative(1e-8)).unwrap();
        prop_assert!(rep.passed, "{:?}", rep);
    }

    #[test]
    fn smaller_curvature_constant_still_passes(p in 0.55..=1.0f64, shrink in 0.0..1.0f64) {
        let mut params = KlParams::power(p, 1.0).unwrap();
        let pot = PowerPotential::new(p, vec![0.0]);
        let grid = build_grid(&[0.0], 1.0, 100, 40, 3);
        prop_assert!(check_hkl(&pot, &params, &grid, Tolerance::Relative(1e-8)).unwrap().passed);
        params.c *= shrink.max(1e-6);
        prop_assert!(check_hkl(&pot, &params, &grid, Tolerance::Relative(1e-8)).unwrap().passed);
    }

    #[test]
    fn composed_constants_hold_for_the_posterior(p in 0.55..=1.0f64, n in 2usize..10, seed in 0u64..100) {
        let m = power_model(p, n, 1, seed);
        let composed = compose_posterior_kl(&KlParams::power(p, 1.0).unwrap(), n).unwrap();
        let grid = build_grid(&[0.5], 1.0, 100, 40, seed);
        let rep = check_hkl(&m.potential(Target::Mean), &composed, &grid, Tolerance::Relative(1e-6)).unwrap();
        prop_assert!(rep.passed, "{:?}", rep);
    }

    #[test]
    fn default_alpha_agrees_with_theory(n in 2usize..10_000, d in 1usize..10, r in 0.0..1.0f64) {
        let a = default_alpha(n, d, r).unwrap();
        let b = alpha_n(&TheoryInputs::new(n, d, r));
        prop_assert!((a - b).abs() <= 1e-14 * b);
    }
}

#[test]
fn jump_counts_are_poisson() {
    let (alpha, horizon, runs) = (3.0, 2.0, 1000);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let counts: Vec<f64> = (0..runs)
        .map(|_| sample_jump_schedule(alpha, horizon, &mut rng).len() as f64)
        .collect();
    let mean = counts.iter().sum::<f64>() / runs as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
    let lambda = alpha * horizon;
    let se = (lambda / runs as f64).sqrt();
    assert!((mean - lambda).abs() < 3.0 * se, "mean {mean} vs {lambda}");
    assert!(
        (var / lambda - 1.0).abs() < 0.15,
        "variance {var} vs {lambda}"
    );
}

fn gaussian_model(n: usize) -> PotentialModel {
    PotentialModel::new(
        ObservationSet::generate(n, &[1.0], 1.0, 11).unwrap(),
        PriorSpec::Gaussian {
            mean: vec![0.0],
            variance: 1.0,
        },
        Likelihood::Gaussian {
            noise_variance: 1.0,
        },
    )
    .unwrap()
}

#[test]
fn active_observation_stays_uniform() {
    let n = 5;
    let m = gaussian_model(n);
    let cfg = SamplerConfig {
        alpha_n: 2.0,
        h: 0.01,
        horizon: 1.0,
        sigma2: 0.1,
        seed: 4,
        init_x: slmc::sampler::InitX::Uniform,
        noise: Default::default(),
    };
    let r = 5000;
    let ens = run_ensemble(&m, &cfg, SamplerKind::Slmc, &[0.0, 1.0], r).unwrap();
    for snap in &ens.snapshots {
        let mut counts = vec![0usize; n];
        for &x in &snap.active_obs {
            counts[x] += 1;
        }
        let e = r as f64 / n as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 99.9% quantile of chi-square with 4 degrees of freedom.
        assert!(
            chi2 < 18.47,
            "t = {}: chi2 = {chi2}, counts {counts:?}",
            snap.time
        );
    }
}

#[test]
fn ensembles_do_not_depend_on_worker_count() {
    let m = gaussian_model(4);
    let cfg = SamplerConfig {
        alpha_n: 1.0,
        h: 0.01,
        horizon: 0.5,
        sigma2: 0.2,
        seed: 9,
        init_x: slmc::sampler::InitX::Uniform,
        noise: Default::default(),
    };
    let run = |w: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .unwrap()
            .install(|| run_ensemble(&m, &cfg, SamplerKind::Slmc, &[0.25, 0.5], 64).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn model_gradient_calls_match_reported_counts() {
    use std::sync::atomic::{AtomicU64, Ordering};

    struct Counting<'a> {
        inner: &'a PotentialModel,
        calls: AtomicU64,
    }
    impl ObservationModel for Counting<'_> {
        fn num_observations(&self) -> usize {
            self.inner.n()
        }
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn value_obs(&self, i: usize, theta: &[f64]) -> f64 {
            self.inner.value_obs(i, theta)
        }
        fn grad_obs(&self, i: usize, theta: &[f64], out: &mut [f64]) {
            self.calls.fetch_add(1, Ordering::Relaxed);
            self.inner.grad_obs(i, theta, out)
        }
    }

    let base = gaussian_model(7);
    let cfg = SamplerConfig {
        alpha_n: 1.5,
        h: 0.01,
        horizon: 1.0,
        sigma2: 0.1,
        seed: 2,
        init_x: slmc::sampler::InitX::Uniform,
        noise: Default::default(),
    };
    for kind in [
        SamplerKind::Slmc,
        SamplerKind::FullLmc {
            align_to_jump_clock: true,
        },
    ] {
        let m = Counting {
            inner: &base,
            calls: AtomicU64::new(0),
        };
        let ens = run_ensemble(&m, &cfg, kind, &[1.0], 8).unwrap();
        assert_eq!(m.calls.load(Ordering::Relaxed), ens.gradient_evals);
        let per_step = if kind == SamplerKind::Slmc { 1 } else { 7 };
        assert_eq!(ens.gradient_evals, per_step * ens.steps);
    }
}

#[test]
fn power_potential_value_is_positive_and_minimal_at_center() {
    let pot = PowerPotential::new(0.75, vec![1.0, 2.0]);
    assert_eq!(pot.value(&[1.0, 2.0]), 1.0);
    assert!(pot.value(&[0.0, 0.0]) > 1.0);
}
