use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use slmc::harness::{
    compare_samplers, read_ensemble_csv, resolve_workers, run_diagnostics, run_experiment,
    run_verification_suite, with_workers, write_diagnostics_csv, write_json, ExperimentConfig,
};
use slmc::theory::{theory_report, TheoryInputs};
use slmc::{Error, Result};

/// Stochastic Langevin Monte Carlo with Poissonian subsampling.
#[derive(Parser)]
#[command(name = "slmc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (.toml or .json).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the sampler seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; SLMC_WORKERS takes precedence.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::from_path(&self.config)?;
        if let Some(s) = self.seed {
            cfg.sampler.seed = s;
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        if self.out.is_some() {
            cfg.output_dir = self.out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run an ensemble and write its CSVs, theory report and manifest.
    Sample(Common),
    /// Certify the declared curvature constants; exits 1 if a check fails.
    Verify(Common),
    /// Print every theory bound for the given constants.
    Theory {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        r: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        /// Poincaré constant override.
        #[arg(long)]
        c_p: Option<f64>,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured estimators on a stored ensemble CSV.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Ensemble CSV written by `sample`.
        #[arg(long)]
        ensemble: PathBuf,
    },
    /// Compare SLMC with the full-gradient sampler.
    Bench(Common),
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn json_out(dir: &Option<PathBuf>, name: &str, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join(name);
        write_json(&path, value)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Sample(common) => {
            let cfg = common.load()?;
            let res = run_experiment(&cfg)?;
            println!(
                "{} replicas, {} steps, {} gradient evaluations",
                res.ensemble.replicas, res.ensemble.steps, res.ensemble.gradient_evals
            );
            println!(
                "{:>10} {:>12} {:>12} {:>12} {:>12}",
                "t", "I_hat", "J_hat", "moment", "envelope"
            );
            for row in &res.diagnostics {
                println!(
                    "{:>10} {:>12} {:>12} {:>12} {:>12}",
                    row.t,
                    opt(row.i_hat),
                    opt(row.j_hat),
                    opt(row.moment_hat),
                    row.envelope.map_or("-".into(), |v| format!("{v:.4e}"))
                );
            }
            println!(
                "wrote {} (config {}, workers {} from {:?})",
                res.dir.display(),
                res.manifest.config_hash,
                res.manifest.workers,
                res.manifest.workers_source
            );
            Ok(true)
        }
        Command::Verify(common) => {
            let cfg = common.load()?;
            let b = run_verification_suite(&cfg)?;
            let line = |name: &str, r: &slmc::klcheck::CheckReport| {
                println!(
                    "{:<24} {:<4} points {:>7} violations {:>5} worst {:+.3e} ({}) at {:?}",
                    name,
                    if r.passed { "PASS" } else { "FAIL" },
                    r.points_checked,
                    r.violations,
                    r.worst_margin,
                    r.worst_check,
                    r.worst_point
                );
            };
            line("per-observation H_KL", &b.per_observation_hkl);
            line("growth bounds", &b.growth_bounds);
            line("posterior H_KL", &b.posterior_hkl);
            line("minimizer localization", &b.hmin.check);
            println!(
                "composed constants: c = {}, r = {}, L = {}",
                b.composed.c, b.composed.r, b.composed.lipschitz
            );
            json_out(&common.out, "verify.json", &b)?;
            println!(
                "{}",
                if b.passed {
                    "all checks passed"
                } else {
                    "verification FAILED"
                }
            );
            Ok(b.passed)
        }
        Command::Theory {
            n,
            d,
            r,
            beta,
            eps,
            c_p,
            out,
        } => {
            let mut inputs = TheoryInputs::new(n, d, r);
            inputs.beta = beta;
            inputs.c_p = c_p;
            let rep = theory_report(&inputs, eps)?;
            let rows = [
                ("alpha_n", rep.alpha_n),
                ("C_P floor", rep.c_p_floor),
                ("C_P used", rep.c_p),
                ("C_nd", rep.c_nd),
                ("ln O_nd", rep.o_nd_log),
                ("J_0 bound", rep.j0_bound),
                ("ln envelope prefactor", rep.envelope_log_prefactor),
                ("envelope peak time", rep.envelope_peak_time),
                ("eps", rep.eps),
                ("t_eps", rep.t_eps),
                ("moment bound", rep.moment_bound),
                ("ln exp-moment bound", rep.exp_moment_bound_log),
            ];
            println!("n = {n}, d = {d}, r = {r}, beta = {beta}");
            for (name, v) in rows {
                println!("{name:<24} {v:.10e}");
            }
            json_out(&out, "theory.json", &rep)?;
            Ok(true)
        }
        Command::Diagnose { common, ensemble } => {
            let cfg = common.load()?;
            cfg.validate()?;
            let (hash, snaps) = read_ensemble_csv(&ensemble)?;
            if hash != cfg.hash() {
                eprintln!(
                    "warning: ensemble was produced by config {hash}, current config is {}",
                    cfg.hash()
                );
            }
            let model = cfg.model.build()?;
            let alpha = cfg.sampler_config(&model)?.alpha_n;
            let (workers, _) = resolve_workers(cfg.workers)?;
            let rows = with_workers(workers, || run_diagnostics(&cfg, &model, alpha, &snaps))??;
            match &common.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
                    let path = dir.join("diagnostics.csv");
                    write_diagnostics_csv(&path, &rows)?;
                    println!("wrote {}", path.display());
                }
                None => {
                    let mut w = csv::Writer::from_writer(std::io::stdout());
                    for row in &rows {
                        w.serialize(row)?;
                    }
                    w.flush().map_err(|e| io_err(Path::new("<stdout>"), e))?;
                }
            }
            Ok(true)
        }
        Command::Bench(common) => {
            let cfg = common.load()?;
            let rep = compare_samplers(&cfg)?;
            println!(
                "n = {}, gradient evaluations slmc {:?} lmc {:?}, ratio {:?}",
                rep.n, rep.gradient_evals_slmc, rep.gradient_evals_lmc, rep.ratio
            );
            for o in [
                Some(&rep.slmc),
                Some(&rep.lmc),
                rep.slmc_matched_budget.as_ref(),
            ]
            .into_iter()
            .flatten()
            {
                match &o.error {
                    Some(e) => println!("{:<20} failed: {e}", o.sampler),
                    None => println!(
                        "{:<20} T = {:<10} wall {:.3}s mean error {} second-moment error {}",
                        o.sampler,
                        o.horizon,
                        o.wall_time_s,
                        opt(o.mean_error),
                        opt(o.second_moment_error)
                    ),
                }
            }
            json_out(&common.out, "bench.json", &rep)?;
            Ok(true)
        }
    }
}
