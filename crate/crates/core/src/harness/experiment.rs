//! Experiment runner and on-disk artifacts.
//!
//! A run writes five files into the output directory:
//!
//! | file | content |
//! |------|---------|
//! | `ensemble.csv` | one row per (replica, time): `replica,time,theta_0..,active_obs` |
//! | `ensemble.meta.json` | full config, resolved sampler settings, seed, counters |
//! | `diagnostics.csv` | estimators and bounds per recorded time |
//! | `theory.json` | every theory calculator at the model's constants |
//! | `manifest.json` | config hash, seed, code version, workers, file digests |
//!
//! Files are written into a staging directory next to the target and moved
//! in only after every file succeeded, so a failed run leaves nothing behind.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::diagnostics::{default_bins, estimate_it, estimate_jt, estimate_moments};
use crate::error::{Error, Result};
use crate::potential::{normalize_posterior, PotentialModel};
use crate::sampler::{run_ensemble, Ensemble, EnsembleSnapshot, SamplerConfig};
use crate::theory::{entropy_envelope, j0_bound, theory_report, TheoryReport};

/// Environment variable that overrides the worker count.
pub const WORKERS_ENV: &str = "SLMC_WORKERS";

pub const ENSEMBLE_FILE: &str = "ensemble.csv";
pub const META_FILE: &str = "ensemble.meta.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const THEORY_FILE: &str = "theory.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerSource {
    Environment,
    Config,
    Default,
}

/// Worker count: `SLMC_WORKERS` wins over the configured value, which wins
/// over the machine's parallelism.
pub fn resolve_workers(configured: Option<usize>) -> Result<(usize, WorkerSource)> {
    if let Ok(raw) = std::env::var(WORKERS_ENV) {
        let w: usize = raw.trim().parse().map_err(|_| {
            Error::Config(format!("{WORKERS_ENV}={raw:?} is not a positive integer"))
        })?;
        if w == 0 {
            return Err(Error::Config(format!("{WORKERS_ENV} must be >= 1")));
        }
        return Ok((w, WorkerSource::Environment));
    }
    match configured {
        Some(w) => Ok((w, WorkerSource::Config)),
        None => Ok((
            std::thread::available_parallelism().map_or(1, |n| n.get()),
            WorkerSource::Default,
        )),
    }
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// One line of `diagnostics.csv`. Columns of estimators that were not
/// selected stay empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    #[serde(rename = "I_hat")]
    pub i_hat: Option<f64>,
    #[serde(rename = "I_se")]
    pub i_se: Option<f64>,
    /// Expected value of `Î` under independence, `(n − 1)·bins/R`.
    #[serde(rename = "I_bias")]
    pub i_bias: Option<f64>,
    /// `Î_{t₀} e^{−2α_n (t − t₀)}` from the first recorded time `t₀`.
    #[serde(rename = "I_bound")]
    pub i_bound: Option<f64>,
    #[serde(rename = "J_hat")]
    pub j_hat: Option<f64>,
    #[serde(rename = "J_se")]
    pub j_se: Option<f64>,
    pub moment_hat: Option<f64>,
    pub moment_se: Option<f64>,
    /// Entropy envelope with the configured constants.
    pub envelope: Option<f64>,
}

/// Estimators on recorded snapshots; snapshots are processed in time order
/// after every replica has finished.
pub fn run_diagnostics(
    config: &ExperimentConfig,
    model: &PotentialModel,
    alpha_n: f64,
    snapshots: &[EnsembleSnapshot],
) -> Result<Vec<DiagnosticsRow>> {
    let diag = &config.diagnostics;
    let n = model.n();
    let log_z = if diag.entropy {
        Some(normalize_posterior(model, &config.normalizer(model.dim()))?.log_z)
    } else {
        None
    };
    let inputs = config.theory_inputs(model);
    let envelope_j0 = inputs.validate().ok().map(|_| j0_bound(&inputs));
    let mut rows = Vec::with_capacity(snapshots.len());
    let mut first_i: Option<(f64, f64)> = None;
    for snap in snapshots {
        let mut row = DiagnosticsRow {
            t: snap.time,
            i_hat: None,
            i_se: None,
            i_bias: None,
            i_bound: None,
            j_hat: None,
            j_se: None,
            moment_hat: None,
            moment_se: None,
            envelope: envelope_j0.map(|j0| entropy_envelope(snap.time, j0, &inputs, alpha_n)),
        };
        if diag.conditional_l2 {
            let bins = diag.bins.unwrap_or_else(|| default_bins(snap.len()));
            let est = estimate_it(snap, n, bins, diag.seed)?;
            let (t0, i0) = *first_i.get_or_insert((snap.time, est.value));
            row.i_hat = Some(est.value);
            row.i_se = Some(est.standard_error);
            row.i_bias = Some(est.plug_in_bias);
            row.i_bound = Some(i0 * (-2.0 * alpha_n * (snap.time - t0)).exp());
        }
        if let Some(lz) = log_z {
            let est = estimate_jt(snap, model, lz, diag.bandwidth)?;
            row.j_hat = Some(est.value);
            row.j_se = Some(est.standard_error);
        }
        if diag.moments {
            let (m, se) = estimate_moments(snap, model, diag.moment_order)?;
            row.moment_hat = Some(m);
            row.moment_se = Some(se);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Sidecar metadata of an ensemble CSV. The stored config omits the output
/// directory and worker count, so the file depends only on the config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub config_hash: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub sampler: SamplerConfig,
    pub replicas: usize,
    pub gradient_evals: u64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub workers: usize,
    pub workers_source: WorkerSource,
    /// SHA-256 of every written file.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub ensemble: Ensemble,
    pub diagnostics: Vec<DiagnosticsRow>,
    pub theory: Option<TheoryReport>,
}

/// Validates the config, runs the ensemble and its diagnostics and writes
/// the artifacts into `config.output_dir` (default `slmc-out`).
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let (workers, workers_source) = resolve_workers(config.workers)?;
    let out = config
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("slmc-out"));
    let model = config.model.build()?;
    let cfg = config.sampler_config(&model)?;
    let (ensemble, diagnostics) = with_workers(workers, || -> Result<_> {
        let ensemble = run_ensemble(
            &model,
            &cfg,
            config.sampler.kind,
            &config.record_times,
            config.replicas,
        )?;
        let diagnostics = run_diagnostics(config, &model, cfg.alpha_n, &ensemble.snapshots)?;
        Ok((ensemble, diagnostics))
    })??;
    let theory = theory_report(&config.theory_inputs(&model), config.theory.eps).ok();
    let hash = config.hash();

    let stage = Stage::new(&out)?;
    write_ensemble_csv(&stage.path(ENSEMBLE_FILE), &hash, &ensemble)?;
    let meta = EnsembleMeta {
        config_hash: hash.clone(),
        seed: cfg.seed,
        config: config.canonical(),
        sampler: cfg.clone(),
        replicas: ensemble.replicas,
        gradient_evals: ensemble.gradient_evals,
        steps: ensemble.steps,
    };
    write_json(&stage.path(META_FILE), &meta)?;
    write_diagnostics_csv(&stage.path(DIAGNOSTICS_FILE), &diagnostics)?;
    write_json(&stage.path(THEORY_FILE), &theory)?;
    let mut files = BTreeMap::new();
    for name in [ENSEMBLE_FILE, META_FILE, DIAGNOSTICS_FILE, THEORY_FILE] {
        files.insert(name.to_string(), file_sha256(&stage.path(name))?);
    }
    let manifest = Manifest {
        config_hash: hash,
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        workers,
        workers_source,
        files,
    };
    write_json(&stage.path(MANIFEST_FILE), &manifest)?;
    stage.commit(&[
        ENSEMBLE_FILE,
        META_FILE,
        DIAGNOSTICS_FILE,
        THEORY_FILE,
        MANIFEST_FILE,
    ])?;
    Ok(ExperimentOutput {
        dir: out,
        manifest,
        ensemble,
        diagnostics,
        theory,
    })
}

/// Staging directory beside the target; dropped (and deleted) on failure.
pub(crate) struct Stage {
    dir: tempfile::TempDir,
    target: PathBuf,
}

impl Stage {
    pub(crate) fn new(target: &Path) -> Result<Self> {
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
        let dir = tempfile::Builder::new()
            .prefix(".slmc-staging-")
            .tempdir_in(&parent)
            .map_err(|e| Error::io(&parent, e))?;
        Ok(Self {
            dir,
            target: target.to_path_buf(),
        })
    }

    pub(crate) fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Moves the named files into the target directory.
    pub(crate) fn commit(self, names: &[&str]) -> Result<()> {
        std::fs::create_dir_all(&self.target).map_err(|e| Error::io(&self.target, e))?;
        for name in names {
            let dst = self.target.join(name);
            std::fs::rename(self.path(name), &dst).map_err(|e| Error::io(&dst, e))?;
        }
        Ok(())
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

const HASH_PREFIX: &str = "# config_sha256=";

/// Writes `replica,time,theta_0..theta_{d-1},active_obs`, replica-major,
/// preceded by a `# config_sha256=<hex>` line.
pub fn write_ensemble_csv(path: &Path, config_hash: &str, ensemble: &Ensemble) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut raw = BufWriter::new(file);
    writeln!(raw, "{HASH_PREFIX}{config_hash}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(raw);
    let d = ensemble.snapshots.first().map_or(0, |s| s.dim);
    let mut header = vec!["replica".to_string(), "time".to_string()];
    header.extend((0..d).map(|k| format!("theta_{k}")));
    header.push("active_obs".into());
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(d + 3);
    for r in 0..ensemble.replicas {
        for snap in &ensemble.snapshots {
            rec.clear();
            rec.push(r.to_string());
            rec.push(snap.time.to_string());
            rec.extend(snap.theta(r).iter().map(f64::to_string));
            rec.push(snap.active_obs[r].to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an ensemble CSV back into snapshots ordered by time, together with
/// the config hash from its first line.
pub fn read_ensemble_csv(path: &Path) -> Result<(String, Vec<EnsembleSnapshot>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    let hash = first
        .trim_end()
        .strip_prefix(HASH_PREFIX)
        .ok_or_else(|| {
            Error::InvalidInput(format!("{}: missing config hash line", path.display()))
        })?
        .to_string();
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let d = header
        .len()
        .checked_sub(3)
        .filter(|&d| d > 0)
        .ok_or_else(|| {
            Error::InvalidInput(format!("{}: header has no theta columns", path.display()))
        })?;
    let mut times: Vec<f64> = Vec::new();
    let mut by_time: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
    let bad = |what: &str| Error::InvalidInput(format!("{}: {what}", path.display()));
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| bad(&format!("row {line}: bad field {k}")))
        };
        let t = parse(1)?;
        let slot = match times.iter().position(|&s| s == t) {
            Some(k) => k,
            None => {
                times.push(t);
                by_time.push((Vec::new(), Vec::new()));
                times.len() - 1
            }
        };
        for k in 0..d {
            by_time[slot].0.push(parse(2 + k)?);
        }
        let obs = rec
            .get(2 + d)
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| bad(&format!("row {line}: bad active_obs")))?;
        by_time[slot].1.push(obs);
    }
    let mut snaps = times
        .into_iter()
        .zip(by_time)
        .map(|(t, (th, ob))| EnsembleSnapshot::new(t, d, th, ob))
        .collect::<Result<Vec<_>>>()?;
    if snaps.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(bad("times hold different replica counts"));
    }
    snaps.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok((hash, snaps))
}

pub fn write_diagnostics_csv(path: &Path, rows: &[DiagnosticsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
