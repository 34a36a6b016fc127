//! Experiment plumbing: configs, the ensemble runner with its CSV/JSON
//! artifacts, the verification suite and the sampler comparison.

pub mod bench;
pub mod config;
pub mod experiment;
pub mod verify;

pub use bench::{compare_samplers, BenchReport, MomentSummary, ReferenceKind, SamplerOutcome};
pub use config::{
    BenchSpec, DiagnosticsSpec, ExperimentConfig, ModelSpec, ObservationSpec, SamplerSpec,
    TheorySpec, VerifySpec, CONFIG_VERSION,
};
pub use experiment::{
    read_ensemble_csv, resolve_workers, run_diagnostics, run_experiment, with_workers,
    write_diagnostics_csv, write_ensemble_csv, write_json, DiagnosticsRow, EnsembleMeta,
    ExperimentOutput, Manifest, WorkerSource, WORKERS_ENV,
};
pub use verify::{run_verification_suite, verify_model, VerificationBundle};
