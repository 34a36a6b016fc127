use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use slmc_ffi::*;

const MODEL: &str = r#"{
    "prior": {"kind": "gaussian", "mean": [0.0], "variance": 1.0},
    "likelihood": {"kind": "gaussian", "noise_variance": 1.0},
    "observations": {"points": [[0.5], [1.5], [-0.5], [2.5]]}
}"#;

fn model() -> *mut SlmcModel {
    let json = CString::new(MODEL).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { slmc_model_from_json(json.as_ptr(), &mut m) },
        SlmcStatus::Ok
    );
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let p = slmc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn model_evaluations_match_closed_form() {
    let m = model();
    let (mut n, mut d) = (0usize, 0usize);
    unsafe {
        assert_eq!(slmc_model_shape(m, &mut n, &mut d), SlmcStatus::Ok);
        assert_eq!((n, d), (4, 1));
        let theta = [1.0];
        let mut g = [0.0];
        // ∇U_x(θ) = θ + n(θ − x) with x = 1.5: 1 − 2 = −1.
        assert_eq!(
            slmc_model_grad(m, 1, theta.as_ptr(), 1, g.as_mut_ptr(), 1),
            SlmcStatus::Ok
        );
        assert!((g[0] + 1.0).abs() < 1e-12);
        // Mean gradient: θ + Σ(θ − x_i) = 1 + (4 − 4) = 1.
        assert_eq!(
            slmc_model_grad(m, -1, theta.as_ptr(), 1, g.as_mut_ptr(), 1),
            SlmcStatus::Ok
        );
        assert!((g[0] - 1.0).abs() < 1e-12);
        let mut lam = 0.0;
        assert_eq!(
            slmc_model_hessian_min_eig(m, -1, theta.as_ptr(), 1, &mut lam),
            SlmcStatus::Ok
        );
        assert!((lam - 5.0).abs() < 1e-9);
        let (mut u, mut um) = (0.0, 0.0);
        assert_eq!(
            slmc_model_eval(m, 0, theta.as_ptr(), 1, &mut u),
            SlmcStatus::Ok
        );
        assert_eq!(
            slmc_model_eval(m, -1, theta.as_ptr(), 1, &mut um),
            SlmcStatus::Ok
        );
        assert!(u.is_finite() && um.is_finite());
        slmc_model_free(m);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let m = model();
    unsafe {
        let theta = [0.0];
        let mut out = 0.0;
        assert_eq!(
            slmc_model_eval(m, 9, theta.as_ptr(), 1, &mut out),
            SlmcStatus::OutOfRange
        );
        assert!(last_error().contains("out of range"));
        let pair = [0.0, 0.0];
        assert_eq!(
            slmc_model_eval(m, 0, pair.as_ptr(), 2, &mut out),
            SlmcStatus::InvalidInput
        );
        assert_eq!(
            slmc_model_eval(ptr::null(), 0, theta.as_ptr(), 1, &mut out),
            SlmcStatus::NullPointer
        );
        let mut g = [0.0; 1];
        assert_eq!(
            slmc_model_grad(m, 0, theta.as_ptr(), 1, g.as_mut_ptr(), 0),
            SlmcStatus::BufferTooSmall
        );
        let bad = CString::new(r#"{"prior": 3}"#).unwrap();
        let mut h = ptr::null_mut();
        assert_eq!(
            slmc_model_from_json(bad.as_ptr(), &mut h),
            SlmcStatus::InvalidConfig
        );
        assert!(h.is_null());
        assert_eq!(
            slmc_model_eval(m, 0, theta.as_ptr(), 1, &mut out),
            SlmcStatus::Ok
        );
        assert!(slmc_last_error_message().is_null());
        slmc_model_free(m);
    }
}

#[test]
fn trajectory_round_trip_and_cost_accounting() {
    let m = model();
    let cfg =
        CString::new(r#"{"alpha_n": 2.0, "h": 0.001, "horizon": 1.0, "sigma2": 0.1, "seed": 7}"#)
            .unwrap();
    let times = [0.0, 0.5, 1.0];
    unsafe {
        let mut sub = ptr::null_mut();
        let mut full = ptr::null_mut();
        assert_eq!(
            slmc_run(
                m,
                cfg.as_ptr(),
                SlmcSampler::Subsampled as i32,
                times.as_ptr(),
                3,
                &mut sub
            ),
            SlmcStatus::Ok
        );
        assert_eq!(
            slmc_run(
                m,
                cfg.as_ptr(),
                SlmcSampler::FullGradient as i32,
                times.as_ptr(),
                3,
                &mut full
            ),
            SlmcStatus::Ok
        );
        let (mut k, mut d, mut evals, mut steps) = (0usize, 0usize, 0u64, 0u64);
        assert_eq!(
            slmc_trajectory_info(sub, &mut k, &mut d, &mut evals, &mut steps),
            SlmcStatus::Ok
        );
        assert_eq!((k, d), (3, 1));
        assert_eq!(evals, steps);
        assert_eq!(
            slmc_trajectory_info(full, &mut k, &mut d, &mut evals, &mut steps),
            SlmcStatus::Ok
        );
        assert_eq!(evals, 4 * steps);

        let (mut t, mut obs) = (0.0, 0usize);
        let mut theta = [0.0];
        assert_eq!(
            slmc_trajectory_record(sub, 2, &mut t, theta.as_mut_ptr(), 1, &mut obs),
            SlmcStatus::Ok
        );
        assert_eq!(t, 1.0);
        assert!(obs < 4 && theta[0].is_finite());
        assert_eq!(
            slmc_trajectory_record(sub, 3, &mut t, theta.as_mut_ptr(), 1, &mut obs),
            SlmcStatus::OutOfRange
        );
        let mut bad = ptr::null_mut();
        assert_eq!(
            slmc_run(m, cfg.as_ptr(), 7, times.as_ptr(), 3, &mut bad),
            SlmcStatus::InvalidInput
        );
        slmc_trajectory_free(sub);
        slmc_trajectory_free(full);
        slmc_model_free(m);
    }
}

#[test]
fn theory_report_and_default_alpha() {
    unsafe {
        let mut a = 0.0;
        assert_eq!(slmc_default_alpha(100, 2, 0.5, &mut a), SlmcStatus::Ok);
        let l = 100f64.ln();
        let expect = 1.0 / (100.0 * (2.0 * l * l).powf(1.5));
        assert!((a - expect).abs() <= 1e-12 * expect);

        let inputs = CString::new(r#"{"n": 100, "d": 2, "r": 0.5}"#).unwrap();
        let mut s = ptr::null_mut();
        assert_eq!(
            slmc_theory_report_json(inputs.as_ptr(), 0.1, &mut s),
            SlmcStatus::Ok
        );
        let json: serde_json::Value =
            serde_json::from_str(CStr::from_ptr(s).to_str().unwrap()).unwrap();
        assert!((json["alpha_n"].as_f64().unwrap() - expect).abs() <= 1e-12 * expect);
        slmc_string_free(s);

        let bad = CString::new(r#"{"n": 1, "d": 2, "r": 0.5}"#).unwrap();
        assert_eq!(
            slmc_theory_report_json(bad.as_ptr(), 0.1, &mut s),
            SlmcStatus::InvalidConfig
        );
        assert!(last_error().contains("n = 1"));
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(slmc_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/slmc.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    for name in [
        "slmc_last_error_message",
        "slmc_version",
        "slmc_string_free",
        "slmc_model_from_json",
        "slmc_model_free",
        "slmc_model_shape",
        "slmc_model_eval",
        "slmc_model_grad",
        "slmc_model_hessian_min_eig",
        "slmc_run",
        "slmc_trajectory_free",
        "slmc_trajectory_info",
        "slmc_trajectory_record",
        "slmc_default_alpha",
        "slmc_theory_report_json",
        "typedef struct SlmcModel SlmcModel",
        "SLMC_STATUS_OK = 0",
        "SLMC_SAMPLER_FULL_GRADIENT = 1",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "slmc.h"

int main(void) {
    const char *spec =
        "{\"prior\": {\"kind\": \"gaussian\", \"mean\": [0.0], \"variance\": 1.0},"
        " \"likelihood\": {\"kind\": \"gaussian\", \"noise_variance\": 1.0},"
        " \"observations\": {\"points\": [[0.5], [1.5]]}}";
    SlmcModel *m = NULL;
    if (slmc_model_from_json(spec, &m) != SLMC_STATUS_OK) return 1;
    double theta[1] = {0.0}, g[1];
    if (slmc_model_grad(m, -1, theta, 1, g, 1) != SLMC_STATUS_OK) return 2;
    double t[2] = {0.0, 0.5};
    SlmcTrajectory *tr = NULL;
    const char *cfg = "{\"alpha_n\": 1.0, \"h\": 0.01, \"horizon\": 0.5, \"sigma2\": 0.1, \"seed\": 3}";
    if (slmc_run(m, cfg, SLMC_SAMPLER_SUBSAMPLED, t, 2, &tr) != SLMC_STATUS_OK) return 3;
    size_t k, d; uint64_t evals, steps;
    slmc_trajectory_info(tr, &k, &d, &evals, &steps);
    if (slmc_model_eval(m, 5, theta, 1, g) != SLMC_STATUS_OUT_OF_RANGE) return 4;
    printf("%g %zu %s\n", g[0], k, slmc_last_error_message() != NULL ? "err" : "none");
    slmc_trajectory_free(tr);
    slmc_model_free(m);
    return 0;
}
"#;

/// Compiles a C program against the generated header and the static
/// library. Skipped when no C compiler is installed.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|p| p.parent()).unwrap();
    let lib = profile_dir.join("libslmc_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library");
        return;
    }
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("capi");
    std::fs::create_dir_all(&dir).unwrap();
    let src = dir.join("main.c");
    let bin = dir.join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let include = header().parent().unwrap().to_path_buf();
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(
        out.status.success(),
        "C program exited with {:?}",
        out.status
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.ends_with(" 2 err\n"), "unexpected output {text:?}");
}
