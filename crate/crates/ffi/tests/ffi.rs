use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use bsgd_tv_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(bsgd_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn small_problem() -> *mut BsgdProblem {
    let mut p = ptr::null_mut();
    let status = unsafe { bsgd_problem_simulate(16, 12, 30.0, 3, 2, 2, &mut p) };
    assert_eq!(status, BsgdStatus::Ok, "{}", last_error());
    assert!(!p.is_null());
    p
}

#[test]
fn simulate_run_and_read_trace() {
    let p = small_problem();
    let (mut rows, mut cols) = (0, 0);
    assert_eq!(unsafe { bsgd_problem_dims(p, &mut rows, &mut cols) }, BsgdStatus::Ok);
    assert_eq!(cols, 256);
    assert_eq!(rows, 12 * 23);

    let mut u_max = 0.0;
    assert_eq!(
        unsafe { bsgd_problem_largest_eigenvalue(p, 1e-10, 10_000, &mut u_max) },
        BsgdStatus::Ok
    );
    let mut cfg = bsgd_solver_config_default();
    cfg.mu = 0.4 / u_max;
    cfg.epochs = 20;

    let mut t = ptr::null_mut();
    assert_eq!(unsafe { bsgd_run(p, BsgdSolverKind::Bsgd, &cfg, 1, &mut t) }, BsgdStatus::Ok);
    let len = unsafe { bsgd_trace_len(t) };
    assert_eq!(len, 21);
    let mut first = BsgdTraceSample::default();
    let mut last = BsgdTraceSample::default();
    unsafe {
        assert_eq!(bsgd_trace_sample(t, 0, &mut first), BsgdStatus::Ok);
        assert_eq!(bsgd_trace_sample(t, len - 1, &mut last), BsgdStatus::Ok);
        assert_eq!(bsgd_trace_sample(t, len, &mut last), BsgdStatus::InvalidArgument);
    }
    assert!(last_error().contains("out of range"));
    assert_eq!(first.relative_error, 1.0);
    assert_eq!(last.epoch, 20.0);
    assert!(last.relative_error < 1.0);
    assert!((last.matvec_units - 40.0).abs() < 1e-9);

    let mut x = vec![0.0; cols];
    assert_eq!(unsafe { bsgd_trace_final_iterate(t, x.as_mut_ptr(), cols) }, BsgdStatus::Ok);
    assert!(x.iter().any(|&v| v != 0.0));
    assert_eq!(
        unsafe { bsgd_trace_final_iterate(t, x.as_mut_ptr(), cols - 1) },
        BsgdStatus::ShapeMismatch
    );

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("t.csv").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { bsgd_trace_write_csv(t, path.as_ptr()) }, BsgdStatus::Ok);
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(text.starts_with("epoch,relative_error,objective,matvec_units\n"));
    assert_eq!(text.lines().count(), 22);

    unsafe {
        bsgd_trace_free(t);
        bsgd_problem_free(p);
    }
}

#[test]
fn divergence_returns_partial_trace() {
    let p = small_problem();
    let mut u_max = 0.0;
    unsafe { bsgd_problem_largest_eigenvalue(p, 1e-10, 10_000, &mut u_max) };
    let mut cfg = bsgd_solver_config_default();
    cfg.lambda = 0.0;
    cfg.mu = 2.0 / (2.0 * u_max);
    cfg.epochs = 500;
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { bsgd_run(p, BsgdSolverKind::Bsgd, &cfg, 1, &mut t) }, BsgdStatus::Divergence);
    assert!(!t.is_null());
    assert!(unsafe { bsgd_trace_len(t) } >= 1);
    assert!(last_error().contains("diverged"));
    unsafe {
        bsgd_trace_free(t);
        bsgd_problem_free(p);
    }
}

#[test]
fn error_codes() {
    let mut p = ptr::null_mut();
    assert_eq!(
        unsafe { bsgd_problem_simulate(4, 36, 17.7, 1, 1, 1, &mut p) },
        BsgdStatus::InvalidArgument
    );
    assert!(p.is_null());
    assert!(last_error().contains("size"));
    assert_eq!(
        unsafe { bsgd_problem_simulate(16, 36, 17.7, 1, 1, 1, ptr::null_mut()) },
        BsgdStatus::NullPointer
    );
    let missing = CString::new("/definitely/not/here").unwrap();
    assert_eq!(unsafe { bsgd_problem_load(missing.as_ptr(), true, 1, 1, &mut p) }, BsgdStatus::Io);
    let cfg = bsgd_solver_config_default();
    let mut t = ptr::null_mut();
    assert_eq!(
        unsafe { bsgd_run(ptr::null(), BsgdSolverKind::Ista, &cfg, 1, &mut t) },
        BsgdStatus::NullPointer
    );
    assert_eq!(unsafe { bsgd_trace_len(ptr::null()) }, 0);
    unsafe {
        bsgd_trace_free(ptr::null_mut());
        bsgd_problem_free(ptr::null_mut());
    }

    let sp = small_problem();
    let mut bad = bsgd_solver_config_default();
    bad.rho = 0.0;
    assert_eq!(
        unsafe { bsgd_run(sp, BsgdSolverKind::Admm, &bad, 1, &mut t) },
        BsgdStatus::InvalidArgument
    );
    assert!(t.is_null());
    unsafe { bsgd_problem_free(sp) };
}

#[test]
fn tv_functions() {
    let img = [1.0, 0.0, 0.0, 1.0];
    let mut v = 0.0;
    assert_eq!(unsafe { bsgd_tv_value(img.as_ptr(), 2, 2, &mut v) }, BsgdStatus::Ok);
    assert!((v - (2.0 + 2f64.sqrt())).abs() < 1e-12);

    let mut out = [0.0; 4];
    assert_eq!(
        unsafe { bsgd_tv_prox(img.as_ptr(), 2, 2, 0.0, 100, 1e-5, out.as_mut_ptr()) },
        BsgdStatus::Ok
    );
    assert_eq!(out, img);
    assert_eq!(
        unsafe { bsgd_tv_prox(img.as_ptr(), 2, 2, -1.0, 100, 1e-5, out.as_mut_ptr()) },
        BsgdStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { bsgd_tv_value(ptr::null(), 2, 2, &mut v) },
        BsgdStatus::NullPointer
    );
}

#[test]
fn load_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let geom = bsgd_tv::sim::FanBeamGeometry {
        num_angles: 8,
        ..bsgd_tv::sim::FanBeamGeometry::for_size(16)
    };
    let scan = bsgd_tv::sim::simulate(&geom, f64::INFINITY, 1).unwrap();
    scan.matrix.save(dir.path().join("matrix.txt")).unwrap();
    scan.phantom.save_text(dir.path().join("phantom.txt")).unwrap();
    bsgd_tv::linalg::save_vector(&scan.noisy, dir.path().join("y_noisy.txt")).unwrap();
    let c = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { bsgd_problem_load(c.as_ptr(), true, 2, 2, &mut p) }, BsgdStatus::Ok, "{}", last_error());
    let (mut r, mut k) = (0, 0);
    unsafe { bsgd_problem_dims(p, &mut r, &mut k) };
    assert_eq!((r, k), (scan.matrix.nrows(), 256));
    unsafe { bsgd_problem_free(p) };
}

#[test]
fn header_is_generated_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("bsgd_tv.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "bsgd_problem_simulate",
        "bsgd_run",
        "bsgd_trace_sample",
        "bsgd_last_error_message",
        "typedef struct BsgdProblem BsgdProblem",
        "BSGD_STATUS_DIVERGENCE = 6",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler available; skipping syntax check");
        return;
    };
    assert!(status.success());
}
