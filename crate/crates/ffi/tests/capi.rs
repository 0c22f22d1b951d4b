use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use covsteer_ffi::*;

const SCALAR: &str = r#"{
    "system": {"N": 1, "A": [[2.0]], "B": [[1.0]], "D": [[1.0]]},
    "Q": [[0.0]], "R": [[1.0]],
    "mu_i": [0.0], "Sigma_i": [[1.0]], "mu_f": [0.0], "Sigma_f": [[SIGMA_F]]
}"#;

fn problem(sigma_f: f64) -> *mut CsProblemHandle {
    let text = CString::new(SCALAR.replace("SIGMA_F", &sigma_f.to_string())).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { cs_problem_from_json(text.as_ptr(), &mut h) }, CsStatus::Ok);
    assert!(!h.is_null());
    h
}

fn last_error() -> String {
    let p = cs_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn scalar_round_trip() {
    let p = problem(2.0);
    let (mut n, mut m, mut q, mut horizon) = (0, 0, 0, 0);
    assert_eq!(unsafe { cs_problem_dims(p, &mut n, &mut m, &mut q, &mut horizon) }, CsStatus::Ok);
    assert_eq!((n, m, q, horizon), (1, 1, 1, 1));

    let mut s = ptr::null_mut();
    assert_eq!(unsafe { cs_solve(p, 0.0, &mut s) }, CsStatus::Ok);
    let mut cost = 0.0;
    assert_eq!(unsafe { cs_solution_cost(s, &mut cost) }, CsStatus::Ok);
    assert!((cost - 1.0).abs() < 1e-5);

    let mut gain = [0.0];
    assert_eq!(unsafe { cs_solution_gain(s, 0, gain.as_mut_ptr(), 1) }, CsStatus::Ok);
    assert!((gain[0] + 1.0).abs() < 1e-5);
    let mut sigma = [0.0];
    assert_eq!(unsafe { cs_solution_covariance(s, 1, sigma.as_mut_ptr(), 1) }, CsStatus::Ok);
    assert!((sigma[0] - 2.0).abs() < 1e-6);
    let mut mean = [1.0];
    assert_eq!(unsafe { cs_solution_mean(s, 0, mean.as_mut_ptr(), 1) }, CsStatus::Ok);
    assert_eq!(mean[0], 0.0);

    let (mut worst, mut pass) = (1.0, false);
    assert_eq!(unsafe { cs_solution_certificate(s, &mut worst, &mut pass) }, CsStatus::Ok);
    assert!(pass && worst < 1e-6);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { cs_solution_to_json(s, &mut json) }, CsStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    assert!(text.contains("\"Sigma\"") && text.contains("\"cost\""));
    unsafe {
        cs_string_free(json);
        cs_solution_free(s);
        cs_problem_free(p);
    }
}

#[test]
fn error_paths() {
    let bad = CString::new("{not json").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { cs_problem_from_json(bad.as_ptr(), &mut h) }, CsStatus::InvalidInput);
    assert!(h.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { cs_problem_from_json(ptr::null(), &mut h) }, CsStatus::NullPointer);
    assert!(last_error().contains("json"));

    let p = problem(0.5);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { cs_solve(p, 0.0, &mut s) }, CsStatus::Infeasible);
    assert!(s.is_null());

    let p2 = problem(2.0);
    assert_eq!(unsafe { cs_solve(p2, 0.0, &mut s) }, CsStatus::Ok);
    let mut buf = [0.0; 1];
    assert_eq!(unsafe { cs_solution_gain(s, 1, buf.as_mut_ptr(), 1) }, CsStatus::OutOfRange);
    assert_eq!(unsafe { cs_solution_covariance(s, 0, buf.as_mut_ptr(), 0) }, CsStatus::BufferTooSmall);
    unsafe {
        cs_solution_free(s);
        cs_problem_free(p);
        cs_problem_free(p2);
        cs_problem_free(ptr::null_mut());
        cs_string_free(ptr::null_mut());
    }
}

#[test]
fn stateless_helpers() {
    let mut count = 0;
    assert_eq!(unsafe { cs_count_variables(4, 2, 32, &mut count) }, CsStatus::Ok);
    assert_eq!(count, 884);
    let mut z = 0.0;
    assert_eq!(unsafe { cs_tighten_gaussian(0.05, &mut z) }, CsStatus::Ok);
    assert!((z - 1.6448536269514722).abs() < 1e-9);
    assert_eq!(unsafe { cs_tighten_gaussian(1.5, &mut z) }, CsStatus::InvalidInput);
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/covsteer.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["cs_problem_from_json", "cs_solve", "cs_solution_gain", "cs_last_error", "CsStatus_Ok"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&header).output() else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
