use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use pdelay_ffi::*;

const SUITE: &str = r#"{"problem": {"kind": "quadratic_suite", "m": 3, "n": 2, "r": 2, "coupling": "total", "seed": 5},
 "algorithm": "ahu_delayed", "schedule": {"kind": "fixed", "bound": 2, "age": 2},
 "stepsize": {"mode": "rate"}, "iters": 300}"#;

fn experiment(json: &str) -> *mut PdExperiment {
    let json = CString::new(json).unwrap();
    let mut exp = ptr::null_mut();
    let st = unsafe { pd_experiment_from_json(json.as_ptr(), ptr::null(), &mut exp) };
    assert_eq!(st, PdStatus::Ok, "{:?}", last_error());
    exp
}

fn last_error() -> Option<String> {
    let p = pd_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_owned();
    pd_string_free(s);
    out
}

#[test]
fn run_trace_and_final_iterate() {
    let exp = experiment(SUITE);
    unsafe {
        let mut run = ptr::null_mut();
        assert_eq!(pd_run(exp, &mut run), PdStatus::Ok);
        let mut iters = 0;
        assert_eq!(pd_run_iterations(run, &mut iters), PdStatus::Ok);
        assert_eq!(iters, 300);

        let mut csv = ptr::null_mut();
        assert_eq!(pd_run_trace_csv(run, &mut csv), PdStatus::Ok);
        let csv = take(csv);
        assert!(csv.starts_with("k,step_norm,dist_P_sq,dist_D_sq,dist_M_sq,kkt,envelope_bound,active_mask\n"));
        assert_eq!(csv.lines().count(), 302);

        let (mut nx, mut nu) = (0, 0);
        assert_eq!(
            pd_run_final_iterate(run, ptr::null_mut(), &mut nx, ptr::null_mut(), &mut nu),
            PdStatus::Ok
        );
        assert_eq!((nx, nu), (6, 6));
        let mut x = vec![0.0; nx];
        let mut u = vec![0.0; nu - 1];
        let mut nu_small = nu - 1;
        assert_eq!(
            pd_run_final_iterate(run, x.as_mut_ptr(), &mut nx, u.as_mut_ptr(), &mut nu_small),
            PdStatus::BufferTooSmall
        );
        assert_eq!(nu_small, 6);
        let mut u = vec![0.0; nu];
        assert_eq!(
            pd_run_final_iterate(run, x.as_mut_ptr(), &mut nx, u.as_mut_ptr(), &mut nu),
            PdStatus::Ok
        );
        assert!(x.iter().chain(&u).all(|v| v.is_finite()));

        let csv_c = CString::new(csv).unwrap();
        let mut verdict = PdVerdict::NotApplicable;
        let mut report = ptr::null_mut();
        assert_eq!(pd_check_trace(exp, csv_c.as_ptr(), &mut verdict, &mut report), PdStatus::Ok);
        assert_eq!(verdict, PdVerdict::Pass, "{}", take(report));

        pd_run_free(run);
        pd_experiment_free(exp);
    }
}

#[test]
fn runs_are_reproducible_through_the_abi() {
    let exp = experiment(&SUITE.replace("\"fixed\", \"bound\": 2, \"age\": 2", "\"uniform_random\", \"bound\": 3"));
    let mut traces = Vec::new();
    unsafe {
        for _ in 0..2 {
            assert_eq!(pd_experiment_set_seed(exp, 11), PdStatus::Ok);
            let mut run = ptr::null_mut();
            assert_eq!(pd_run(exp, &mut run), PdStatus::Ok);
            let mut csv = ptr::null_mut();
            assert_eq!(pd_run_trace_csv(run, &mut csv), PdStatus::Ok);
            traces.push(take(csv));
            pd_run_free(run);
        }
        pd_experiment_free(exp);
    }
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn errors_are_codes_with_messages() {
    let bad = CString::new(r#"{"problem": {"kind": "formation"}, "bogus": 1}"#).unwrap();
    let mut exp = ptr::null_mut();
    let st = unsafe { pd_experiment_from_json(bad.as_ptr(), ptr::null(), &mut exp) };
    assert_eq!(st, PdStatus::Config);
    assert!(exp.is_null());
    assert!(last_error().unwrap().contains("bogus"));

    let st = unsafe { pd_experiment_from_json(ptr::null(), ptr::null(), &mut exp) };
    assert_eq!(st, PdStatus::NullPointer);

    let exp = experiment(r#"{"problem": {"kind": "formation"}, "algorithm": "ahu_delayed"}"#);
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(pd_tune_report(exp, &mut out), PdStatus::Inapplicable);
        assert!(last_error().unwrap().contains("not smooth"));
        let mut run = ptr::null_mut();
        assert_eq!(pd_run(exp, &mut run), PdStatus::Inapplicable);
        assert!(run.is_null());
        pd_experiment_free(exp);
    }
    // a successful call clears the message
    let exp = experiment(SUITE);
    assert!(last_error().is_none());
    unsafe { pd_experiment_free(exp) };
}

#[test]
fn freeing_null_is_a_no_op() {
    unsafe {
        pd_experiment_free(ptr::null_mut());
        pd_run_free(ptr::null_mut());
        pd_string_free(ptr::null_mut());
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/pdelay.h")
}

fn have_cc() -> bool {
    Command::new("cc").arg("--version").output().is_ok()
}

#[test]
fn header_declares_the_abi() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "pd_last_error",
        "pd_experiment_from_json",
        "pd_experiment_set_seed",
        "pd_experiment_free",
        "pd_tune_report",
        "pd_run",
        "pd_run_free",
        "pd_run_iterations",
        "pd_run_trace_csv",
        "pd_run_final_iterate",
        "pd_check_trace",
        "pd_string_free",
        "PD_STATUS_DIVERGENCE = 2",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    if !have_cc() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("h.c");
    std::fs::write(&src, "#include \"pdelay.h\"\nint main(void) { return PD_STATUS_OK; }\n").unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header().parent().unwrap())
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

/// Links a C program against the static library when cargo produced one
/// next to the test binary.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let lib = exe.parent().unwrap().parent().unwrap().join("libpdelay_ffi.a");
    if !have_cc() || !lib.exists() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "pdelay.h"
int main(void) {
  const char *cfg = "{\"problem\": {\"kind\": \"quadratic_suite\", \"m\": 2, \"n\": 2, \"r\": 1,"
                    " \"coupling\": \"partial\"}, \"iters\": 50}";
  PdExperiment *exp = NULL;
  if (pd_experiment_from_json(cfg, NULL, &exp) != PD_STATUS_OK) { puts(pd_last_error()); return 1; }
  PdRun *run = NULL;
  if (pd_run(exp, &run) != PD_STATUS_OK) { puts(pd_last_error()); return 2; }
  size_t iters = 0;
  pd_run_iterations(run, &iters);
  char *csv = NULL;
  pd_run_trace_csv(run, &csv);
  int ok = iters == 50 && strncmp(csv, "k,step_norm", 11) == 0;
  pd_string_free(csv);
  pd_run_free(run);
  pd_experiment_free(exp);
  PdExperiment *bad = NULL;
  ok = ok && pd_experiment_from_json("{", NULL, &bad) == PD_STATUS_CONFIG && pd_last_error() != NULL;
  return ok ? 0 : 3;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let out = Command::new("cc")
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status, String::from_utf8_lossy(&run.stdout));
}
