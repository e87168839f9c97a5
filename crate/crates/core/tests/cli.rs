use std::path::Path;
use std::process::{Command, Output};

fn semistop(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semistop"))
        .args(args)
        .current_dir(dir)
        .env("SEMISTOP_WORKERS", "1")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

const BASE: &str = "N = 16\nangles = 0:15:165\nplots = false\n";
const SMALL: &str = "N = 16\nangles = 0:15:165\nplots = false\nmax_iters = 30\nrho = 0.02\n";

#[test]
fn run_writes_outputs_and_applies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.cfg", SMALL);
    let out = semistop(
        &["run", &cfg, "--out", "res", "--seed", "5", "--max-iters", "12", "--dump-matrix", "--deterministic"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let res = dir.path().join("res");
    for f in ["run.csv", "summary.csv", "sinogram.csv", "phantom.pgm", "matrix.txt", "matrix.bin"] {
        assert!(res.join(f).exists(), "{f} missing");
    }
    let rows = std::fs::read_to_string(res.join("run.csv")).unwrap().lines().count();
    assert_eq!(rows, 13);
}

#[test]
fn early_stop_flag_cuts_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.cfg", &format!("{BASE}rho = 0.02\nrules = dp\nmax_iters = 400\n"));
    let out = semistop(&["run", &cfg, "--out", "res", "--early-stop", "dp"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = std::fs::read_to_string(dir.path().join("res/run.csv")).unwrap().lines().count();
    assert!(rows < 401, "run was not cut short ({rows} lines)");
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", "N = 16\nangles = 0:15:165\ncolour = blue\n");
    let out = semistop(&["run", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("colour"), "{err}");

    let out = semistop(&["reproduce", "nope"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "div.cfg", &format!("{BASE}rho = 0.02\nomega = 1000\nmax_iters = 400\ntrace = none\n"));
    let out = semistop(&["run", &cfg, "--out", "res"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    // the exact trace checks the relaxation up front
    let cfg = write(dir.path(), "exact.cfg", &format!("{BASE}rho = 0.02\nomega = 1000\ntrace = exact\n"));
    assert_eq!(semistop(&["run", &cfg, "--out", "res2"], dir.path()).status.code(), Some(2));
}

#[test]
fn grid_writes_one_summary_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.cfg", &format!("{BASE}max_iters = 30\nimages = false\nrho = 0.01 | 0.05\nscheme = landweber | sirt\n"));
    let out = semistop(&["grid", &cfg, "--out", "grid"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(dir.path().join("grid/grid_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    assert!(summary.starts_with("run,rho,scheme,"));
}
