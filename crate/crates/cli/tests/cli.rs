use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn volfill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volfill")).args(args).output().expect("spawn volfill")
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn short_s1(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(scenario("s1.scn")).unwrap().replace("T = 50", "T = 3");
    let path = dir.join("short.scn");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_writes_diagnostics_snapshots_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let res = volfill(&["run", short_s1(tmp.path()).to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert!(csv.starts_with("t,"));
    assert_eq!(csv.lines().count(), 1 + 31);
    assert!(out.join("summary.txt").exists());
    let snaps = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("state_t")).count();
    assert_eq!(snaps, 31);
}

#[test]
fn fit_reads_a_written_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    assert!(volfill(&["run", short_s1(tmp.path()).to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    let csv = out.join("diagnostics.csv");
    let res = volfill(&["fit", csv.to_str().unwrap(), "--window", "1,3"]);
    assert!(res.status.success());
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.contains("exponential"), "{text}");
    assert_eq!(volfill(&["fit", csv.to_str().unwrap(), "--window", "3,1"]).status.code(), Some(1));
}

#[test]
fn invalid_scenarios_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.scn");
    fs::write(&bad, fs::read_to_string(scenario("s1.scn")).unwrap().replace("N = 100", "N = 0")).unwrap();
    let res = volfill(&["run", bad.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(!res.stderr.is_empty());

    let typo = tmp.path().join("typo.scn");
    fs::write(&typo, fs::read_to_string(scenario("s1.scn")).unwrap().replace("tau_max", "tau_mx")).unwrap();
    assert_eq!(volfill(&["check", typo.to_str().unwrap()]).status.code(), Some(1));

    assert_eq!(volfill(&["run", tmp.path().join("missing.scn").to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn solver_abort_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("abort.scn");
    let text = fs::read_to_string(scenario("s1.scn"))
        .unwrap()
        .replace("tau = 1e-3", "tau = 1e-3\nnewton_max_iter = 1\nnewton_tol = 1e-300")
        .replace("tau_min = 1e-8", "tau_min = 1e-4");
    fs::write(&path, text).unwrap();
    let res = volfill(&["run", path.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn verify_is_deterministic_for_a_seed() {
    let a = volfill(&["verify", "--seed", "7"]);
    let b = volfill(&["verify", "--seed", "7"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}
