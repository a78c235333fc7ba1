use std::path::Path;
use std::process::{Command, Output};

use bsgd_tv::ConvergenceTrace;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bsgd-tv"));
    cmd.env_remove("BSGD_WORKERS");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn simulate_small(dir: &Path) {
    let out = run(bin()
        .args(["simulate", "--size", "16", "--angles", "12", "--out-dir"])
        .arg(dir));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn analyze_value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("{key} missing from:\n{text}"))
        .to_string()
}

#[test]
fn simulate_writes_identical_files_twice() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    simulate_small(a.path());
    simulate_small(b.path());
    for name in ["matrix.txt", "phantom.txt", "phantom.pgm", "y_clean.txt", "y_noisy.txt"] {
        let (x, y) = (std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        assert!(!x.is_empty(), "{name} empty");
        assert_eq!(x, y, "{name} differs");
    }
    assert_ne!(read(a.path().join("y_clean.txt")), read(a.path().join("y_noisy.txt")));
}

#[test]
fn simulate_without_noise() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .args(["simulate", "--size", "16", "--angles", "8", "--no-noise", "--out-dir"])
        .arg(dir.path()));
    assert!(out.status.success());
    assert_eq!(read(dir.path().join("y_clean.txt")), read(dir.path().join("y_noisy.txt")));
}

#[test]
fn simulate_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin().args(["simulate", "--size", "4", "--out-dir"]).arg(dir.path()));
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    let out = run(bin().args(["simulate", "--no-noise", "--snr-db", "10"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_identity_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eye.txt");
    std::fs::write(&path, "3 3 3\n0 0 1\n1 1 1\n2 2 1\n").unwrap();
    let out = run(bin().args(["analyze", "--matrix"]).arg(&path).args(["--mu", "0.25"]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!((analyze_value(&text, "u_max").parse::<f64>().unwrap() - 1.0).abs() < 1e-10);
    assert!((analyze_value(&text, "mu_sup").parse::<f64>().unwrap() - 0.5).abs() < 1e-10);
    assert_eq!(analyze_value(&text, "verdict"), "ADMIT");

    let out = run(bin().args(["analyze", "--matrix"]).arg(&path).args(["--mu", "0.5"]));
    assert_eq!(analyze_value(&stdout(&out), "verdict"), "REJECT");
}

#[test]
fn analyze_default_problem_admits_default_step() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(bin().arg("simulate").arg("--out-dir").arg(dir.path())).status.success());
    let out = run(bin().arg("analyze").arg("--matrix").arg(dir.path().join("matrix.txt")));
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(analyze_value(&text, "mu"), "0.0006");
    assert_eq!(analyze_value(&text, "verdict"), "ADMIT");
    assert!(analyze_value(&text, "top_mode_radius").parse::<f64>().unwrap() < 1.0);
}

#[test]
fn run_defaults_beat_gradient_descent() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(bin().arg("simulate").arg("--out-dir").arg(dir.path())).status.success());
    let out = run(bin()
        .args(["run", "--solver", "bsgd,gd", "--plot", "--data-dir"])
        .arg(dir.path())
        .arg("--out-dir")
        .arg(dir.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let final_error = |name: &str| {
        let samples = ConvergenceTrace::samples_from_csv(&read(dir.path().join(name))).unwrap();
        assert_eq!(samples.len(), 201);
        samples.last().unwrap().relative_error
    };
    assert!(final_error("trace_bsgd.csv") < final_error("trace_gd.csv"));
    let svg = read(dir.path().join("convergence.svg"));
    assert!(svg.starts_with("<svg") && svg.contains("BSGD-TV") && svg.contains("GD"));
}

#[test]
fn run_divergence_exits_3_with_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    let out = run(bin()
        .args(["run", "--lambda", "0", "--mu", "1", "--epochs", "500", "--data-dir"])
        .arg(dir.path())
        .arg("--out-dir")
        .arg(dir.path()));
    assert_eq!(out.status.code(), Some(3));
    let samples = ConvergenceTrace::samples_from_csv(&read(dir.path().join("trace_bsgd.csv"))).unwrap();
    assert!(!samples.is_empty() && samples.len() < 501);
}

#[test]
fn run_missing_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin().args(["run", "--data-dir"]).arg(dir.path().join("nothing")));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("matrix.txt"));

    let out = run(bin().args(["run", "--solver", "newton"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    let once = |sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = run(bin()
            .args(["run", "--solver", "all", "--epochs", "10", "--blocks", "2x2", "--alpha", "0.5", "--data-dir"])
            .arg(dir.path())
            .arg("--out-dir")
            .arg(&out_dir));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        ["bsgd", "ista", "gd", "admm"].map(|s| read(out_dir.join(format!("trace_{s}.csv"))))
    };
    assert_eq!(once("a"), once("b"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "solvers = [\"gd\"]\nepochs = 3\nsample_every = 1\n").unwrap();
    let rows = |extra: &[&str]| {
        let out_dir = tempfile::tempdir().unwrap();
        let out = run(bin()
            .arg("run")
            .arg("--config")
            .arg(&config)
            .args(extra)
            .arg("--data-dir")
            .arg(dir.path())
            .arg("--out-dir")
            .arg(out_dir.path()));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        ConvergenceTrace::samples_from_csv(&read(out_dir.path().join("trace_gd.csv"))).unwrap().len()
    };
    assert_eq!(rows(&[]), 4);
    assert_eq!(rows(&["--epochs", "5"]), 6);

    std::fs::write(&config, "epoch = 3\n").unwrap();
    let out = run(bin().arg("run").arg("--config").arg(&config).arg("--data-dir").arg(dir.path()));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn workers_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    let with_env = |workers: &str| {
        run(bin()
            .env("BSGD_WORKERS", workers)
            .args(["run", "--epochs", "2", "--data-dir"])
            .arg(dir.path())
            .arg("--out-dir")
            .arg(dir.path()))
    };
    assert!(with_env("2").status.success());
    assert_eq!(with_env("0").status.code(), Some(2));
}
