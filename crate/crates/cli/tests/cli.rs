use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptvmc")).args(args).output().expect("spawn ptvmc")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn run_cmd(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let mut all = vec![reader.headers().unwrap().iter().map(String::from).collect()];
    for rec in reader.records() {
        all.push(rec.unwrap().iter().map(String::from).collect());
    }
    all
}

const QUENCH_2X2: &str = r#"
h_final = 3.0
scheme = "S-PPE-2"
dt = 0.01
t_final = 0.03
seed = 4

[lattice]
rows = 2
cols = 2

[ansatz]
kind = "jastrow"

[compress.sampling]
full_summation = true

[compress.optimizer]
max_iterations = 40
"#;

#[test]
fn quench_outputs_and_determinism() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "q.toml", QUENCH_2X2);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    assert_eq!(run_cmd("quench", &cfg, &a, &["--threads", "1"]).status.code(), Some(0));
    assert_eq!(run_cmd("quench", &cfg, &b, &["--threads", "1"]).status.code(), Some(0));
    assert_eq!(run_cmd("quench", &cfg, &c, &["--threads", "2"]).status.code(), Some(0));

    let traj = fs::read_to_string(a.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,mx,mx_err,infidelity_1,iterations_1\n"));
    assert_eq!(traj.lines().count(), 1 + 4);
    assert_eq!(traj, fs::read_to_string(b.join("trajectory.csv")).unwrap());
    assert_eq!(traj, fs::read_to_string(c.join("trajectory.csv")).unwrap());
    assert!(a.join("diagnostics.jsonl").exists());
    for step in 0..=3 {
        assert!(a.join(format!("checkpoints/step_{step:05}.ckpt")).exists());
    }
}

#[test]
fn effective_config_reproduces_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "q.toml", QUENCH_2X2);
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    assert_eq!(run_cmd("quench", &cfg, &first, &["--seed", "9"]).status.code(), Some(0));
    let effective = first.join("effective_config.toml");
    assert!(fs::read_to_string(&effective).unwrap().contains("seed = 9"));
    assert_eq!(run_cmd("quench", &effective, &second, &[]).status.code(), Some(0));
    assert_eq!(
        fs::read(first.join("trajectory.csv")).unwrap(),
        fs::read(second.join("trajectory.csv")).unwrap()
    );
    assert_eq!(
        fs::read(&effective).unwrap(),
        fs::read(second.join("effective_config.toml")).unwrap()
    );
}

#[test]
fn invalid_scheme_lists_supported() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "q.toml", &QUENCH_2X2.replace("S-PPE-2", "XYZ-2"));
    let out = run_cmd("quench", &cfg, &tmp.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["LPE-2", "PPE-4", "S-LPE-3", "S-PPE-3"] {
        assert!(err.contains(name), "missing {name} in: {err}");
    }
}

#[test]
fn usage_and_field_errors_exit_one() {
    assert_eq!(run(&["quench"]).status.code(), Some(1));
    assert_eq!(run(&["bogus"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "q.toml", &format!("{QUENCH_2X2}\nunknown_key = 1\n"));
    let out = run_cmd("quench", &cfg, &tmp.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown_key"));
    let missing = run_cmd("exact", &tmp.path().join("nope.toml"), &tmp.path().join("o"), &[]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn scheme_check_single_dt_and_bad_order() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "s.toml", "schemes = [\"LPE-2\", \"S-PPE-3\"]\ndt_grid = [0.002]\n");
    let out = tmp.path().join("o");
    assert_eq!(run_cmd("scheme-check", &cfg, &out, &[]).status.code(), Some(0));
    let table = rows(&out.join("scheme_check.csv"));
    assert_eq!(table[0], ["scheme", "order", "dt", "l2_error", "slope"]);
    assert_eq!(table.len(), 3);
    for row in &table[1..] {
        assert!(row[3].parse::<f64>().unwrap() > 0.0);
        assert_eq!(row[4], "");
    }

    let bad = write_config(tmp.path(), "bad.toml", "schemes = [\"LPE-7\"]\n");
    assert_eq!(run_cmd("scheme-check", &bad, &tmp.path().join("p"), &[]).status.code(), Some(1));
}

#[test]
fn scheme_check_default_grid_slopes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "s.toml", "");
    let out = tmp.path().join("o");
    assert_eq!(run_cmd("scheme-check", &cfg, &out, &[]).status.code(), Some(0));
    let table = rows(&out.join("scheme_check.csv"));
    let mut seen = std::collections::BTreeSet::new();
    for row in &table[1..] {
        let order: f64 = row[1].parse().unwrap();
        let slope: f64 = row[4].parse().unwrap();
        assert!((slope - order).abs() <= 0.3, "{} slope {slope}", row[0]);
        seen.insert(row[0].clone());
    }
    assert_eq!(seen.len(), 13);
}

fn matching_config(rows: usize, cols: usize, perturbation: f64, iterations: usize) -> String {
    format!(
        r#"
seed = 2
target_scale = 0.15
perturbation = {perturbation}

[lattice]
rows = {rows}
cols = {cols}

[ansatz]
kind = "jastrow"

[compress.sampling.sampler]
n_chains = 8
n_samples_per_chain = 64

[compress.optimizer]
max_iterations = {iterations}
target_infidelity = -1.0
"#
    )
}

#[test]
fn estimator_bench_identical_start() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "m.toml", &matching_config(2, 3, 0.0, 0));
    let out = tmp.path().join("o");
    let status = run_cmd("estimator-bench", &cfg, &out, &[]).status.code();
    assert!(matches!(status, Some(0) | Some(2)));
    let table = rows(&out.join("estimators.csv"));
    assert_eq!(table[0], ["iteration", "estimator", "value", "variance", "exact"]);
    assert_eq!(table.len(), 1 + 4);
    for row in &table[1..] {
        let value: f64 = row[2].parse().unwrap();
        assert!((value - 1.0).abs() < 1e-10, "{row:?}");
        assert!((row[4].parse::<f64>().unwrap() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn estimator_bench_control_variates_reduce_variance() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "m.toml", &matching_config(3, 3, 0.05, 8));
    let out = tmp.path().join("o");
    assert_eq!(run_cmd("estimator-bench", &cfg, &out, &[]).status.code(), Some(0));
    let table = rows(&out.join("estimators.csv"));
    let mut by_iter: std::collections::BTreeMap<String, Vec<(String, f64)>> = Default::default();
    for row in &table[1..] {
        by_iter.entry(row[0].clone()).or_default().push((row[1].clone(), row[3].parse().unwrap()));
    }
    assert!(by_iter.len() > 1);
    for (it, vars) in by_iter {
        let var = |name: &str| vars.iter().find(|(n, _)| n == name).unwrap().1;
        assert!(var("single_mc_cv") <= var("single_mc"), "iteration {it}");
        assert!(var("double_mc_cv") <= var("double_mc"), "iteration {it}");
    }
}

#[test]
fn estimator_bench_exact_column_gated() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "m.toml", &matching_config(4, 5, 0.05, 0));
    let out = tmp.path().join("o");
    run_cmd("estimator-bench", &cfg, &out, &[]);
    let table = rows(&out.join("estimators.csv"));
    assert_eq!(table[0], ["iteration", "estimator", "value", "variance"]);
}

#[test]
fn compress_writes_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "m.toml", &matching_config(2, 3, 0.05, 5));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run_cmd("compress", &cfg, &a, &["--threads", "1"]).status.code(), Some(0));
    assert_eq!(run_cmd("compress", &cfg, &b, &["--threads", "2"]).status.code(), Some(0));
    let table = rows(&a.join("compress.csv"));
    assert_eq!(table[0], ["iteration", "infidelity", "exact_infidelity"]);
    assert!(a.join("final.ckpt").exists());
    assert_eq!(fs::read(a.join("compress.csv")).unwrap(), fs::read(b.join("compress.csv")).unwrap());
}

fn exact_config(t_final: f64, extra: &str) -> String {
    format!("h_final = 0.7\ncoupling = 1.0\nt_final = {t_final}\ndt = 0.05\n{extra}\n[lattice]\nrows = 1\ncols = 1\n")
}

#[test]
fn exact_zero_time_single_row() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "e.toml", &exact_config(0.0, ""));
    let out = tmp.path().join("o");
    assert_eq!(run_cmd("exact", &cfg, &out, &[]).status.code(), Some(0));
    let table = rows(&out.join("exact.csv"));
    assert_eq!(table.len(), 2);
    assert_eq!(table[1][1].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn exact_single_spin_rotation() {
    // one spin: the bond term is a constant, so z-up precesses about x
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "e.toml", &exact_config(3.0, "initial = \"z_polarized\""));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run_cmd("exact", &cfg, &a, &["--seed", "1"]).status.code(), Some(0));
    assert_eq!(run_cmd("exact", &cfg, &b, &["--seed", "77"]).status.code(), Some(0));
    assert_eq!(fs::read(a.join("exact.csv")).unwrap(), fs::read(b.join("exact.csv")).unwrap());
    let table = rows(&a.join("exact.csv"));
    assert_eq!(table[0], ["t", "mx", "fidelity_vs_initial", "mz"]);
    assert_eq!(table.len(), 1 + 61);
    for row in &table[1..] {
        let v: Vec<f64> = row.iter().map(|s| s.parse().unwrap()).collect();
        let (t, mx, fid, mz) = (v[0], v[1], v[2], v[3]);
        let angle = 2.0 * 0.7 * t;
        assert!(mx.abs() < 1e-10);
        assert!((mz - angle.cos()).abs() < 1e-10, "t={t} mz={mz}");
        assert!((fid - (0.7 * t).cos().powi(2)).abs() < 1e-10);
    }
}

#[test]
fn exact_size_cap() {
    let tmp = TempDir::new().unwrap();
    let body = "h_final = 1.0\nt_final = 0.1\n[lattice]\nrows = 5\ncols = 5\n";
    let cfg = write_config(tmp.path(), "e.toml", body);
    assert_eq!(run_cmd("exact", &cfg, &tmp.path().join("o"), &[]).status.code(), Some(1));
}
