use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mvsdde"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn summary(dir: &Path) -> String {
    std::fs::read_to_string(dir.join("summary.txt")).unwrap()
}

#[test]
fn missing_tau_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.json",
        r#"{"grid": {"horizon": 1.0, "steps_per_delay": 4}, "model": {"name": "opinion"}}"#,
    );
    let o = run("simulate", &cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tau"));
}

#[test]
fn zero_iterations_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.json",
        r#"{"grid": {"tau": 0.25, "horizon": 0.5, "steps_per_delay": 4},
            "model": {"name": "opinion"}, "fixpoint": {"max_iter": 0}}"#,
    );
    let o = run("fixpoint", &cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("max_iter"));
}

#[test]
fn missing_config_file_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run("simulate", &tmp.path().join("nope.json"), tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn transport_prints_distance() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write(tmp.path(), "a.csv", "particle,lag1_1,lag0_1\n0,0,0\n");
    let b = write(tmp.path(), "b.csv", "particle,lag1_1,lag0_1\n0,0,2\n");
    let o = bin()
        .args(["transport", "--v", "quadratic"])
        .arg(&a)
        .arg(&b)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let d: f64 = String::from_utf8_lossy(&o.stdout).trim().parse().unwrap();
    // psi(|0 - 2| / 2) * (1 + V(0) + V(2)) = 1 * 5
    assert!((d - 5.0).abs() < 1e-12, "{d}");

    let o = bin().arg("transport").arg(&a).arg(&a).output().unwrap();
    assert_eq!(
        String::from_utf8_lossy(&o.stdout)
            .trim()
            .parse::<f64>()
            .unwrap(),
        0.0
    );
}

#[test]
fn transport_rejects_unequal_atom_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write(tmp.path(), "a.csv", "particle,lag1_1,lag0_1\n0,0,0\n");
    let b = write(
        tmp.path(),
        "b.csv",
        "particle,lag1_1,lag0_1\n0,0,2\n1,1,1\n",
    );
    let o = bin().arg("transport").arg(&a).arg(&b).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_pure_delay_writes_expected_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        "simulate",
        &configs().join("pure_delay.json"),
        tmp.path(),
        &["--seed", "1"],
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let mu = mvsdde::EmpiricalMeasure::read_csv_file(&tmp.path().join("measure_t2.csv")).unwrap();
    assert_eq!(mu.len(), 4);
    for atom in mu.atoms() {
        // X(2) = -1/2 up to O(h) with h = 1/100
        assert!((atom.current()[0] + 0.5).abs() <= 0.05);
        assert!(atom.lag(1)[0].abs() <= 0.05);
    }
    let paths = std::fs::read_to_string(tmp.path().join("paths.csv")).unwrap();
    assert!(paths.starts_with("particle,t,x_1\n"));
}

#[test]
fn simulate_is_reproducible_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("multi_delay.json");
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    for (dir, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        assert_eq!(
            run("simulate", &cfg, dir, &["--seed", seed]).status.code(),
            Some(0)
        );
    }
    let read = |d: &Path| std::fs::read(d.join("paths.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn fixpoint_without_measure_dependence_stops_at_iteration_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "ou.json",
        r#"{"grid": {"tau": 0.5, "horizon": 1.0, "steps_per_delay": 8},
            "model": {"name": "delayed_ou"}, "run": {"particles": 32}}"#,
    );
    let o = run("fixpoint", &cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(tmp.path().join("picard.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "iteration,distance,ratio");
    assert_eq!(rows.len(), 3);
    assert!(rows[2].starts_with("2,0.0000000000000000e0"), "{}", rows[2]);
    assert!(summary(tmp.path()).contains("converged=true iterations=2"));
}

#[test]
fn verify_unit_tent_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        "verify",
        &configs().join("opinion_unit_tent.json"),
        tmp.path(),
        &[],
    );
    let s = summary(tmp.path());
    assert_eq!(o.status.code(), Some(0), "{s}");
    assert!(s.contains("K=4.0000000000000000e0"), "{s}");
    assert!(s.contains("theta=2.0000000000000000e0"), "{s}");
    assert!(s.contains("zeta=8.5000000000000000e0"), "{s}");
    assert!(s.contains("overall PASS"));
}

#[test]
fn verify_halved_k_fails_with_witness() {
    let tmp = tempfile::tempdir().unwrap();
    let base = std::fs::read_to_string(configs().join("opinion_unit_tent.json")).unwrap();
    let mut cfg: serde_json::Value = serde_json::from_str(&base).unwrap();
    cfg["verify"]["k_override"] = serde_json::json!(2.0);
    let path = write(tmp.path(), "half.json", &cfg.to_string());
    let o = run("verify", &path, tmp.path(), &[]);
    let s = summary(tmp.path());
    assert_eq!(o.status.code(), Some(1), "{s}");
    assert!(s.contains("lipschitz FAIL"));
    assert!(s.contains("lipschitz witness"));
}

#[test]
fn verify_without_declared_constants_only_estimates() {
    let tmp = tempfile::tempdir().unwrap();
    let base = std::fs::read_to_string(configs().join("opinion_unit_tent.json")).unwrap();
    let mut cfg: serde_json::Value = serde_json::from_str(&base).unwrap();
    cfg["verify"]["declare_constants"] = serde_json::json!(false);
    cfg["verify"]["probes"] = serde_json::json!(1000);
    let path = write(tmp.path(), "est.json", &cfg.to_string());
    let o = run("verify", &path, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", summary(tmp.path()));
    assert!(!tmp.path().join("radial.csv").exists());
}

#[test]
fn convergence_particle_sweep_writes_medians() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "p.json",
        r#"{"grid": {"tau": 0.25, "horizon": 0.5, "steps_per_delay": 4},
            "model": {"name": "opinion"},
            "fixpoint": {"lambda": 0},
            "convergence": {"kind": "particles", "levels": [8, 16], "seeds": 2}}"#,
    );
    let o = run("convergence", &cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(tmp.path().join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    assert!(summary(tmp.path()).contains("median_decreasing="));
}
