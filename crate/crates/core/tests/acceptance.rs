//! Acceptance suite. Each test prints one PASS/FAIL line to stderr (bypassing
//! the test harness capture) and then asserts its outcome.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mvsdde::diagnostics::{
    check_lipschitz, check_lyapunov, gn_eval, gn_threshold, lipschitz_terms, moment_bound,
    moment_bound_formula, probe_pairs, radial_check, uniform_states,
};
use mvsdde::fixedpoint::{apply_h, initial_flow, picard_iterate, PicardConfig};
use mvsdde::measure::{transport_cost, wasserstein_psi_v};
use mvsdde::model::{LyapunovSpec, PsiSpec};
use mvsdde::models::{delayed_ou, opinion_model, pure_delay, OpinionParams};
use mvsdde::particle::{particle_count_sweep, simulate_particles, simulate_particles_flow};
use mvsdde::solver::{solve_frozen, strong_error_sweep};
use mvsdde::{DelayedState, EmpiricalMeasure, NoiseBank, NoiseStream, TimeGrid};

fn report(
    id: u32,
    name: &str,
    pass: bool,
    detail: &str,
    elapsed: Duration,
    limit: Duration,
) -> bool {
    let in_time = elapsed <= limit;
    let ok = pass && in_time;
    let line = format!(
        "acceptance {id:>2} {name}: {} ({detail}; {:.2}s of {}s){}\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs(),
        if in_time { "" } else { " over time budget" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    ok
}

fn opinion_grid() -> TimeGrid {
    TimeGrid::new(0.25, 1.0, 16).unwrap()
}

#[test]
fn c01_transport_matches_enumeration() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for instance in 0..200 {
        let n = rng.random_range(2..=7usize);
        let d = rng.random_range(1..=3usize);
        let psi = if instance % 2 == 0 {
            PsiSpec::identity()
        } else {
            PsiSpec::linear_quadratic()
        };
        let v = if (instance / 2) % 2 == 0 {
            LyapunovSpec::zero()
        } else {
            LyapunovSpec::quadratic()
        };
        let atoms = |rng: &mut ChaCha8Rng| {
            (0..n)
                .map(|_| {
                    let t: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-3.0..3.0)).collect();
                    DelayedState::from_tuple(d, &t).unwrap()
                })
                .collect::<Vec<_>>()
        };
        let xs = atoms(&mut rng);
        let ys = atoms(&mut rng);
        let brute = (0..n)
            .permutations(n)
            .map(|p| {
                p.iter()
                    .enumerate()
                    .map(|(i, &j)| transport_cost(&xs[i], &ys[j], &psi, &v))
                    .sum::<f64>()
                    / n as f64
            })
            .fold(f64::INFINITY, f64::min);
        let mu = EmpiricalMeasure::new(xs).unwrap();
        let nu = EmpiricalMeasure::new(ys).unwrap();
        let w = wasserstein_psi_v(&mu, &nu, &psi, &v).unwrap();
        worst = worst.max((w - brute).abs() / brute.abs().max(1.0));
    }
    let pass = worst <= 1e-12;
    assert!(report(
        1,
        "transport vs brute force",
        pass,
        &format!("200 instances, worst scaled gap {worst:.2e}"),
        start.elapsed(),
        Duration::from_secs(10)
    ));
}

#[test]
fn c02_pure_delay_oracle() {
    let start = Instant::now();
    let model = pure_delay().unwrap();
    let mut detail = Vec::new();
    let mut pass = true;
    for m in [100usize, 1000] {
        let grid = TimeGrid::new(1.0, 2.0, m).unwrap();
        let flow = initial_flow(&model, 1, &grid).unwrap();
        let path = solve_frozen(&model, &flow, &NoiseStream::new(0, 0, 1), &grid).unwrap();
        let h = grid.h();
        let x1 = path.at_step(m)[0];
        let x2 = path.terminal()[0];
        pass &= x1.abs() <= 5.0 * h && (x2 + 0.5).abs() <= 5.0 * h;
        detail.push(format!("h={h}: X(1)={x1:.3e} X(2)={x2:.6}"));
    }
    assert!(report(
        2,
        "pure delay oracle",
        pass,
        &detail.join(", "),
        start.elapsed(),
        Duration::from_secs(1)
    ));
}

#[test]
fn c03_strong_order() {
    let start = Instant::now();
    let model = delayed_ou(1.0, 0.5, 0.5, 0.5, 1.0).unwrap();
    let r = strong_error_sweep(&model, 3, 1000, 0.5, 1.0, &[16, 32, 64, 128, 256], 64).unwrap();
    let pass = r.order >= 0.9;
    let errors = r.errors.iter().map(|e| format!("{e:.2e}")).join(" ");
    assert!(report(
        3,
        "strong order",
        pass,
        &format!("order {:.3}, errors {errors}", r.order),
        start.elapsed(),
        Duration::from_secs(60)
    ));
}

#[test]
fn c04_contraction_and_convergence() {
    let start = Instant::now();
    let model = opinion_model(&OpinionParams::default()).unwrap();
    let config = PicardConfig {
        lambda: None,
        tol: 1e-3,
        max_iter: 20,
    };
    let r = picard_iterate(&model, 11, 256, &opinion_grid(), &config).unwrap();
    let c = r.calibration.clone().expect("at least two iterations");
    let pass =
        r.converged && r.iterations <= 20 && !c.warning && c.lambda.is_finite() && c.ratio <= 0.5;
    assert!(report(
        4,
        "contraction",
        pass,
        &format!(
            "lambda {:.3}, calibrated ratio {:.3e}, converged {} after {} iterations, final {:.2e}",
            c.lambda,
            c.ratio,
            r.converged,
            r.iterations,
            r.distances.last().unwrap()
        ),
        start.elapsed(),
        Duration::from_secs(120)
    ));
}

#[test]
fn c05_moment_bound() {
    let start = Instant::now();
    let model = opinion_model(&OpinionParams::default()).unwrap();
    let paths = simulate_particles(&model, 5, 1000, &opinion_grid()).unwrap();
    let m = moment_bound(&model, &paths).unwrap();
    let upper = m.observed + 1.645 * m.standard_error;
    let direct = moment_bound_formula(1.0, 1.0, 1.0, 1.0, 1);
    let pass = upper < m.bound
        && (direct - 4.0 * 4f64.exp()).abs() <= 1e-12 * direct
        && format!("{direct:.2}") == "218.39";
    assert!(report(
        5,
        "moment bound",
        pass,
        &format!(
            "sup mean V {:.4} (95% upper {:.4}) < bound {:.4e}; 4e^4 = {direct:.6}",
            m.observed, upper, m.bound
        ),
        start.elapsed(),
        Duration::from_secs(30)
    ));
}

#[test]
fn c06_radial_inequality() {
    let start = Instant::now();
    let model = opinion_model(&OpinionParams::default()).unwrap();
    let grid = opinion_grid();
    let n = 512;
    let mu = initial_flow(&model, n, &grid).unwrap();
    let nu = apply_h(&model, &mu, 17, n, &grid).unwrap();
    let r = radial_check(&model, &mu, &nu, 23, n, &grid).unwrap();
    // Z vanishes for the first step because both flows start from the same law
    let nontrivial = *r.lhs.last().unwrap() > 0.0;
    assert!(report(
        6,
        "radial inequality",
        r.holds && nontrivial,
        &format!(
            "{} grid times, worst (lhs - rhs)/SE {:.3}, E|Z(T)| {:.4} vs rhs {:.4}",
            r.times.len(),
            r.worst_score,
            r.lhs.last().unwrap(),
            r.rhs.last().unwrap()
        ),
        start.elapsed(),
        Duration::from_secs(60)
    ));
}

#[test]
fn c07_fixed_point_vs_particles() {
    let start = Instant::now();
    let model = opinion_model(&OpinionParams::default()).unwrap();
    let config = PicardConfig {
        lambda: Some(0.0),
        tol: 1e-3,
        max_iter: 20,
    };
    let rows =
        particle_count_sweep(&model, &opinion_grid(), &[64, 128, 256], 20, 100, &config).unwrap();
    let medians: Vec<f64> = rows.iter().map(|r| r.median).collect();
    let pass = medians.windows(2).all(|w| w[1] < w[0]);
    assert!(report(
        7,
        "fixed point vs particle system",
        pass,
        &format!(
            "median W1 over 20 seeds: N=64 {:.4}, N=128 {:.4}, N=256 {:.4}",
            medians[0], medians[1], medians[2]
        ),
        start.elapsed(),
        Duration::from_secs(300)
    ));
}

#[test]
fn c08_assumption_probes() {
    let start = Instant::now();
    let params = OpinionParams::unit_tent();
    let model = opinion_model(&params).unwrap();
    let grid = opinion_grid();
    let bank = NoiseBank::generate(29, 256, &grid, 1);
    let (_, flow) = simulate_particles_flow(&model, &bank, &grid).unwrap();
    let snaps: Vec<EmpiricalMeasure> = [0, 32, 64]
        .iter()
        .map(|&k| flow.at_step(k).clone())
        .collect();
    // nu = mu for one pair in three
    let measure_pairs = vec![
        (snaps[0].clone(), snaps[0].clone()),
        (snaps[1].clone(), snaps[2].clone()),
        (snaps[0].clone(), snaps[2].clone()),
    ];
    let points = uniform_states(31, 10_000, 1, 1, 5.0);
    let pairs = probe_pairs(37, 10_000, 1, 1, 5.0);
    let lyap = check_lyapunov(&model, &points, &snaps).unwrap();
    let lip = check_lipschitz(&model, &pairs, &measure_pairs).unwrap();

    let halved = model.clone().with_lipschitz(Some(2.0), Some(2.0));
    let lip_half = check_lipschitz(&halved, &pairs, &measure_pairs).unwrap();
    let reproduced = lip_half.witness.as_ref().is_some_and(|w| {
        let (mu, nu) = &measure_pairs[w.measure];
        let wd = wasserstein_psi_v(mu, nu, model.psi(), model.lyapunov()).unwrap();
        let t = lipschitz_terms(&halved, &w.x, w.y.as_ref().unwrap(), mu, nu, wd);
        t.lhs - (2.0 * t.state_term + 2.0 * t.measure_term) > 0.0
    });
    let pass = lyap.passed()
        && lyap.tested_constant == 8.5
        && lip.passed()
        && lip.tested_constant == 4.0
        && lip.tested_theta == Some(2.0)
        && lip_half.worst_violation > 0.0
        && reproduced;
    assert!(report(
        8,
        "assumption probes",
        pass,
        &format!(
            "zeta 8.5 (estimated {:.3}), K 4 theta 2 (estimated K {:.3}), K=2 violation {:.3e} witness reproduced {}",
            lyap.estimated_constant, lip.estimated_constant, lip_half.worst_violation, reproduced
        ),
        start.elapsed(),
        Duration::from_secs(30)
    ));
}

#[test]
fn c09_gn_family() {
    let start = Instant::now();
    let tol = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pass = true;
    let mut worst_gap = Vec::new();
    for n in 1..=6u32 {
        let a_prev = gn_threshold(n - 1);
        let a_n = gn_threshold(n);
        let mut rs: Vec<f64> = (0..=20_000).map(|j| -10.0 + j as f64 * 1e-3).collect();
        rs.extend((0..20_000).map(|_| rng.random_range(-10.0..10.0)));
        // log-spaced points inside the support, where g'' lives
        rs.extend((0..=2000).map(|j| a_n * (a_prev / a_n).powf(j as f64 / 2000.0)));
        let mut gap = 0.0f64;
        for &r in &rs {
            let (g, dg, d2g) = gn_eval(n, r);
            let (gm, dgm, d2gm) = gn_eval(n, -r);
            pass &= dg.abs() <= 1.0 + tol;
            pass &= (g - gm).abs() <= tol && (dg + dgm).abs() <= tol && (d2g - d2gm).abs() <= tol;
            gap = gap.max((g - r.abs()).abs());
            if d2g > 0.0 {
                pass &= d2g <= 2.0 / (n as f64 * r.abs()) + tol;
            }
            if n > 1 {
                pass &= gn_eval(n - 1, r).0 <= g + tol;
            }
        }
        pass &= gap <= a_prev + tol;
        worst_gap.push(format!("n={n}: {gap:.4} <= {a_prev:.4}"));
    }
    assert!(report(
        9,
        "g_n family",
        pass,
        &format!("sup |g_n - |r||: {}", worst_gap.join(", ")),
        start.elapsed(),
        Duration::from_secs(1)
    ));
}

fn run_cli(args: &[&str], threads: &str, out: &Path) -> (i32, Vec<u8>) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mvsdde"));
    cmd.args(args).arg("--threads").arg(threads);
    if !args.contains(&"transport") {
        cmd.arg("--out").arg(out);
    }
    let o = cmd.output().expect("binary runs");
    (o.status.code().unwrap_or(-1), o.stdout)
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map(|rd| {
            rd.map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    std::fs::read(e.path()).unwrap(),
                )
            })
            .collect()
        })
        .unwrap_or_default();
    files.sort();
    files
}

#[test]
fn c10_cli_thread_determinism() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("opinion.json");
    std::fs::write(
        &cfg,
        r#"{
  "grid": { "tau": 0.25, "horizon": 1.0, "steps_per_delay": 8 },
  "model": { "name": "opinion" },
  "run": { "particles": 64, "measure_times": [0.5, 1.0] },
  "fixpoint": { "lambda": "auto", "tol": 1e-3, "max_iter": 10 },
  "verify": { "probes": 2000, "box": 5.0 },
  "convergence": { "kind": "particles", "levels": [16, 32], "seeds": 3 }
}"#,
    )
    .unwrap();
    let ou = tmp.path().join("ou.json");
    std::fs::write(
        &ou,
        r#"{
  "grid": { "tau": 0.5, "horizon": 1.0, "steps_per_delay": 4 },
  "model": { "name": "delayed_ou" },
  "convergence": { "kind": "step", "levels": [4, 8, 16], "paths": 200, "reference_factor": 8 }
}"#,
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let ou = ou.to_str().unwrap();
    let measure = tmp.path().join("sim_1/measure_t1.csv");
    let measure_half = tmp.path().join("sim_1/measure_t0.5.csv");
    let commands: Vec<(&str, Vec<String>)> = vec![
        (
            "sim",
            vec![
                "simulate".into(),
                "--config".into(),
                cfg.into(),
                "--seed".into(),
                "5".into(),
            ],
        ),
        (
            "fix",
            vec![
                "fixpoint".into(),
                "--config".into(),
                cfg.into(),
                "--seed".into(),
                "5".into(),
            ],
        ),
        (
            "ver",
            vec![
                "verify".into(),
                "--config".into(),
                cfg.into(),
                "--seed".into(),
                "5".into(),
            ],
        ),
        (
            "cps",
            vec![
                "convergence".into(),
                "--config".into(),
                cfg.into(),
                "--seed".into(),
                "5".into(),
            ],
        ),
        (
            "cst",
            vec![
                "convergence".into(),
                "--config".into(),
                ou.into(),
                "--seed".into(),
                "5".into(),
            ],
        ),
    ];
    let mut pass = true;
    let mut checked = Vec::new();
    for (tag, args) in &commands {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let d1 = tmp.path().join(format!("{tag}_1"));
        let d8 = tmp.path().join(format!("{tag}_8"));
        let (c1, s1) = run_cli(&args, "1", &d1);
        let (c8, s8) = run_cli(&args, "8", &d8);
        let f1 = dir_contents(&d1);
        let same = c1 == c8 && s1 == s8 && f1 == dir_contents(&d8) && !f1.is_empty();
        pass &= same;
        checked.push(format!(
            "{} ({} files, exit {c1}) {}",
            args[0],
            f1.len(),
            if same { "same" } else { "DIFFER" }
        ));
    }
    let t_args = [
        "transport",
        measure.to_str().unwrap(),
        measure_half.to_str().unwrap(),
        "--psi",
        "linear-quadratic",
        "--v",
        "quadratic",
    ];
    let (c1, s1) = run_cli(&t_args, "1", tmp.path());
    let (c8, s8) = run_cli(&t_args, "8", tmp.path());
    let same = c1 == 0 && c1 == c8 && s1 == s8;
    pass &= same;
    checked.push(format!(
        "transport {}",
        if same { "same" } else { "DIFFER" }
    ));
    assert!(report(
        10,
        "CLI determinism across threads",
        pass,
        &checked.join(", "),
        start.elapsed(),
        Duration::from_secs(120)
    ));
}
