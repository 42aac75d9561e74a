//! Command-line front end of the `mvsdde` binary.
//!
//! Exit codes: 0 success, 1 a declared constant failed verification, 2 usage or
//! configuration error, 3 numerical failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{Config, SweepKind};
use crate::diagnostics::{
    check_lipschitz, check_lyapunov, gaussian_states, moment_bound, probe_pairs, radial_check,
    uniform_states, ProbeReport, Witness,
};
use crate::error::{Error, Result};
use crate::fixedpoint::{apply_h_with, initial_flow, picard_iterate};
use crate::measure::{empirical_from_ensemble, fmt_f64, wasserstein_psi_v, EmpiricalMeasure};
use crate::model::{DelayedState, LyapunovSpec, PsiSpec};
use crate::models::opinion_constants;
use crate::particle::{particle_count_sweep, simulate_particles, simulate_particles_flow};
use crate::solver::{strong_error_sweep, write_paths_csv};
use crate::stochastics::{NoiseBank, DEFAULT_SEED};

#[derive(Debug, Parser)]
#[command(
    name = "mvsdde",
    version,
    about = "Simulate and verify McKean-Vlasov stochastic delay equations"
)]
pub struct Cli {
    /// Worker threads (output does not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the interacting particle system and write paths and measures.
    Simulate(RunArgs),
    /// Picard iteration of the law map to its fixed point.
    Fixpoint(RunArgs),
    /// Probe the Lyapunov and Lipschitz hypotheses, the moment bound and the radial inequality.
    Verify(RunArgs),
    /// Weighted transport distance between two measure CSV files.
    Transport(TransportArgs),
    /// Error tables over step sizes or particle counts.
    Convergence(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PsiName {
    Identity,
    LinearQuadratic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VName {
    Zero,
    Quadratic,
}

#[derive(Debug, Args)]
pub struct TransportArgs {
    pub file_a: PathBuf,
    pub file_b: PathBuf,
    #[arg(long, value_enum, default_value = "identity")]
    pub psi: PsiName,
    #[arg(long, value_enum, default_value = "zero")]
    pub v: VName,
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 2;
        }
        // a second build fails only when a pool already exists (tests); keep it
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fixpoint(a) => cmd_fixpoint(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Transport(a) => cmd_transport(a),
        Command::Convergence(a) => cmd_convergence(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_text(dir: &Path, name: &str, lines: &[String]) -> Result<()> {
    let path = dir.join(name);
    let mut w = create(dir, name)?;
    for line in lines {
        writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_fields(dir: &Path, name: &str, rows: &[(&str, String)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, name)?);
    w.write_record(["field", "value"])?;
    for (k, v) in rows {
        w.write_record([*k, v.as_str()])?;
    }
    w.flush().map_err(|e| Error::io(dir.join(name), e))
}

fn time_label(t: f64) -> String {
    format!("{t}")
}

fn load(args: &RunArgs) -> Result<Config> {
    Config::load(&args.config)
}

fn print_lines(lines: &[String]) {
    for l in lines {
        println!("{l}");
    }
}

fn cmd_simulate(args: &RunArgs) -> Result<i32> {
    let cfg = load(args)?;
    let grid = cfg.grid()?;
    let model = cfg.model()?;
    let n = cfg.run.particles;
    if n == 0 {
        return Err(Error::Config("run.particles must be at least 1".into()));
    }
    let paths = simulate_particles(&model, args.seed, n, &grid)?;
    write_paths_csv(&paths, create(&args.out, "paths.csv")?)?;
    for t in cfg.measure_times() {
        let mu = empirical_from_ensemble(&paths, t, &model)?;
        mu.write_csv(create(
            &args.out,
            &format!("measure_t{}.csv", time_label(t)),
        )?)?;
    }
    let mut summary = vec![
        format!("model={}", model.name()),
        format!("particles={n}"),
        format!("seed={}", args.seed),
        format!("h={}", fmt_f64(grid.h())),
    ];
    if model.zeta().is_some() {
        let m = moment_bound(&model, &paths)?;
        write_fields(
            &args.out,
            "moment.csv",
            &[
                ("observed", fmt_f64(m.observed)),
                ("standard_error", fmt_f64(m.standard_error)),
                ("bound", fmt_f64(m.bound)),
                ("ev0", fmt_f64(m.ev0)),
                ("xi_v", fmt_f64(m.xi_v)),
                ("zeta", fmt_f64(m.zeta)),
            ],
        )?;
        summary.push(format!(
            "moment observed={} bound={} holds={}",
            fmt_f64(m.observed),
            fmt_f64(m.bound),
            m.observed <= m.bound
        ));
    }
    write_text(&args.out, "summary.txt", &summary)?;
    print_lines(&summary);
    Ok(0)
}

fn cmd_fixpoint(args: &RunArgs) -> Result<i32> {
    let cfg = load(args)?;
    let picard = cfg.fixpoint.picard()?;
    let grid = cfg.grid()?;
    let model = cfg.model()?;
    let report = picard_iterate(&model, args.seed, cfg.run.particles, &grid, &picard)?;
    report.write_csv(create(&args.out, "picard.csv")?)?;
    for t in cfg.measure_times() {
        if !(0.0..=grid.horizon() * (1.0 + 1e-12)).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: grid.horizon(),
            });
        }
        report.final_flow.at_time(t).write_csv(create(
            &args.out,
            &format!("final_flow_t{}.csv", time_label(t)),
        )?)?;
    }
    let mut summary = vec![report.summary()];
    if let Some(c) = &report.calibration {
        summary.push(format!(
            "calibration lambda={} ratio={} warning={} exact_fixed_point={}",
            fmt_f64(c.lambda),
            fmt_f64(c.ratio),
            c.warning,
            c.exact_fixed_point
        ));
    }
    summary.push(format!(
        "growth_scale={} growth_sup={}",
        fmt_f64(report.growth_scale),
        fmt_f64(report.growth.iter().copied().fold(0.0, f64::max))
    ));
    write_text(&args.out, "summary.txt", &summary)?;
    print_lines(&summary);
    Ok(0)
}

fn tuple_text(x: &DelayedState) -> String {
    x.to_tuple()
        .iter()
        .map(|v| fmt_f64(*v))
        .collect::<Vec<_>>()
        .join(";")
}

fn witness_text(w: &Witness) -> String {
    let mut s = format!(
        "sample={} measure={} x=({})",
        w.sample,
        w.measure,
        tuple_text(&w.x)
    );
    if let Some(y) = &w.y {
        s.push_str(&format!(" y=({})", tuple_text(y)));
    }
    s.push_str(&format!(" lhs={} rhs={}", fmt_f64(w.lhs), fmt_f64(w.rhs)));
    s
}

fn report_rows(r: &ProbeReport) -> Vec<(&'static str, String)> {
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let mut rows = vec![
        ("samples", r.samples.to_string()),
        ("estimated_constant", fmt_f64(r.estimated_constant)),
        ("estimated_theta", opt(r.estimated_theta)),
        ("tested_constant", fmt_f64(r.tested_constant)),
        ("tested_theta", opt(r.tested_theta)),
        ("worst_violation", fmt_f64(r.worst_violation)),
        ("inconclusive", r.inconclusive.to_string()),
    ];
    if let Some(w) = &r.witness {
        rows.push(("witness_sample", w.sample.to_string()));
        rows.push(("witness_measure", w.measure.to_string()));
        rows.push(("witness_x", tuple_text(&w.x)));
        rows.push((
            "witness_y",
            w.y.as_ref().map(tuple_text).unwrap_or_default(),
        ));
        rows.push(("witness_lhs", fmt_f64(w.lhs)));
        rows.push(("witness_rhs", fmt_f64(w.rhs)));
    }
    rows
}

fn violated(r: &ProbeReport) -> bool {
    let scale = r.witness.as_ref().map(|w| w.rhs.abs()).unwrap_or(0.0);
    r.worst_violation > 1e-9 * (1.0 + scale)
}

fn cmd_verify(args: &RunArgs) -> Result<i32> {
    let cfg = load(args)?;
    let grid = cfg.grid()?;
    let vc = &cfg.verify;
    let mut model = cfg.model()?;
    if !vc.declare_constants {
        model = model.without_constants();
    }
    if vc.k_override.is_some() || vc.theta_override.is_some() {
        let k = vc.k_override.or(model.lipschitz());
        let theta = vc.theta_override.or(model.measure_lipschitz());
        model = model.with_lipschitz(k, theta);
    }
    if vc.zeta_override.is_some() {
        model = model.with_zeta(vc.zeta_override);
    }
    let n = cfg.run.particles;
    if n < 2 || vc.probes == 0 {
        return Err(Error::Config(
            "verify needs run.particles >= 2 and verify.probes >= 1".into(),
        ));
    }
    let (d, nd) = (model.dim(), model.n_delays());
    let bank = NoiseBank::generate(args.seed, n, &grid, d);
    let (paths, flow) = simulate_particles_flow(&model, &bank, &grid)?;
    let steps = grid.steps();
    let snapshots: Vec<EmpiricalMeasure> = [0, steps / 2, steps]
        .iter()
        .map(|&k| flow.at_step(k).clone())
        .collect();
    let measure_pairs = vec![
        (snapshots[0].clone(), snapshots[0].clone()),
        (snapshots[1].clone(), snapshots[2].clone()),
        (snapshots[0].clone(), snapshots[2].clone()),
    ];

    // probe points: ensemble states, the box, and Gaussian tails to twice the box
    let quarter = vc.probes / 4;
    let mut points: Vec<DelayedState> = snapshots
        .iter()
        .flat_map(|m| m.atoms().iter().cloned())
        .take(quarter)
        .collect();
    let n_uniform = vc.probes / 2;
    points.extend(uniform_states(
        args.seed.wrapping_add(1),
        n_uniform,
        d,
        nd,
        vc.half_width,
    ));
    let n_gauss = vc.probes.saturating_sub(points.len());
    points.extend(gaussian_states(
        args.seed.wrapping_add(2),
        n_gauss,
        d,
        nd,
        2.0 * vc.half_width,
    ));
    let pairs = probe_pairs(args.seed.wrapping_add(3), vc.probes, d, nd, vc.half_width);

    let lyap = check_lyapunov(&model, &points, &snapshots)?;
    let lip = check_lipschitz(&model, &pairs, &measure_pairs)?;
    write_fields(&args.out, "lyapunov.csv", &report_rows(&lyap))?;
    write_fields(&args.out, "lipschitz.csv", &report_rows(&lip))?;

    let mut failed = false;
    let mut summary = Vec::new();
    let lyap_fail = model.zeta().is_some() && violated(&lyap);
    failed |= lyap_fail;
    summary.push(format!(
        "lyapunov {} zeta_tested={} zeta_estimated={} worst_violation={}",
        if lyap_fail { "FAIL" } else { "PASS" },
        fmt_f64(lyap.tested_constant),
        fmt_f64(lyap.estimated_constant),
        fmt_f64(lyap.worst_violation)
    ));
    if cfg.model.name == "opinion" {
        let c = opinion_constants(&cfg.model.opinion);
        summary.push(format!(
            "opinion A={} K={} theta={} zeta={} zeta_squared_variant={}",
            fmt_f64(c.a),
            fmt_f64(c.k),
            fmt_f64(c.theta),
            fmt_f64(c.zeta),
            fmt_f64(c.zeta_squared)
        ));
    }
    if lyap_fail {
        if let Some(w) = &lyap.witness {
            summary.push(format!("lyapunov witness {}", witness_text(w)));
        }
    }
    let declared = model.lipschitz().is_some() && model.measure_lipschitz().is_some();
    let lip_fail = declared && !lip.inconclusive && violated(&lip);
    failed |= lip_fail;
    summary.push(format!(
        "lipschitz {} K_tested={} theta_tested={} K_estimated={} theta_estimated={} worst_violation={}{}",
        if lip_fail { "FAIL" } else { "PASS" },
        fmt_f64(lip.tested_constant),
        fmt_f64(lip.tested_theta.unwrap_or(0.0)),
        fmt_f64(lip.estimated_constant),
        fmt_f64(lip.estimated_theta.unwrap_or(0.0)),
        fmt_f64(lip.worst_violation),
        if lip.inconclusive { " inconclusive" } else { "" }
    ));
    if lip_fail {
        if let Some(w) = &lip.witness {
            summary.push(format!("lipschitz witness {}", witness_text(w)));
        }
    }

    if model.zeta().is_some() {
        let m = moment_bound(&model, &paths)?;
        let upper = m.observed + 1.645 * m.standard_error;
        let fail = upper > m.bound;
        failed |= fail;
        summary.push(format!(
            "moment {} observed={} upper95={} bound={}",
            if fail { "FAIL" } else { "PASS" },
            fmt_f64(m.observed),
            fmt_f64(upper),
            fmt_f64(m.bound)
        ));
    }
    if declared {
        let mu = initial_flow(&model, n, &grid)?;
        let nu = apply_h_with(&model, &mu, &bank, &grid)?;
        let r = radial_check(&model, &mu, &nu, args.seed, n, &grid)?;
        let mut w = csv::Writer::from_writer(create(&args.out, "radial.csv")?);
        w.write_record(["t", "lhs", "rhs", "standard_error"])?;
        for k in 0..r.times.len() {
            w.write_record([
                fmt_f64(r.times[k]),
                fmt_f64(r.lhs[k]),
                fmt_f64(r.rhs[k]),
                fmt_f64(r.standard_error[k]),
            ])?;
        }
        w.flush()
            .map_err(|e| Error::io(args.out.join("radial.csv"), e))?;
        failed |= !r.holds;
        summary.push(format!(
            "radial {} worst_score={}",
            if r.holds { "PASS" } else { "FAIL" },
            fmt_f64(r.worst_score)
        ));
    }
    summary.push(format!("overall {}", if failed { "FAIL" } else { "PASS" }));
    write_text(&args.out, "summary.txt", &summary)?;
    print_lines(&summary);
    Ok(if failed { 1 } else { 0 })
}

fn cmd_transport(args: &TransportArgs) -> Result<i32> {
    let a = EmpiricalMeasure::read_csv_file(&args.file_a)?;
    let b = EmpiricalMeasure::read_csv_file(&args.file_b)?;
    let psi = match args.psi {
        PsiName::Identity => PsiSpec::identity(),
        PsiName::LinearQuadratic => PsiSpec::linear_quadratic(),
    };
    let v = match args.v {
        VName::Zero => LyapunovSpec::zero(),
        VName::Quadratic => LyapunovSpec::quadratic(),
    };
    let d = wasserstein_psi_v(&a, &b, &psi, &v)?;
    println!("{d:.11e}");
    Ok(0)
}

fn cmd_convergence(args: &RunArgs) -> Result<i32> {
    let cfg = load(args)?;
    let model = cfg.model()?;
    let cc = &cfg.convergence;
    let levels = cc.levels();
    let mut summary = Vec::new();
    match cc.kind {
        SweepKind::Step => {
            let r = strong_error_sweep(
                &model,
                args.seed,
                cc.paths,
                cfg.grid.tau,
                cfg.grid.horizon,
                &levels,
                cc.reference_factor,
            )?;
            let mut w = csv::Writer::from_writer(create(&args.out, "convergence.csv")?);
            w.write_record(["steps_per_delay", "h", "error", "standard_error"])?;
            for j in 0..levels.len() {
                w.write_record([
                    r.steps_per_delay[j].to_string(),
                    fmt_f64(r.h[j]),
                    fmt_f64(r.errors[j]),
                    fmt_f64(r.standard_errors[j]),
                ])?;
            }
            w.flush()
                .map_err(|e| Error::io(args.out.join("convergence.csv"), e))?;
            summary.push(format!(
                "strong_order={} reference_steps_per_delay={} paths={}",
                fmt_f64(r.order),
                r.reference_steps_per_delay,
                cc.paths
            ));
        }
        SweepKind::Particles => {
            let grid = cfg.grid()?;
            let picard = cfg.fixpoint.picard()?;
            let rows = particle_count_sweep(&model, &grid, &levels, cc.seeds, args.seed, &picard)?;
            let mut w = csv::Writer::from_writer(create(&args.out, "convergence.csv")?);
            w.write_record(["particles", "seed_index", "distance"])?;
            for row in &rows {
                for (s, d) in row.distances.iter().enumerate() {
                    w.write_record([row.particles.to_string(), s.to_string(), fmt_f64(*d)])?;
                }
            }
            w.flush()
                .map_err(|e| Error::io(args.out.join("convergence.csv"), e))?;
            for row in &rows {
                summary.push(format!(
                    "particles={} median_w1={}",
                    row.particles,
                    fmt_f64(row.median)
                ));
            }
            let decreasing = rows.windows(2).all(|p| p[1].median < p[0].median);
            summary.push(format!("median_decreasing={decreasing}"));
        }
    }
    write_text(&args.out, "summary.txt", &summary)?;
    print_lines(&summary);
    Ok(0)
}
