//! The law map `H(mu)_t = Law(X^mu(t))` and Picard iteration to its fixed point.
//!
//! All applications of `H` inside one iteration are driven by the same stored
//! Brownian increments, so successive iterates are synchronously coupled and
//! their distance carries no fresh Monte Carlo noise.

use crate::error::{Error, Result};
use crate::measure::{discounted_sup, flow_distance_profile, mu_of_v, MeasureFlow};
use crate::model::ModelSpec;
use crate::solver::{
    ensemble_flow, initial_measure, mean_history_sup_v, solve_ensemble_frozen_with,
};
use crate::stochastics::{NoiseBank, TimeGrid};

/// Flow that holds the empirical law at `t = 0` at every grid time.
pub fn initial_flow(model: &ModelSpec, n: usize, grid: &TimeGrid) -> Result<MeasureFlow> {
    Ok(MeasureFlow::constant(
        *grid,
        initial_measure(model, n, grid)?,
    ))
}

/// One application of `H` with the noise of streams `(seed, i)`.
pub fn apply_h(
    model: &ModelSpec,
    flow: &MeasureFlow,
    seed: u64,
    n: usize,
    grid: &TimeGrid,
) -> Result<MeasureFlow> {
    let bank = NoiseBank::generate(seed, n, grid, model.dim());
    apply_h_with(model, flow, &bank, grid)
}

pub fn apply_h_with(
    model: &ModelSpec,
    flow: &MeasureFlow,
    bank: &NoiseBank,
    grid: &TimeGrid,
) -> Result<MeasureFlow> {
    if flow.n_atoms() != bank.particles() {
        return Err(Error::UnequalAtoms {
            left: flow.n_atoms(),
            right: bank.particles(),
        });
    }
    let paths = solve_ensemble_frozen_with(model, flow, bank, grid)?;
    ensemble_flow(model, &paths, grid)
}

/// Outcome of the discount-rate search.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaCalibration {
    pub lambda: f64,
    /// Ratio of the second to the first discounted distance at `lambda`.
    pub ratio: f64,
    /// No candidate brought the ratio down to one half.
    pub warning: bool,
    /// The first distance profile vanishes: the iterates already coincide.
    pub exact_fixed_point: bool,
}

/// Candidate rates: 0, then `2^j / T` for `j = -3 ..= 20`.
pub fn lambda_candidates(grid: &TimeGrid) -> Vec<f64> {
    std::iter::once(0.0)
        .chain((-3..=20).map(|j| 2f64.powi(j) / grid.horizon()))
        .collect()
}

/// `ln max_k e^{-lambda t_k} profile[k]`, or `-inf` for an all-zero profile.
fn log_discounted_sup(profile: &[f64], grid: &TimeGrid, lambda: f64) -> f64 {
    profile
        .iter()
        .enumerate()
        .filter(|(_, d)| **d > 0.0)
        .map(|(k, d)| d.ln() - lambda * grid.step_time(k))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest candidate `lambda` for which the discounted distance of the second
/// profile is at most half that of the first.
///
/// `first` holds `W_{psi,V}(mu^{k+1}_t, mu^k_t)` and `second` holds
/// `W_{psi,V}(mu^{k+2}_t, mu^{k+1}_t)` on the grid times. When the ratio does not
/// depend on `lambda` (all mass at `t = 0`) and exceeds one half, the smallest
/// candidate is returned with the warning set, since discounting cannot help.
pub fn calibrate_lambda(first: &[f64], second: &[f64], grid: &TimeGrid) -> LambdaCalibration {
    let ratio_at = |lambda: f64| {
        let den = log_discounted_sup(first, grid, lambda);
        let num = log_discounted_sup(second, grid, lambda);
        if num == f64::NEG_INFINITY {
            0.0
        } else {
            (num - den).exp()
        }
    };
    if first.iter().all(|d| *d <= 0.0) {
        return LambdaCalibration {
            lambda: 0.0,
            ratio: 0.0,
            warning: false,
            exact_fixed_point: true,
        };
    }
    let candidates = lambda_candidates(grid);
    for &lambda in &candidates {
        let ratio = ratio_at(lambda);
        if ratio <= 0.5 {
            return LambdaCalibration {
                lambda,
                ratio,
                warning: false,
                exact_fixed_point: false,
            };
        }
    }
    let last = *candidates.last().expect("non-empty candidate list");
    let (r0, rl) = (ratio_at(0.0), ratio_at(last));
    let lambda = if (r0 - rl).abs() <= 1e-12 * r0.max(rl) {
        0.0
    } else {
        last
    };
    LambdaCalibration {
        lambda,
        ratio: ratio_at(lambda),
        warning: true,
        exact_fixed_point: false,
    }
}

/// Settings for [`picard_iterate`].
#[derive(Debug, Clone, PartialEq)]
pub struct PicardConfig {
    /// Fixed discount rate, or `None` to calibrate it from the first two
    /// distance profiles (iteration 1 is then tested at `lambda = 0`, which only
    /// overestimates the distance).
    pub lambda: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            tol: 1e-3,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PicardReport {
    /// Number of applications of `H`.
    pub iterations: usize,
    /// `W_{psi,V,lambda}(mu^{k+1}, mu^k)` for `k = 0 .. iterations`, at the final `lambda`.
    pub distances: Vec<f64>,
    /// `distances[k] / distances[k - 1]` where the denominator is positive.
    pub ratios: Vec<Option<f64>>,
    pub lambda: f64,
    pub calibration: Option<LambdaCalibration>,
    pub converged: bool,
    pub final_flow: MeasureFlow,
    /// Per-time undiscounted distance profiles behind `distances`.
    pub profiles: Vec<Vec<f64>>,
    /// `sup_t e^{-N t} mu^k_t(V)` for each iterate `mu^1, mu^2, ...`.
    pub growth: Vec<f64>,
    /// `1 + mu_0(V) + E ||xi||_V`.
    pub growth_scale: f64,
    /// Smallest integer `N >= 1` with `growth[k] <= N growth_scale` for every iterate.
    pub growth_n: u32,
}

impl PicardReport {
    /// Rows `iteration, distance, ratio`; the ratio column is empty where undefined.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        use crate::measure::fmt_f64;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "distance", "ratio"])?;
        for (k, d) in self.distances.iter().enumerate() {
            let ratio = self.ratios[k].map(fmt_f64).unwrap_or_default();
            w.write_record([(k + 1).to_string(), fmt_f64(*d), ratio])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!(
            "converged={} iterations={} lambda={:.6e} final_distance={:.6e} growth_N={}{}",
            self.converged,
            self.iterations,
            self.lambda,
            self.distances.last().copied().unwrap_or(0.0),
            self.growth_n,
            match &self.calibration {
                Some(c) if c.warning => " lambda_warning=true",
                _ => "",
            }
        )
    }
}

/// Picard iteration `mu^{k+1} = H(mu^k)` from the frozen initial law, with noise
/// streams `(seed, i)` shared by all iterations.
pub fn picard_iterate(
    model: &ModelSpec,
    seed: u64,
    n: usize,
    grid: &TimeGrid,
    config: &PicardConfig,
) -> Result<PicardReport> {
    let bank = NoiseBank::generate(seed, n, grid, model.dim());
    picard_iterate_with(model, &bank, grid, config)
}

pub fn picard_iterate_with(
    model: &ModelSpec,
    bank: &NoiseBank,
    grid: &TimeGrid,
    config: &PicardConfig,
) -> Result<PicardReport> {
    if config.tol.is_nan() || config.tol <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "tol must be positive, got {}",
            config.tol
        )));
    }
    if config.max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    if let Some(l) = config.lambda {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be >= 0, got {l}"
            )));
        }
    }
    let n = bank.particles();
    let psi = model.psi();
    let v = model.lyapunov();

    let mut current = initial_flow(model, n, grid)?;
    let growth_scale = 1.0 + mu_of_v(current.at_step(0), v) + mean_history_sup_v(model, n, grid)?;
    let mut lambda = config.lambda.unwrap_or(0.0);
    let mut calibration = None;
    let mut profiles: Vec<Vec<f64>> = Vec::new();
    let mut iterates = Vec::new();
    let mut converged = false;

    for iteration in 1..=config.max_iter {
        let next = apply_h_with(model, &current, bank, grid)?;
        profiles.push(flow_distance_profile(&next, &current, psi, v)?);
        if config.lambda.is_none() && iteration == 2 {
            let c = calibrate_lambda(&profiles[0], &profiles[1], grid);
            lambda = c.lambda;
            calibration = Some(c);
        }
        let distance = discounted_sup(profiles.last().expect("just pushed"), grid, lambda);
        current = next;
        iterates.push(growth_probe(&current, model));
        if distance < config.tol {
            converged = true;
            break;
        }
    }

    let distances: Vec<f64> = profiles
        .iter()
        .map(|p| discounted_sup(p, grid, lambda))
        .collect();
    let ratios = (0..distances.len())
        .map(|k| (k > 0 && distances[k - 1] > 0.0).then(|| distances[k] / distances[k - 1]))
        .collect();
    let growth_n = (1u32..)
        .find(|&big_n| {
            iterates
                .iter()
                .all(|g| g(big_n as f64) <= big_n as f64 * growth_scale)
        })
        .expect("weighted growth decreases while the bound increases in N");
    let growth = iterates.iter().map(|g| g(growth_n as f64)).collect();

    Ok(PicardReport {
        iterations: profiles.len(),
        distances,
        ratios,
        lambda,
        calibration,
        converged,
        final_flow: current,
        profiles,
        growth,
        growth_scale,
        growth_n,
    })
}

/// Stores `mu_t(V)` on the grid so the weighted supremum can be evaluated for
/// any `N` later.
fn growth_probe(flow: &MeasureFlow, model: &ModelSpec) -> impl Fn(f64) -> f64 {
    let grid = *flow.grid();
    let values: Vec<f64> = flow
        .measures()
        .map(|mu| mu_of_v(mu, model.lyapunov()))
        .collect();
    move |big_n| {
        values
            .iter()
            .enumerate()
            .map(|(k, m)| (-big_n * grid.step_time(k)).exp() * m)
            .fold(0.0, f64::max)
    }
}
