//! Euler-Maruyama integration of the delay equation with the law frozen to a
//! given measure flow.
//!
//! On `[j tau, (j+1) tau]` every delayed argument refers to already computed
//! values, so the explicit scheme marches through the intervals one step at a
//! time without ever reading ahead (method of steps).

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measure::{fmt_f64, EmpiricalMeasure, MeasureFlow};
use crate::model::{euclid_diff, lookup_into, Delay, DelayedState, ModelSpec};
use crate::stochastics::{Increments, NoiseBank, NoiseStream, TimeGrid};

/// One particle's trajectory on the grid over `[-tau, T]`, history included.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticlePath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
    particle_index: usize,
}

impl ParticlePath {
    pub fn from_values(
        grid: TimeGrid,
        dim: usize,
        values: Vec<f64>,
        particle_index: usize,
    ) -> Result<Self> {
        if values.len() != grid.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a grid of {} points in dimension {dim}",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self {
            grid,
            dim,
            values,
            particle_index,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particle_index(&self) -> usize {
        self.particle_index
    }

    /// Value at storage slot `idx` (slot 0 is `-tau`).
    pub fn slot(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Value at forward step `k`, i.e. at `t_k = k h`.
    pub fn at_step(&self, k: usize) -> &[f64] {
        self.slot(self.grid.slot_of_step(k))
    }

    pub fn terminal(&self) -> &[f64] {
        self.slot(self.grid.len() - 1)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `X(s)` with linear interpolation between grid points; the flag is `true`
    /// when `s` is a grid point.
    pub fn value_at(&self, s: f64) -> Result<(Vec<f64>, bool)> {
        let mut out = vec![0.0; self.dim];
        let exact = lookup_into(
            &self.values,
            self.grid.len(),
            &self.grid,
            self.dim,
            s,
            &mut out,
        )?;
        Ok((out, exact))
    }

    /// The delayed state `(X(t - tau_n(t)), ..., X(t))`.
    pub fn state_at(&self, t: f64, model: &ModelSpec) -> Result<DelayedState> {
        let d = self.dim;
        let mut state = DelayedState::zeros(d, model.n_delays());
        lookup_into(
            &self.values,
            self.grid.len(),
            &self.grid,
            d,
            t,
            state.lag_mut(0),
        )?;
        for (i, delay) in model.delays().iter().enumerate() {
            let s = t - delay.at(t);
            lookup_into(
                &self.values,
                self.grid.len(),
                &self.grid,
                d,
                s,
                state.lag_mut(i + 1),
            )?;
        }
        Ok(state)
    }
}

/// Writes paths as rows `particle, t, x_1 .. x_d`.
pub fn write_paths_csv<W: Write>(paths: &[ParticlePath], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = paths.first().map(|p| p.dim).unwrap_or(1);
    let mut header = vec!["particle".to_string(), "t".to_string()];
    header.extend((1..=d).map(|j| format!("x_{j}")));
    w.write_record(&header)?;
    for p in paths {
        for idx in 0..p.grid.len() {
            let mut row = vec![p.particle_index.to_string(), fmt_f64(p.grid.time_at(idx))];
            row.extend(p.slot(idx).iter().map(|v| fmt_f64(*v)));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Per-grid integration context: resolves where each delayed component is read
/// from and performs single Euler-Maruyama steps.
pub(crate) struct Stepper<'a> {
    model: &'a ModelSpec,
    grid: &'a TimeGrid,
    /// Slot offset for constant, grid-aligned delays.
    aligned: Vec<Option<usize>>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(model: &'a ModelSpec, grid: &'a TimeGrid) -> Result<Self> {
        model.check_grid(grid)?;
        let aligned = model
            .delays()
            .iter()
            .map(|d| match d {
                Delay::Constant(v) => {
                    let pos = v / grid.h();
                    let r = pos.round();
                    ((pos - r).abs() <= 1e-9 && r >= 1.0).then_some(r as usize)
                }
                Delay::Varying(_) => None,
            })
            .collect();
        Ok(Self {
            model,
            grid,
            aligned,
        })
    }

    /// Fresh value buffer with the initial segment written into the history slots.
    pub(crate) fn history(&self, particle: usize) -> Result<Vec<f64>> {
        let d = self.model.dim();
        let mut values = vec![0.0; self.grid.len() * d];
        for idx in 0..self.grid.n_history() {
            let v = self.model.initial().eval(particle, self.grid.time_at(idx));
            if v.len() != d {
                return Err(Error::ShapeMismatch(format!(
                    "initial segment returned {} components, model dimension is {d}",
                    v.len()
                )));
            }
            values[idx * d..(idx + 1) * d].copy_from_slice(&v);
        }
        Ok(values)
    }

    /// Writes the delayed state at step `k` into `state`; slots up to `k + m`
    /// must be filled.
    pub(crate) fn assemble(
        &self,
        values: &[f64],
        k: usize,
        state: &mut DelayedState,
    ) -> Result<()> {
        let d = self.model.dim();
        let slot = self.grid.slot_of_step(k);
        state
            .lag_mut(0)
            .copy_from_slice(&values[slot * d..(slot + 1) * d]);
        let t = self.grid.step_time(k);
        for (i, delay) in self.model.delays().iter().enumerate() {
            let target = state.lag_mut(i + 1);
            match self.aligned[i] {
                Some(off) => {
                    let src = slot - off;
                    target.copy_from_slice(&values[src * d..(src + 1) * d]);
                }
                None => {
                    lookup_into(values, slot + 1, self.grid, d, t - delay.at(t), target)?;
                }
            }
        }
        Ok(())
    }

    /// Euler-Maruyama step from `k` to `k + 1` given the assembled state.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn advance(
        &self,
        values: &mut [f64],
        k: usize,
        state: &DelayedState,
        mu: &EmpiricalMeasure,
        dw: &[f64],
        particle: usize,
        scratch: &mut Scratch,
    ) -> Result<()> {
        let d = self.model.dim();
        let h = self.grid.h();
        self.model.drift_into(state, mu, &mut scratch.drift);
        self.model.diffusion_into(state, &mut scratch.sigma);
        let slot = self.grid.slot_of_step(k);
        let (past, future) = values.split_at_mut((slot + 1) * d);
        let current = &past[slot * d..];
        let next = &mut future[..d];
        for i in 0..d {
            let noise: f64 = scratch.sigma[i * d..(i + 1) * d]
                .iter()
                .zip(dw)
                .map(|(s, w)| s * w)
                .sum();
            next[i] = current[i] + scratch.drift[i] * h + noise;
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { particle, step: k });
        }
        Ok(())
    }
}

pub(crate) struct Scratch {
    drift: Vec<f64>,
    sigma: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(d: usize) -> Self {
        Self {
            drift: vec![0.0; d],
            sigma: vec![0.0; d * d],
        }
    }
}

fn check_flow(flow: &MeasureFlow, grid: &TimeGrid) -> Result<()> {
    if flow.grid() != grid {
        return Err(Error::ShapeMismatch(
            "frozen flow and integration grid differ".into(),
        ));
    }
    Ok(())
}

fn integrate(
    stepper: &Stepper<'_>,
    flow: &MeasureFlow,
    increments: &Increments,
    particle: usize,
) -> Result<ParticlePath> {
    let model = stepper.model;
    let grid = stepper.grid;
    let d = model.dim();
    if increments.len() != grid.steps() || increments.dim() != d {
        return Err(Error::ShapeMismatch(format!(
            "{} increments of dimension {} for {} steps in dimension {d}",
            increments.len(),
            increments.dim(),
            grid.steps()
        )));
    }
    let mut values = stepper.history(particle)?;
    let mut state = DelayedState::zeros(d, model.n_delays());
    let mut scratch = Scratch::new(d);
    for k in 0..grid.steps() {
        stepper.assemble(&values, k, &mut state)?;
        stepper.advance(
            &mut values,
            k,
            &state,
            flow.at_step(k),
            increments.step(k),
            particle,
            &mut scratch,
        )?;
    }
    ParticlePath::from_values(*grid, d, values, particle)
}

/// Solves the frozen-flow equation for one particle driven by `noise`.
pub fn solve_frozen(
    model: &ModelSpec,
    flow: &MeasureFlow,
    noise: &NoiseStream,
    grid: &TimeGrid,
) -> Result<ParticlePath> {
    check_flow(flow, grid)?;
    let stepper = Stepper::new(model, grid)?;
    let increments = noise.sample_increments(grid);
    integrate(&stepper, flow, &increments, noise.particle_index)
}

/// As [`solve_frozen`], with explicitly supplied Brownian increments.
pub fn solve_frozen_with_increments(
    model: &ModelSpec,
    flow: &MeasureFlow,
    increments: &Increments,
    particle: usize,
    grid: &TimeGrid,
) -> Result<ParticlePath> {
    check_flow(flow, grid)?;
    let stepper = Stepper::new(model, grid)?;
    integrate(&stepper, flow, increments, particle)
}

/// `n` independent frozen-flow solutions, particle `i` driven by stream `(seed, i)`.
pub fn solve_ensemble_frozen(
    model: &ModelSpec,
    flow: &MeasureFlow,
    seed: u64,
    n: usize,
    grid: &TimeGrid,
) -> Result<Vec<ParticlePath>> {
    let bank = NoiseBank::generate(seed, n, grid, model.dim());
    solve_ensemble_frozen_with(model, flow, &bank, grid)
}

/// Frozen-flow ensemble driven by stored increments.
pub fn solve_ensemble_frozen_with(
    model: &ModelSpec,
    flow: &MeasureFlow,
    bank: &NoiseBank,
    grid: &TimeGrid,
) -> Result<Vec<ParticlePath>> {
    check_flow(flow, grid)?;
    bank.check(bank.particles(), grid, model.dim())?;
    let stepper = Stepper::new(model, grid)?;
    (0..bank.particles())
        .into_par_iter()
        .map(|i| integrate(&stepper, flow, bank.particle(i), i))
        .collect()
}

/// Law at `t = 0` of the delayed state, one atom per particle, built from the
/// initial segments alone.
pub fn initial_measure(model: &ModelSpec, n: usize, grid: &TimeGrid) -> Result<EmpiricalMeasure> {
    let stepper = Stepper::new(model, grid)?;
    let atoms = (0..n)
        .into_par_iter()
        .map(|i| {
            let values = stepper.history(i)?;
            let mut state = DelayedState::zeros(model.dim(), model.n_delays());
            stepper.assemble(&values, 0, &mut state)?;
            Ok(state)
        })
        .collect::<Result<Vec<_>>>()?;
    EmpiricalMeasure::new(atoms)
}

/// Measure flow of an ensemble: the empirical law of the delayed state at every
/// grid time of `[0, T]`.
pub fn ensemble_flow(
    model: &ModelSpec,
    paths: &[ParticlePath],
    grid: &TimeGrid,
) -> Result<MeasureFlow> {
    let stepper = Stepper::new(model, grid)?;
    if let Some(p) = paths
        .iter()
        .find(|p| p.grid() != grid || p.dim() != model.dim())
    {
        return Err(Error::ShapeMismatch(format!(
            "path {} does not live on the flow grid",
            p.particle_index()
        )));
    }
    let measures = (0..=grid.steps())
        .into_par_iter()
        .map(|k| {
            let atoms = paths
                .iter()
                .map(|p| {
                    let mut state = DelayedState::zeros(model.dim(), model.n_delays());
                    stepper.assemble(p.values(), k, &mut state)?;
                    Ok(state)
                })
                .collect::<Result<Vec<_>>>()?;
            EmpiricalMeasure::new(atoms)
        })
        .collect::<Result<Vec<_>>>()?;
    MeasureFlow::new(*grid, measures)
}

/// Ensemble average of `sup_{u in [-tau, 0]} V(xi(u))` over the grid points of
/// the history window, for particles `0..n`.
pub fn mean_history_sup_v(model: &ModelSpec, n: usize, grid: &TimeGrid) -> Result<f64> {
    let stepper = Stepper::new(model, grid)?;
    let d = model.dim();
    let sups = (0..n)
        .into_par_iter()
        .map(|i| {
            let values = stepper.history(i)?;
            Ok(values[..grid.n_history() * d]
                .chunks(d)
                .map(|x| model.lyapunov().value(x))
                .fold(f64::NEG_INFINITY, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(sups.iter().sum::<f64>() / n as f64)
}

/// Strong error of the scheme at several step sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct StrongErrorReport {
    pub steps_per_delay: Vec<usize>,
    pub h: Vec<f64>,
    /// `E|X_h(T) - X_ref(T)|` over the paths.
    pub errors: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Slope of the least-squares fit of `log2 error` against `log2 h`.
    pub order: f64,
    pub reference_steps_per_delay: usize,
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Terminal-value strong error against a reference solution on a grid
/// `reference_factor` times finer than the finest level, all driven by the same
/// Brownian paths (coarse increments are block sums of the fine ones).
///
/// The law is frozen to the initial empirical law of `paths` particles, so for
/// measure-dependent models this measures the frozen-flow scheme.
pub fn strong_error_sweep(
    model: &ModelSpec,
    seed: u64,
    paths: usize,
    tau: f64,
    horizon: f64,
    levels: &[usize],
    reference_factor: usize,
) -> Result<StrongErrorReport> {
    if levels.len() < 2 || paths == 0 || reference_factor == 0 {
        return Err(Error::InvalidArgument(
            "need at least two levels, one path and a positive reference factor".into(),
        ));
    }
    let finest = *levels.iter().max().expect("non-empty");
    let m_ref = finest * reference_factor;
    if levels.iter().any(|m| !m_ref.is_multiple_of(*m)) {
        return Err(Error::InvalidArgument(format!(
            "reference resolution {m_ref} is not a multiple of every level {levels:?}"
        )));
    }
    let ref_grid = TimeGrid::new(tau, horizon, m_ref)?;
    let grids = levels
        .iter()
        .map(|&m| TimeGrid::new(tau, horizon, m))
        .collect::<Result<Vec<_>>>()?;
    let mu0 = initial_measure(model, paths, &ref_grid)?;
    let ref_flow = MeasureFlow::constant(ref_grid, mu0.clone());
    let flows: Vec<MeasureFlow> = grids
        .iter()
        .map(|g| MeasureFlow::constant(*g, mu0.clone()))
        .collect();
    let ref_stepper = Stepper::new(model, &ref_grid)?;
    let steppers = grids
        .iter()
        .map(|g| Stepper::new(model, g))
        .collect::<Result<Vec<_>>>()?;

    let per_path = (0..paths)
        .into_par_iter()
        .map(|i| {
            let fine = NoiseStream::new(seed, i, model.dim()).sample_increments(&ref_grid);
            let reference = integrate(&ref_stepper, &ref_flow, &fine, i)?;
            levels
                .iter()
                .zip(&steppers)
                .zip(&flows)
                .map(|((&m, stepper), flow)| {
                    let coarse = fine.coarsen(m_ref / m)?;
                    let path = integrate(stepper, flow, &coarse, i)?;
                    Ok(euclid_diff(path.terminal(), reference.terminal()))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let nf = paths as f64;
    let mut errors = Vec::new();
    let mut standard_errors = Vec::new();
    for j in 0..levels.len() {
        let mean = per_path.iter().map(|e| e[j]).sum::<f64>() / nf;
        let var = per_path.iter().map(|e| (e[j] - mean).powi(2)).sum::<f64>() / (nf - 1.0).max(1.0);
        errors.push(mean);
        standard_errors.push((var / nf).sqrt());
    }
    let h: Vec<f64> = grids.iter().map(|g| g.h()).collect();
    let lx: Vec<f64> = h.iter().map(|v| v.log2()).collect();
    let ly: Vec<f64> = errors.iter().map(|v| v.log2()).collect();
    Ok(StrongErrorReport {
        steps_per_delay: levels.to_vec(),
        h,
        errors,
        standard_errors,
        order: fit_slope(&lx, &ly),
        reference_steps_per_delay: m_ref,
    })
}
