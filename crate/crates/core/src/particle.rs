//! Interacting particle system: every particle feels the empirical joint law of
//! the whole ensemble at the current step.
//!
//! Updates are synchronous. At step `k` the delayed states of all particles are
//! gathered into one measure, which is then shared read-only while every
//! particle takes its Euler-Maruyama step. The measure includes the particle
//! itself (no leave-one-out correction), which costs an `O(1/N)` bias.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::Result;
use crate::fixedpoint::{picard_iterate, PicardConfig};
use crate::measure::{wasserstein_psi_v, EmpiricalMeasure, MeasureFlow};
use crate::model::{DelayedState, LyapunovSpec, ModelSpec, PsiSpec};
use crate::solver::{ParticlePath, Scratch, Stepper};
use crate::stochastics::{NoiseBank, TimeGrid};

/// Paths of the `n`-particle system, particle `i` driven by stream `(seed, i)`.
pub fn simulate_particles(
    model: &ModelSpec,
    seed: u64,
    n: usize,
    grid: &TimeGrid,
) -> Result<Vec<ParticlePath>> {
    let bank = NoiseBank::generate(seed, n, grid, model.dim());
    simulate_particles_with_noise(model, &bank, grid)
}

pub fn simulate_particles_with_noise(
    model: &ModelSpec,
    bank: &NoiseBank,
    grid: &TimeGrid,
) -> Result<Vec<ParticlePath>> {
    run(model, bank, grid).map(|(paths, _)| paths)
}

/// Paths together with the empirical flow the particles generated along the way
/// (the measure at `T` is built from the terminal states).
pub fn simulate_particles_flow(
    model: &ModelSpec,
    bank: &NoiseBank,
    grid: &TimeGrid,
) -> Result<(Vec<ParticlePath>, MeasureFlow)> {
    run(model, bank, grid)
}

fn run(
    model: &ModelSpec,
    bank: &NoiseBank,
    grid: &TimeGrid,
) -> Result<(Vec<ParticlePath>, MeasureFlow)> {
    let n = bank.particles();
    let d = model.dim();
    bank.check(n, grid, d)?;
    let stepper = Stepper::new(model, grid)?;
    let mut values = (0..n)
        .into_par_iter()
        .map(|i| stepper.history(i))
        .collect::<Result<Vec<_>>>()?;

    let gather = |values: &[Vec<f64>], k: usize| -> Result<EmpiricalMeasure> {
        let atoms = values
            .par_iter()
            .map(|v| {
                let mut state = DelayedState::zeros(d, model.n_delays());
                stepper.assemble(v, k, &mut state)?;
                Ok(state)
            })
            .collect::<Result<Vec<_>>>()?;
        EmpiricalMeasure::new(atoms)
    };

    let mut measures = Vec::with_capacity(grid.steps() + 1);
    for k in 0..grid.steps() {
        let mu = Arc::new(gather(&values, k)?);
        values
            .par_iter_mut()
            .zip(mu.atoms().par_iter())
            .enumerate()
            .try_for_each(|(i, (v, state))| {
                let mut scratch = Scratch::new(d);
                stepper.advance(v, k, state, &mu, bank.particle(i).step(k), i, &mut scratch)
            })?;
        measures.push(mu);
    }
    measures.push(Arc::new(gather(&values, grid.steps())?));

    let paths = values
        .into_iter()
        .enumerate()
        .map(|(i, v)| ParticlePath::from_values(*grid, d, v, i))
        .collect::<Result<Vec<_>>>()?;
    Ok((paths, MeasureFlow::from_shared(*grid, measures)?))
}

/// Offset separating the particle-system seeds from the Picard seeds in
/// [`particle_count_sweep`], so the two ensembles use independent noise.
pub const PARTICLE_SEED_OFFSET: u64 = 0x7061_7274_6963_6c65;

/// Terminal-law distances between the Picard fixed point and the particle
/// system for one particle count.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSweepRow {
    pub particles: usize,
    /// One `W_1` distance per seed.
    pub distances: Vec<f64>,
    pub median: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// For each `n` in `counts` and each of `seeds` seeds, compares the terminal
/// joint law of the Picard fixed point (noise seed `base_seed + s`) with that of
/// the particle system (noise seed `base_seed + s + PARTICLE_SEED_OFFSET`) in
/// `W_1`, i.e. the transport distance with `psi(r) = r` and `V = 0`.
pub fn particle_count_sweep(
    model: &ModelSpec,
    grid: &TimeGrid,
    counts: &[usize],
    seeds: usize,
    base_seed: u64,
    picard: &PicardConfig,
) -> Result<Vec<ParticleSweepRow>> {
    let psi = PsiSpec::identity();
    let v = LyapunovSpec::zero();
    counts
        .iter()
        .map(|&n| {
            let distances = (0..seeds as u64)
                .map(|s| {
                    let seed = base_seed.wrapping_add(s);
                    let report = picard_iterate(model, seed, n, grid, picard)?;
                    let bank = NoiseBank::generate(
                        seed.wrapping_add(PARTICLE_SEED_OFFSET),
                        n,
                        grid,
                        model.dim(),
                    );
                    let (_, flow) = simulate_particles_flow(model, &bank, grid)?;
                    let k = grid.steps();
                    wasserstein_psi_v(report.final_flow.at_step(k), flow.at_step(k), &psi, &v)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(ParticleSweepRow {
                particles: n,
                median: median(&distances),
                distances,
            })
        })
        .collect()
}
