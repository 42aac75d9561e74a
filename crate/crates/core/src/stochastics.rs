//! Time grids and reproducible Brownian increments.
//!
//! Every particle owns an independent ChaCha stream selected by its index, so the
//! increments of particle `i` depend only on `(seed, i, grid)` and never on the order
//! in which particles are simulated or on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Seed used when none is given on the command line.
pub const DEFAULT_SEED: u64 = 0x6d76_7364_6465_2024;

const COMMENSURATE_TOL: f64 = 1e-9;

/// Uniform grid `t_k = k h` for `k = -m ..= K`, with `h = tau / m` and `K h = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    tau: f64,
    horizon: f64,
    h: f64,
    steps_per_delay: usize,
    steps: usize,
}

impl TimeGrid {
    pub fn new(tau: f64, horizon: f64, steps_per_delay: usize) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "tau must be positive, got {tau}"
            )));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps_per_delay == 0 {
            return Err(Error::InvalidGrid(
                "steps per delay must be at least 1".into(),
            ));
        }
        let h = tau / steps_per_delay as f64;
        let ratio = horizon / h;
        let steps = ratio.round();
        if (ratio - steps).abs() > COMMENSURATE_TOL || steps < 1.0 {
            return Err(Error::InvalidGrid(format!(
                "horizon {horizon} is not an integer multiple of the step {h} \
                 (tau {tau} / {steps_per_delay}); T/h = {ratio}"
            )));
        }
        Ok(Self {
            tau,
            horizon,
            h,
            steps_per_delay,
            steps: steps as usize,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of steps per delay interval, `m`.
    pub fn steps_per_delay(&self) -> usize {
        self.steps_per_delay
    }

    /// Number of forward steps `K` covering `[0, T]`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Grid points in the history window `[-tau, 0]`.
    pub fn n_history(&self) -> usize {
        self.steps_per_delay + 1
    }

    /// Total number of grid points on `[-tau, T]`.
    pub fn len(&self) -> usize {
        self.steps_per_delay + self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Time of storage slot `idx`, where slot 0 is `-tau` and slot `m` is `0`.
    pub fn time_at(&self, idx: usize) -> f64 {
        (idx as f64 - self.steps_per_delay as f64) * self.h
    }

    /// Time of forward step `k`, i.e. `t_k = k h`.
    pub fn step_time(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    /// Storage slot of forward step `k`.
    pub fn slot_of_step(&self, k: usize) -> usize {
        k + self.steps_per_delay
    }

    /// All grid times from `-tau` to `T`.
    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time_at(i)).collect()
    }

    /// Grid refined by an integer factor (same tau and horizon).
    pub fn refine(&self, factor: usize) -> Result<Self> {
        Self::new(self.tau, self.horizon, self.steps_per_delay * factor)
    }

    /// Nearest forward step to time `t`, if `t` lies on the grid.
    pub fn step_of_time(&self, t: f64) -> Option<usize> {
        let pos = t / self.h;
        let k = pos.round();
        if (pos - k).abs() <= COMMENSURATE_TOL && k >= 0.0 && k as usize <= self.steps {
            Some(k as usize)
        } else {
            None
        }
    }
}

/// Brownian increments for one particle: `K` consecutive `d`-vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Increments {
    dim: usize,
    data: Vec<f64>,
}

impl Increments {
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim));
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn step(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Sums consecutive blocks of `factor` increments, giving the Brownian
    /// increments of the same path on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.len().is_multiple_of(factor) {
            return Err(Error::InvalidArgument(format!(
                "cannot coarsen {} increments by a factor of {factor}",
                self.len()
            )));
        }
        let d = self.dim;
        let mut data = vec![0.0; self.data.len() / factor];
        for (k, out) in data.chunks_mut(d).enumerate() {
            for j in 0..factor {
                for (o, v) in out.iter_mut().zip(self.step(k * factor + j)) {
                    *o += v;
                }
            }
        }
        Ok(Self { dim: d, data })
    }
}

/// Descriptor of one particle's noise source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    pub seed: u64,
    pub particle_index: usize,
    pub dim: usize,
}

impl NoiseStream {
    pub fn new(seed: u64, particle_index: usize, dim: usize) -> Self {
        Self {
            seed,
            particle_index,
            dim,
        }
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.particle_index as u64);
        rng
    }

    /// `grid.steps()` increments, each distributed as `N(0, h I_d)`.
    pub fn sample_increments(&self, grid: &TimeGrid) -> Increments {
        self.sample(grid.steps(), grid.h())
    }

    pub fn sample(&self, steps: usize, h: f64) -> Increments {
        let mut rng = self.rng();
        let scale = h.sqrt();
        let data = (0..steps * self.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Increments {
            dim: self.dim,
            data,
        }
    }
}

/// Stored increments for a whole ensemble, shared when several solves must be
/// driven by the same Brownian motions.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBank {
    increments: Vec<Increments>,
}

impl NoiseBank {
    pub fn generate(seed: u64, particles: usize, grid: &TimeGrid, dim: usize) -> Self {
        let increments = (0..particles)
            .into_par_iter()
            .map(|i| NoiseStream::new(seed, i, dim).sample_increments(grid))
            .collect();
        Self { increments }
    }

    pub fn from_increments(increments: Vec<Increments>) -> Self {
        Self { increments }
    }

    pub fn particles(&self) -> usize {
        self.increments.len()
    }

    pub fn particle(&self, i: usize) -> &Increments {
        &self.increments[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Increments> {
        self.increments.iter()
    }

    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let increments = self
            .increments
            .iter()
            .map(|inc| inc.coarsen(factor))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { increments })
    }

    /// Checks that the bank covers `particles` paths of `grid` in dimension `dim`.
    pub fn check(&self, particles: usize, grid: &TimeGrid, dim: usize) -> Result<()> {
        if self.particles() != particles {
            return Err(Error::ShapeMismatch(format!(
                "noise bank holds {} particles, expected {particles}",
                self.particles()
            )));
        }
        if let Some(bad) = self
            .increments
            .iter()
            .find(|inc| inc.len() != grid.steps() || inc.dim() != dim)
        {
            return Err(Error::ShapeMismatch(format!(
                "noise bank has {} steps of dimension {}, grid needs {} of dimension {dim}",
                bad.len(),
                bad.dim(),
                grid.steps()
            )));
        }
        Ok(())
    }
}
