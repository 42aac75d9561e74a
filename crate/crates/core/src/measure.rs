//! Empirical measures on the delayed product space, the functional `mu(V)` and the
//! weighted transport distances between measures and between measure flows.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::assignment;
use crate::error::{Error, Result};
use crate::model::{norm_unchecked, DelayedState, LyapunovSpec, ModelSpec, PsiSpec};
use crate::solver::ParticlePath;
use crate::stochastics::TimeGrid;

/// Equal-weight atoms on the delayed product space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    atoms: Vec<DelayedState>,
}

impl EmpiricalMeasure {
    pub fn new(atoms: Vec<DelayedState>) -> Result<Self> {
        let first = atoms.first().ok_or_else(|| {
            Error::InvalidArgument("an empirical measure needs at least one atom".into())
        })?;
        if atoms.iter().any(|a| !a.same_shape(first)) {
            return Err(Error::ShapeMismatch("atoms of different shapes".into()));
        }
        Ok(Self { atoms })
    }

    pub fn dirac(atom: DelayedState) -> Self {
        Self { atoms: vec![atom] }
    }

    pub fn atoms(&self) -> &[DelayedState] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].dim()
    }

    pub fn n_delays(&self) -> usize {
        self.atoms[0].n_delays()
    }

    /// Atoms of the `lag`-th coordinate marginal.
    pub fn marginal(&self, lag: usize) -> impl Iterator<Item = &[f64]> + '_ {
        self.atoms.iter().map(move |a| a.lag(lag))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.atoms[0].same_shape(&other.atoms[0])
    }

    /// Writes one row per atom: particle index, then components oldest first.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let (n, d) = (self.n_delays(), self.dim());
        let mut header = vec!["particle".to_string()];
        for lag in (0..=n).rev() {
            for j in 1..=d {
                header.push(format!("lag{lag}_{j}"));
            }
        }
        w.write_record(&header)?;
        for (i, atom) in self.atoms.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(atom.to_tuple().iter().map(|v| fmt_f64(*v)));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads the format produced by [`EmpiricalMeasure::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let mut max_lag = 0usize;
        let mut max_coord = 0usize;
        for name in header.iter().skip(1) {
            let (lag, coord) = parse_column(name)
                .ok_or_else(|| Error::Config(format!("unexpected measure column '{name}'")))?;
            max_lag = max_lag.max(lag);
            max_coord = max_coord.max(coord);
        }
        let dim = max_coord;
        if dim == 0 || header.len() != 1 + dim * (max_lag + 1) {
            return Err(Error::Config(format!(
                "measure header has {} columns, inconsistent with {} lags of dimension {dim}",
                header.len(),
                max_lag + 1
            )));
        }
        let mut atoms = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let tuple = record
                .iter()
                .skip(1)
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("row {}: {e}", line + 2)))?;
            atoms.push(DelayedState::from_tuple(dim, &tuple)?);
        }
        Self::new(atoms)
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

fn parse_column(name: &str) -> Option<(usize, usize)> {
    let rest = name.trim().strip_prefix("lag")?;
    let (lag, coord) = rest.split_once('_')?;
    Some((lag.parse().ok()?, coord.parse().ok()?))
}

/// Floats in CSV output carry 17 significant digits.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Grid-indexed sequence of empirical measures approximating `t -> mu_t` on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFlow {
    grid: TimeGrid,
    measures: Vec<Arc<EmpiricalMeasure>>,
}

impl MeasureFlow {
    pub fn new(grid: TimeGrid, measures: Vec<EmpiricalMeasure>) -> Result<Self> {
        Self::from_shared(grid, measures.into_iter().map(Arc::new).collect())
    }

    pub fn from_shared(grid: TimeGrid, measures: Vec<Arc<EmpiricalMeasure>>) -> Result<Self> {
        if measures.len() != grid.steps() + 1 {
            return Err(Error::ShapeMismatch(format!(
                "flow has {} measures, grid has {} times in [0, T]",
                measures.len(),
                grid.steps() + 1
            )));
        }
        let first = &measures[0];
        if measures
            .iter()
            .any(|m| m.len() != first.len() || !m.same_shape(first))
        {
            return Err(Error::ShapeMismatch(
                "all measures of a flow must share atom count and shape".into(),
            ));
        }
        Ok(Self { grid, measures })
    }

    /// Flow that holds `mu` at every grid time.
    pub fn constant(grid: TimeGrid, mu: EmpiricalMeasure) -> Self {
        Self {
            measures: std::iter::repeat_n(Arc::new(mu), grid.steps() + 1).collect(),
            grid,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn measures(&self) -> impl ExactSizeIterator<Item = &EmpiricalMeasure> {
        self.measures.iter().map(|m| m.as_ref())
    }

    pub fn at_step(&self, k: usize) -> &EmpiricalMeasure {
        &self.measures[k]
    }

    /// Measure in force at time `t` (piecewise constant, continuous from the left
    /// grid point).
    pub fn at_time(&self, t: f64) -> &EmpiricalMeasure {
        let k = (t / self.grid.h() + 1e-9).floor().max(0.0) as usize;
        &self.measures[k.min(self.grid.steps())]
    }

    pub fn n_atoms(&self) -> usize {
        self.measures[0].len()
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::ShapeMismatch("flows live on different grids".into()));
        }
        if self.n_atoms() != other.n_atoms() {
            return Err(Error::UnequalAtoms {
                left: self.n_atoms(),
                right: other.n_atoms(),
            });
        }
        Ok(())
    }
}

/// `mu(V) = (1/N) sum_atoms sum_i V(x_{-i})`.
pub fn mu_of_v(mu: &EmpiricalMeasure, v: &LyapunovSpec) -> f64 {
    mu.atoms().iter().map(|a| v.total(a)).sum::<f64>() / mu.len() as f64
}

/// `psi(||x - y||) (1 + V(x) + V(y))` with `V` summed over all components.
pub fn transport_cost(x: &DelayedState, y: &DelayedState, psi: &PsiSpec, v: &LyapunovSpec) -> f64 {
    debug_assert!(x.same_shape(y));
    psi.eval(norm_unchecked(x, y)) * (1.0 + v.total(x) + v.total(y))
}

/// Optimal coupling between two equal-size empirical measures.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub distance: f64,
    /// Atom `i` of the first measure is sent to atom `matching[i]` of the second.
    pub matching: Vec<usize>,
}

pub fn optimal_plan(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    psi: &PsiSpec,
    v: &LyapunovSpec,
) -> Result<TransportPlan> {
    if mu.len() != nu.len() {
        return Err(Error::UnequalAtoms {
            left: mu.len(),
            right: nu.len(),
        });
    }
    if !mu.same_shape(nu) {
        return Err(Error::ShapeMismatch(
            "measures on different product spaces".into(),
        ));
    }
    let n = mu.len();
    if mu.atoms() == nu.atoms() {
        return Ok(TransportPlan {
            distance: 0.0,
            matching: (0..n).collect(),
        });
    }
    let vx: Vec<f64> = mu.atoms().iter().map(|a| v.total(a)).collect();
    let vy: Vec<f64> = nu.atoms().iter().map(|a| v.total(a)).collect();
    let mut cost = Vec::with_capacity(n * n);
    for (x, wx) in mu.atoms().iter().zip(&vx) {
        for (y, wy) in nu.atoms().iter().zip(&vy) {
            cost.push(psi.eval(norm_unchecked(x, y)) * (1.0 + wx + wy));
        }
    }
    let a = assignment::solve(n, &cost);
    Ok(TransportPlan {
        distance: a.cost / n as f64,
        matching: a.row_to_col,
    })
}

/// Weighted transport distance `W_{psi,V}` between equal-size empirical measures,
/// solved exactly as an assignment problem.
pub fn wasserstein_psi_v(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    psi: &PsiSpec,
    v: &LyapunovSpec,
) -> Result<f64> {
    optimal_plan(mu, nu, psi, v).map(|p| p.distance)
}

/// `W_{psi,V}(mu_{t_k}, nu_{t_k})` for every grid time `t_k`.
pub fn flow_distance_profile(
    mu: &MeasureFlow,
    nu: &MeasureFlow,
    psi: &PsiSpec,
    v: &LyapunovSpec,
) -> Result<Vec<f64>> {
    mu.check_compatible(nu)?;
    mu.measures
        .par_iter()
        .zip(nu.measures.par_iter())
        .map(|(a, b)| {
            if Arc::ptr_eq(a, b) {
                Ok(0.0)
            } else {
                wasserstein_psi_v(a, b, psi, v)
            }
        })
        .collect()
}

/// `max_k e^{-lambda t_k} profile[k]`.
pub fn discounted_sup(profile: &[f64], grid: &TimeGrid, lambda: f64) -> f64 {
    profile
        .iter()
        .enumerate()
        .map(|(k, d)| {
            if *d == 0.0 {
                0.0
            } else {
                (-lambda * grid.step_time(k)).exp() * d
            }
        })
        .fold(0.0, f64::max)
}

/// Discounted supremum distance `W_{psi,V,lambda}` between two flows.
pub fn flow_distance_lambda(
    mu: &MeasureFlow,
    nu: &MeasureFlow,
    lambda: f64,
    psi: &PsiSpec,
    v: &LyapunovSpec,
) -> Result<f64> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let profile = flow_distance_profile(mu, nu, psi, v)?;
    Ok(discounted_sup(&profile, mu.grid(), lambda))
}

/// Empirical law of `(X(t - tau_n(t)), ..., X(t))` over an ensemble of paths.
pub fn empirical_from_ensemble(
    paths: &[ParticlePath],
    t: f64,
    model: &ModelSpec,
) -> Result<EmpiricalMeasure> {
    let grid = paths
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty ensemble".into()))?
        .grid();
    let horizon = grid.horizon();
    if !(t >= -1e-12 && t <= horizon * (1.0 + 1e-12)) {
        return Err(Error::TimeOutOfRange { t, horizon });
    }
    let atoms = paths
        .par_iter()
        .map(|p| p.state_at(t, model))
        .collect::<Result<Vec<_>>>()?;
    EmpiricalMeasure::new(atoms)
}
