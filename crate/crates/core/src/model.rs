//! Problem data: delayed states, coefficients, Lyapunov weight, transport profile
//! `psi`, delays and initial segments.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::solver::ParticlePath;
use crate::stochastics::TimeGrid;

/// Joint point `(x_{-n}, ..., x_{-1}, x_0)` of delayed and current positions.
///
/// Storage is lag-major: lag 0 is the current position, lag `i` is the position
/// delayed by `tau_i`. The "tuple" constructors and accessors use the written
/// order, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedState {
    dim: usize,
    values: Vec<f64>,
}

impl DelayedState {
    pub fn zeros(dim: usize, n_delays: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; dim * (n_delays + 1)],
        }
    }

    /// Builds from lag-indexed components: `lags[0]` is `x_0`, `lags[i]` is `x_{-i}`.
    pub fn from_lags(lags: &[Vec<f64>]) -> Result<Self> {
        let dim = lags.first().map(Vec::len).unwrap_or(0);
        if dim == 0 || lags.iter().any(|c| c.len() != dim) {
            return Err(Error::ShapeMismatch(
                "delayed state components must be non-empty and share one dimension".into(),
            ));
        }
        Ok(Self {
            dim,
            values: lags.concat(),
        })
    }

    /// Builds from the written order `(x_{-n}, ..., x_0)`, flattened.
    pub fn from_tuple(dim: usize, tuple: &[f64]) -> Result<Self> {
        if dim == 0 || tuple.is_empty() || !tuple.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not split into components of dimension {dim}",
                tuple.len()
            )));
        }
        let values = tuple.chunks(dim).rev().flatten().copied().collect();
        Ok(Self { dim, values })
    }

    pub fn from_flat_lags(dim: usize, values: Vec<f64>) -> Self {
        assert!(dim > 0 && !values.is_empty() && values.len().is_multiple_of(dim));
        Self { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of delayed components `n`.
    pub fn n_delays(&self) -> usize {
        self.values.len() / self.dim - 1
    }

    pub fn n_components(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn lag(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn lag_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn current(&self) -> &[f64] {
        self.lag(0)
    }

    pub fn lags(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.dim)
    }

    pub fn as_flat_lags(&self) -> &[f64] {
        &self.values
    }

    /// Components in written order, oldest first, flattened.
    pub fn to_tuple(&self) -> Vec<f64> {
        self.values
            .chunks(self.dim)
            .rev()
            .flatten()
            .copied()
            .collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dim == other.dim && self.values.len() == other.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn euclid_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Averaged norm `(1/(n+1)) sum_i |x_{-i} - y_{-i}|`, without the shape check.
pub(crate) fn norm_unchecked(x: &DelayedState, y: &DelayedState) -> f64 {
    let total: f64 = x.lags().zip(y.lags()).map(|(a, b)| euclid_diff(a, b)).sum();
    total / x.n_components() as f64
}

/// Averaged L1 distance between two delayed states.
pub fn eval_norm(x: &DelayedState, y: &DelayedState) -> Result<f64> {
    if !x.same_shape(y) {
        return Err(Error::ShapeMismatch(format!(
            "states of shape ({}, {}) and ({}, {})",
            x.n_delays(),
            x.dim(),
            y.n_delays(),
            y.dim()
        )));
    }
    Ok(norm_unchecked(x, y))
}

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Lyapunov function `V` with its derivatives and growth constants.
#[derive(Clone)]
pub struct LyapunovSpec {
    value: ScalarFn,
    gradient: VectorFn,
    hessian: VectorFn,
    pub p: f64,
    pub c1: f64,
    pub c2: f64,
    /// Declared constant of the Lyapunov condition, when known.
    pub zeta: Option<f64>,
}

impl fmt::Debug for LyapunovSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LyapunovSpec")
            .field("p", &self.p)
            .field("c1", &self.c1)
            .field("c2", &self.c2)
            .field("zeta", &self.zeta)
            .finish_non_exhaustive()
    }
}

impl LyapunovSpec {
    /// `gradient` returns a `d`-vector, `hessian` a row-major `d x d` matrix.
    pub fn new(
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        hessian: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        p: f64,
        c1: f64,
        c2: f64,
    ) -> Self {
        Self {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian: Arc::new(hessian),
            p,
            c1,
            c2,
            zeta: None,
        }
    }

    /// Derivatives by central differences. Slow and approximate; meant for
    /// diagnostics when no analytic derivatives are at hand.
    pub fn finite_difference(
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        p: f64,
        c1: f64,
        c2: f64,
    ) -> Self {
        let value: ScalarFn = Arc::new(value);
        let (v1, v2) = (value.clone(), value.clone());
        Self {
            value,
            gradient: Arc::new(move |x| fd_gradient(&*v1, x)),
            hessian: Arc::new(move |x| fd_hessian(&*v2, x)),
            p,
            c1,
            c2,
            zeta: None,
        }
    }

    /// `V(x) = |x|^2`.
    pub fn quadratic() -> Self {
        Self::new(
            |x| x.iter().map(|v| v * v).sum(),
            |x| x.iter().map(|v| 2.0 * v).collect(),
            |x| {
                let d = x.len();
                let mut m = vec![0.0; d * d];
                for i in 0..d {
                    m[i * d + i] = 2.0;
                }
                m
            },
            2.0,
            1.0,
            1.0,
        )
    }

    /// `V = 0`. Only useful as a transport weight; it does not satisfy the
    /// polynomial lower bound.
    pub fn zero() -> Self {
        Self::new(
            |_| 0.0,
            |x| vec![0.0; x.len()],
            |x| vec![0.0; x.len() * x.len()],
            1.0,
            0.0,
            0.0,
        )
    }

    /// `c V` with the growth constants scaled accordingly.
    pub fn scaled(&self, c: f64) -> Self {
        let (v, g, hs) = (
            self.value.clone(),
            self.gradient.clone(),
            self.hessian.clone(),
        );
        Self {
            value: Arc::new(move |x| c * v(x)),
            gradient: Arc::new(move |x| g(x).into_iter().map(|e| c * e).collect()),
            hessian: Arc::new(move |x| hs(x).into_iter().map(|e| c * e).collect()),
            p: self.p,
            c1: c * self.c1,
            c2: c * self.c2,
            zeta: self.zeta,
        }
    }

    pub fn with_zeta(mut self, zeta: Option<f64>) -> Self {
        self.zeta = zeta;
        self
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }

    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        (self.hessian)(x)
    }

    /// `V(x_0) + V(x_{-1}) + ... + V(x_{-n})`.
    pub fn total(&self, x: &DelayedState) -> f64 {
        x.lags().map(|c| self.value(c)).sum()
    }
}

fn fd_step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let s = fd_step(x[i]);
            probe[i] = x[i] + s;
            let up = f(&probe);
            probe[i] = x[i] - s;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * s)
        })
        .collect()
}

pub fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut m = vec![0.0; d * d];
    let mut probe = x.to_vec();
    let f0 = f(x);
    for i in 0..d {
        let si = fd_step(x[i]);
        probe[i] = x[i] + si;
        let up = f(&probe);
        probe[i] = x[i] - si;
        let down = f(&probe);
        probe[i] = x[i];
        m[i * d + i] = (up - 2.0 * f0 + down) / (si * si);
        for j in 0..i {
            let sj = fd_step(x[j]);
            let mut corner = |a: f64, b: f64| {
                probe[i] = x[i] + a * si;
                probe[j] = x[j] + b * sj;
                let v = f(&probe);
                probe[i] = x[i];
                probe[j] = x[j];
                v
            };
            let val = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0)
                + corner(-1.0, -1.0))
                / (4.0 * si * sj);
            m[i * d + j] = val;
            m[j * d + i] = val;
        }
    }
    m
}

/// Increasing profile `psi` with `psi(0) = 0`, applied to the averaged norm in
/// the transport cost.
#[derive(Clone)]
pub struct PsiSpec {
    name: String,
    psi: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    dpsi: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for PsiSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PsiSpec").field("name", &self.name).finish()
    }
}

impl PsiSpec {
    pub fn new(
        name: impl Into<String>,
        psi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dpsi: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            psi: Arc::new(psi),
            dpsi: Arc::new(dpsi),
        }
    }

    pub fn identity() -> Self {
        Self::new("identity", |r| r, |_| 1.0)
    }

    /// `psi(r) = r + r^2 / 2`.
    pub fn linear_quadratic() -> Self {
        Self::new("linear_quadratic", |r| r + 0.5 * r * r, |r| 1.0 + r)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "identity" | "id" => Some(Self::identity()),
            "linear_quadratic" | "r+r2/2" => Some(Self::linear_quadratic()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, r: f64) -> f64 {
        (self.psi)(r)
    }

    pub fn derivative(&self, r: f64) -> f64 {
        (self.dpsi)(r)
    }
}

/// Delay `tau_i(t)` with values in `(0, tau]`.
#[derive(Clone)]
pub enum Delay {
    Constant(f64),
    Varying(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Delay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Delay::Constant(v) => write!(f, "Constant({v})"),
            Delay::Varying(_) => write!(f, "Varying(..)"),
        }
    }
}

impl Delay {
    pub fn varying(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Delay::Varying(Arc::new(f))
    }

    pub fn at(&self, t: f64) -> f64 {
        match self {
            Delay::Constant(v) => *v,
            Delay::Varying(f) => f(t),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Delay::Constant(_))
    }
}

/// Number of sample points used when checking a time-varying delay's range.
const DELAY_PROBES: usize = 4096;

/// Checks that every delay maps `[0, horizon]` into `(0, tau]`, on the grid
/// points when a grid is given and on a dense sample otherwise.
pub fn validate_delays(
    delays: &[Delay],
    tau: f64,
    horizon: f64,
    grid: Option<&TimeGrid>,
) -> Result<()> {
    if delays.is_empty() {
        return Err(Error::InvalidDelay("at least one delay is required".into()));
    }
    let times: Vec<f64> = match grid {
        Some(g) => (0..=g.steps()).map(|k| g.step_time(k)).collect(),
        None => (0..=DELAY_PROBES)
            .map(|j| horizon * j as f64 / DELAY_PROBES as f64)
            .collect(),
    };
    for (i, delay) in delays.iter().enumerate() {
        let probe: &[f64] = if delay.is_constant() {
            &times[..1]
        } else {
            &times
        };
        for &t in probe {
            let v = delay.at(t);
            if !(v > 0.0 && v <= tau * (1.0 + 1e-12)) {
                return Err(Error::InvalidDelay(format!(
                    "delay {} takes value {v} at t = {t}, outside (0, {tau}]",
                    i + 1
                )));
            }
        }
    }
    Ok(())
}

/// Initial segment `xi(particle, t)` on `[-tau, 0]`.
#[derive(Clone)]
pub enum InitialSegment {
    Constant(Vec<f64>),
    PerParticle(Arc<dyn Fn(usize, f64) -> Vec<f64> + Send + Sync>),
}

impl fmt::Debug for InitialSegment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialSegment::Constant(v) => write!(f, "Constant({v:?})"),
            InitialSegment::PerParticle(_) => write!(f, "PerParticle(..)"),
        }
    }
}

impl InitialSegment {
    pub fn per_particle(f: impl Fn(usize, f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        InitialSegment::PerParticle(Arc::new(f))
    }

    pub fn eval(&self, particle: usize, t: f64) -> Vec<f64> {
        match self {
            InitialSegment::Constant(v) => v.clone(),
            InitialSegment::PerParticle(f) => f(particle, t),
        }
    }
}

/// Drift `b(x, mu)`, written into a `d`-vector.
pub type DriftFn = dyn Fn(&DelayedState, &EmpiricalMeasure, &mut [f64]) + Send + Sync;
/// Diffusion `sigma(x)`, written into a row-major `d x d` matrix.
pub type DiffusionFn = dyn Fn(&DelayedState, &mut [f64]) + Send + Sync;

/// Complete description of a McKean-Vlasov delay equation.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    dim: usize,
    tau: f64,
    delays: Vec<Delay>,
    drift: Arc<DriftFn>,
    diffusion: Arc<DiffusionFn>,
    lyapunov: LyapunovSpec,
    psi: PsiSpec,
    initial: InitialSegment,
    lipschitz: Option<f64>,
    measure_lipschitz: Option<f64>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("tau", &self.tau)
            .field("delays", &self.delays)
            .field("lyapunov", &self.lyapunov)
            .field("psi", &self.psi)
            .field("initial", &self.initial)
            .field("lipschitz", &self.lipschitz)
            .field("measure_lipschitz", &self.measure_lipschitz)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    /// Single constant delay `tau`, quadratic `V`, identity `psi`, zero initial
    /// segment and no declared constants; adjust with the `with_*` methods.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        tau: f64,
        drift: impl Fn(&DelayedState, &EmpiricalMeasure, &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(&DelayedState, &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "dimension must be at least 1".into(),
            ));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tau must be positive, got {tau}"
            )));
        }
        Ok(Self {
            name: name.into(),
            dim,
            tau,
            delays: vec![Delay::Constant(tau)],
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            lyapunov: LyapunovSpec::quadratic(),
            psi: PsiSpec::identity(),
            initial: InitialSegment::Constant(vec![0.0; dim]),
            lipschitz: None,
            measure_lipschitz: None,
        })
    }

    /// Replaces the delays, checking their range on `[0, horizon]`.
    pub fn with_delays(mut self, delays: Vec<Delay>, horizon: f64) -> Result<Self> {
        validate_delays(&delays, self.tau, horizon, None)?;
        self.delays = delays;
        Ok(self)
    }

    pub fn with_lyapunov(mut self, lyapunov: LyapunovSpec) -> Self {
        self.lyapunov = lyapunov;
        self
    }

    pub fn with_psi(mut self, psi: PsiSpec) -> Self {
        self.psi = psi;
        self
    }

    pub fn with_initial(mut self, initial: InitialSegment) -> Self {
        self.initial = initial;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Declared constants `K` and `theta` of the one-sided Lipschitz condition.
    pub fn with_lipschitz(mut self, k: Option<f64>, theta: Option<f64>) -> Self {
        self.lipschitz = k;
        self.measure_lipschitz = theta;
        self
    }

    pub fn with_zeta(mut self, zeta: Option<f64>) -> Self {
        self.lyapunov.zeta = zeta;
        self
    }

    /// Drops all declared constants, leaving the diagnostics in estimate-only mode.
    pub fn without_constants(self) -> Self {
        self.with_lipschitz(None, None).with_zeta(None)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_delays(&self) -> usize {
        self.delays.len()
    }

    pub fn delays(&self) -> &[Delay] {
        &self.delays
    }

    pub fn lyapunov(&self) -> &LyapunovSpec {
        &self.lyapunov
    }

    pub fn psi(&self) -> &PsiSpec {
        &self.psi
    }

    pub fn initial(&self) -> &InitialSegment {
        &self.initial
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn measure_lipschitz(&self) -> Option<f64> {
        self.measure_lipschitz
    }

    pub fn zeta(&self) -> Option<f64> {
        self.lyapunov.zeta
    }

    pub fn drift_into(&self, x: &DelayedState, mu: &EmpiricalMeasure, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        (self.drift)(x, mu, out)
    }

    pub fn diffusion_into(&self, x: &DelayedState, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        (self.diffusion)(x, out)
    }

    pub fn drift(&self, x: &DelayedState, mu: &EmpiricalMeasure) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(x, mu, &mut out);
        out
    }

    pub fn diffusion(&self, x: &DelayedState) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.diffusion_into(x, &mut out);
        out
    }

    pub fn check_state(&self, x: &DelayedState) -> Result<()> {
        if x.dim() != self.dim || x.n_delays() != self.n_delays() {
            return Err(Error::ShapeMismatch(format!(
                "state of shape ({}, {}) for a model with {} delays in dimension {}",
                x.n_delays(),
                x.dim(),
                self.n_delays(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Checks the model against a grid: same `tau` and delays in range on every step.
    pub fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if (grid.tau() - self.tau).abs() > 1e-12 * self.tau {
            return Err(Error::InvalidGrid(format!(
                "grid tau {} differs from model tau {}",
                grid.tau(),
                self.tau
            )));
        }
        validate_delays(&self.delays, self.tau, grid.horizon(), Some(grid))
    }
}

/// Generator `LV(x, mu) = grad V(x_0) . b(x, mu) + 1/2 tr(sigma^T hess V(x_0) sigma)`.
pub fn eval_generator(x: &DelayedState, mu: &EmpiricalMeasure, model: &ModelSpec) -> Result<f64> {
    model.check_state(x)?;
    if let Some(atom) = mu.atoms().first() {
        if !atom.same_shape(x) {
            return Err(Error::ShapeMismatch(
                "measure atoms and state live on different product spaces".into(),
            ));
        }
    }
    let d = model.dim();
    let b = model.drift(x, mu);
    let sigma = model.diffusion(x);
    let x0 = x.current();
    let grad = model.lyapunov().gradient(x0);
    let hess = model.lyapunov().hessian(x0);
    Ok(generator_from_parts(d, &grad, &hess, &b, &sigma))
}

pub(crate) fn generator_from_parts(
    d: usize,
    grad: &[f64],
    hess: &[f64],
    drift: &[f64],
    sigma: &[f64],
) -> f64 {
    let first: f64 = grad.iter().zip(drift).map(|(g, b)| g * b).sum();
    // tr(sigma^T H sigma) = sum_{i,j,k} sigma_ik H_ij sigma_jk
    let mut trace = 0.0;
    for k in 0..d {
        for i in 0..d {
            let sik = sigma[i * d + k];
            if sik == 0.0 {
                continue;
            }
            for j in 0..d {
                trace += sik * hess[i * d + j] * sigma[j * d + k];
            }
        }
    }
    first + 0.5 * trace
}

/// Value of a path at `t - tau_i(t)`, together with whether the lookup hit a
/// grid point exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryValue {
    pub value: Vec<f64>,
    pub exact: bool,
}

/// `X(t - tau_i(t))` for the `delay_index`-th delay (1-based; 0 returns `X(t)`).
pub fn eval_history(
    path: &ParticlePath,
    t: f64,
    delay_index: usize,
    model: &ModelSpec,
) -> Result<HistoryValue> {
    let lag = if delay_index == 0 {
        0.0
    } else {
        model
            .delays()
            .get(delay_index - 1)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "delay index {delay_index} but the model has {} delays",
                    model.n_delays()
                ))
            })?
            .at(t)
    };
    let (value, exact) = path.value_at(t - lag)?;
    Ok(HistoryValue { value, exact })
}

/// Reads `X(s)` from grid-stored values covering slots `0..filled`, linearly
/// interpolating between grid points. Writes into `out`, returns whether the
/// lookup was exact.
pub(crate) fn lookup_into(
    values: &[f64],
    filled: usize,
    grid: &TimeGrid,
    dim: usize,
    s: f64,
    out: &mut [f64],
) -> Result<bool> {
    let pos = (s + grid.tau()) / grid.h();
    let nearest = pos.round();
    let last = filled as f64 - 1.0;
    if pos < -1e-9 {
        return Err(Error::HistoryOutOfRange {
            t: s,
            start: -grid.tau(),
        });
    }
    if pos > last + 1e-9 {
        return Err(Error::TimeOutOfRange {
            t: s,
            horizon: grid.time_at(filled - 1),
        });
    }
    if (pos - nearest).abs() <= 1e-9 {
        let idx = nearest as usize;
        out.copy_from_slice(&values[idx * dim..(idx + 1) * dim]);
        return Ok(true);
    }
    let lo = pos.floor() as usize;
    let w = pos - lo as f64;
    let a = &values[lo * dim..(lo + 1) * dim];
    let b = &values[(lo + 1) * dim..(lo + 2) * dim];
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = (1.0 - w) * x + w * y;
    }
    Ok(false)
}
