//! Ready-made models: the delayed opinion-dynamics example, a delayed
//! Ornstein-Uhlenbeck benchmark, and a builder for several (possibly
//! time-varying) delays.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::model::{Delay, DelayedState, InitialSegment, LyapunovSpec, ModelSpec};

/// Seed of the streams that draw the opinion model's random initial values.
/// Fixed so that the initial law does not move with the noise seed.
pub const OPINION_INIT_SEED: u64 = 0x6f70_696e_696f_6e00;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelShape {
    /// `c max(0, 1 - (r/R)^2)^2`.
    Bump,
    /// `c max(0, 1 - r/R)`.
    Tent,
    /// `c` on `[0, R]`, zero beyond. Not Lipschitz; for hand-checkable tests.
    Indicator,
}

/// Interaction kernel `Phi: [0, inf) -> [0, inf)` supported on `[0, R]`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct Kernel {
    pub shape: KernelShape,
    pub height: f64,
    pub support: f64,
}

impl Kernel {
    pub fn eval(&self, r: f64) -> f64 {
        if self.support <= 0.0 || r > self.support {
            return 0.0;
        }
        let s = r / self.support;
        match self.shape {
            KernelShape::Bump => self.height * (1.0 - s * s).powi(2),
            KernelShape::Tent => self.height * (1.0 - s),
            KernelShape::Indicator => self.height,
        }
    }

    /// `sup Phi`.
    pub fn sup(&self) -> f64 {
        self.height.abs()
    }

    /// Lipschitz constant of `Phi` (infinite for the indicator).
    pub fn lipschitz(&self) -> f64 {
        if self.height == 0.0 {
            return 0.0;
        }
        match self.shape {
            KernelShape::Bump => 8.0 * self.height.abs() / (3.0 * 3f64.sqrt() * self.support),
            KernelShape::Tent => self.height.abs() / self.support,
            KernelShape::Indicator => f64::INFINITY,
        }
    }
}

/// Affine reversion `phi(x) = offset - rate x`, which is `|rate|`-Lipschitz.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct Reversion {
    pub offset: f64,
    pub rate: f64,
}

impl Reversion {
    pub fn eval(&self, x: f64) -> f64 {
        self.offset - self.rate * x
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpinionParams {
    /// `Phi_{-1}`, acting on delayed opinions.
    pub kernel_delayed: Kernel,
    /// `Phi_0`, acting on current opinions.
    pub kernel_current: Kernel,
    pub reversion_delayed: Reversion,
    pub reversion_current: Reversion,
    pub sigma: f64,
    /// Taken from the grid section of a configuration file.
    #[serde(skip)]
    pub tau: f64,
    /// Particle `i` starts from the constant segment `xi_i ~ U[-w, w]`.
    pub initial_half_width: f64,
}

impl Default for OpinionParams {
    fn default() -> Self {
        let kernel = Kernel {
            shape: KernelShape::Bump,
            height: 1.0,
            support: 1.0,
        };
        let reversion = Reversion {
            offset: 0.0,
            rate: 1.0,
        };
        Self {
            kernel_delayed: kernel,
            kernel_current: kernel,
            reversion_delayed: reversion,
            reversion_current: reversion,
            sigma: 1.0,
            tau: 0.25,
            initial_half_width: 2.0,
        }
    }
}

impl OpinionParams {
    /// Both kernels as tents of height 1 and support 1, so `||Phi|| = a = R = 1`.
    pub fn unit_tent() -> Self {
        let kernel = Kernel {
            shape: KernelShape::Tent,
            height: 1.0,
            support: 1.0,
        };
        Self {
            kernel_delayed: kernel,
            kernel_current: kernel,
            ..Self::default()
        }
    }

    /// `||Phi||`, the larger of the two kernel suprema.
    pub fn kernel_sup(&self) -> f64 {
        self.kernel_delayed.sup().max(self.kernel_current.sup())
    }

    /// `a`, the larger of the two kernel Lipschitz constants.
    pub fn kernel_lipschitz(&self) -> f64 {
        self.kernel_delayed
            .lipschitz()
            .max(self.kernel_current.lipschitz())
    }

    /// `R`, the larger support radius.
    pub fn support(&self) -> f64 {
        self.kernel_delayed.support.max(self.kernel_current.support)
    }

    /// `b`, the Lipschitz constant shared by the reversion terms.
    pub fn reversion_lipschitz(&self) -> f64 {
        self.reversion_delayed
            .rate
            .abs()
            .max(self.reversion_current.rate.abs())
    }
}

fn kernel_average(kernel: &Kernel, x: f64, atoms: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in atoms {
        let d = x - y;
        sum += kernel.eval(d.abs()) * d;
        count += 1;
    }
    sum / count as f64
}

fn opinion_drift_unchecked(x: &DelayedState, mu: &EmpiricalMeasure, p: &OpinionParams) -> f64 {
    let (x0, x1) = (x.current()[0], x.lag(1)[0]);
    kernel_average(&p.kernel_delayed, x1, mu.marginal(1).map(|a| a[0]))
        + p.reversion_delayed.eval(x1)
        + kernel_average(&p.kernel_current, x0, mu.marginal(0).map(|a| a[0]))
        + p.reversion_current.eval(x0)
}

/// Opinion drift: kernel averages over the delayed and current marginals of
/// `mu` plus the two reversion terms.
pub fn opinion_drift(
    x: &DelayedState,
    mu: &EmpiricalMeasure,
    params: &OpinionParams,
) -> Result<f64> {
    if x.dim() != 1 || x.n_delays() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "opinion drift needs d = 1 and one delay, got d = {} with {} delays",
            x.dim(),
            x.n_delays()
        )));
    }
    if mu.is_empty() || mu.dim() != 1 || mu.n_delays() != 1 {
        return Err(Error::ShapeMismatch(
            "opinion drift needs a non-empty measure on pairs (y_-1, y_0)".into(),
        ));
    }
    Ok(opinion_drift_unchecked(x, mu, params))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpinionConstants {
    /// `A = 2 max{||Phi||, a R}`.
    pub a: f64,
    /// `K = 2 max{A, b}`.
    pub k: f64,
    /// `theta = A`.
    pub theta: f64,
    /// `zeta = max{6 + ||Phi||/2 + 2 b^2, phi_0(0)^2 + phi_{-1}(0)^2 + sigma^2}`.
    pub zeta: f64,
    /// The same with `||Phi||^2 / 2` in place of `||Phi|| / 2`.
    pub zeta_squared: f64,
}

pub fn opinion_constants(params: &OpinionParams) -> OpinionConstants {
    let phi = params.kernel_sup();
    let a_r = if params.kernel_sup() == 0.0 {
        0.0
    } else {
        params.kernel_lipschitz() * params.support()
    };
    let big_a = 2.0 * phi.max(a_r);
    let b = params.reversion_lipschitz();
    let noise_floor = params.reversion_current.offset.powi(2)
        + params.reversion_delayed.offset.powi(2)
        + params.sigma.powi(2);
    OpinionConstants {
        a: big_a,
        k: 2.0 * big_a.max(b),
        theta: big_a,
        zeta: (6.0 + phi / 2.0 + 2.0 * b * b).max(noise_floor),
        zeta_squared: (6.0 + phi * phi / 2.0 + 2.0 * b * b).max(noise_floor),
    }
}

fn opinion_initial(half_width: f64) -> InitialSegment {
    InitialSegment::per_particle(move |i, _| {
        let mut rng = ChaCha8Rng::seed_from_u64(OPINION_INIT_SEED);
        rng.set_stream(i as u64);
        vec![if half_width > 0.0 {
            rng.random_range(-half_width..=half_width)
        } else {
            0.0
        }]
    })
}

/// Opinion model with `V(x) = x^2`, identity `psi` and the constants of
/// [`opinion_constants`] declared.
pub fn opinion_model(params: &OpinionParams) -> Result<ModelSpec> {
    let c = opinion_constants(params);
    let p = params.clone();
    let sigma = params.sigma;
    Ok(ModelSpec::new(
        "opinion",
        1,
        params.tau,
        move |x, mu, out| out[0] = opinion_drift_unchecked(x, mu, &p),
        move |_, out| out[0] = sigma,
    )?
    .with_initial(opinion_initial(params.initial_half_width))
    .with_lipschitz(Some(c.k), Some(c.theta))
    .with_zeta(Some(c.zeta)))
}

/// `dX = (-a X(t) - c X(t - tau)) dt + sigma dW` started from the constant
/// segment `x0`, with `V(x) = x^2` and analytic constants:
/// `zeta = max{sigma^2, |sigma|, max(0, -2a) + |c|}`, `K = 2 max{max(-a, 0), |c|}`, `theta = 0`.
pub fn delayed_ou(a: f64, c: f64, sigma: f64, tau: f64, x0: f64) -> Result<ModelSpec> {
    if ![a, c, sigma, x0].iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument(
            "delayed OU coefficients must be finite".into(),
        ));
    }
    let zeta = (sigma * sigma)
        .max(sigma.abs())
        .max((-2.0 * a).max(0.0) + c.abs());
    let k = 2.0 * (-a).max(0.0).max(c.abs());
    Ok(ModelSpec::new(
        "delayed_ou",
        1,
        tau,
        move |x, _, out| out[0] = -a * x.current()[0] - c * x.lag(1)[0],
        move |_, out| out[0] = sigma,
    )?
    .with_initial(InitialSegment::Constant(vec![x0]))
    .with_lipschitz(Some(k), Some(0.0))
    .with_zeta(Some(zeta)))
}

/// `X'(t) = -X(t - 1)` with `X = 1` on `[-1, 0]`.
pub fn pure_delay() -> Result<ModelSpec> {
    Ok(delayed_ou(0.0, 1.0, 0.0, 1.0, 1.0)?.with_name("pure_delay"))
}

/// Replaces the single delay of `base` by `delays`; the drift and diffusion of
/// `base` must accept states with `delays.len() + 1` components.
pub fn build_multi_delay(base: ModelSpec, delays: Vec<Delay>, horizon: f64) -> Result<ModelSpec> {
    base.with_delays(delays, horizon)
}

/// Delay description used by configuration files.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelaySpec {
    Constant {
        value: f64,
    },
    /// `base + amplitude sin(frequency t)`.
    Sine {
        base: f64,
        amplitude: f64,
        frequency: f64,
    },
}

impl DelaySpec {
    pub fn build(&self) -> Delay {
        match *self {
            DelaySpec::Constant { value } => Delay::Constant(value),
            DelaySpec::Sine {
                base,
                amplitude,
                frequency,
            } => Delay::varying(move |t| base + amplitude * (frequency * t).sin()),
        }
    }
}

/// Averaging model `b = -kappa mean(x_0, x_{-1}, ..., x_{-n})`, constant `sigma`,
/// with `K = |kappa|`, `theta = 0` and `zeta = max{sigma^2, |sigma|, 2|kappa|}`.
pub fn multi_delay(
    kappa: f64,
    sigma: f64,
    tau: f64,
    delays: &[DelaySpec],
    x0: f64,
    horizon: f64,
) -> Result<ModelSpec> {
    let base = ModelSpec::new(
        "multi_delay",
        1,
        tau,
        move |x, _, out| {
            let m = x.lags().map(|c| c[0]).sum::<f64>() / x.n_components() as f64;
            out[0] = -kappa * m;
        },
        move |_, out| out[0] = sigma,
    )?
    .with_initial(InitialSegment::Constant(vec![x0]))
    .with_lyapunov(LyapunovSpec::quadratic())
    .with_lipschitz(Some(kappa.abs()), Some(0.0))
    .with_zeta(Some(
        (sigma * sigma).max(sigma.abs()).max(2.0 * kappa.abs()),
    ));
    build_multi_delay(base, delays.iter().map(DelaySpec::build).collect(), horizon)
}
