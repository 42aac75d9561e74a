//! JSON run configuration.
//!
//! ```json
//! {
//!   "grid": { "tau": 0.25, "horizon": 1.0, "steps_per_delay": 16 },
//!   "model": { "name": "opinion", "opinion": { "sigma": 1.0 } },
//!   "run": { "particles": 256, "measure_times": [0.5, 1.0] },
//!   "fixpoint": { "lambda": "auto", "tol": 1e-3, "max_iter": 50 },
//!   "verify": { "probes": 10000, "box": 5.0 },
//!   "convergence": { "kind": "step", "levels": [16, 32, 64, 128, 256], "paths": 1000 }
//! }
//! ```
//!
//! Only `grid` and `model.name` are required; everything else has defaults.

use std::path::Path;

use serde::{Deserialize, Deserializer};

use crate::error::{Error, Result};
use crate::fixedpoint::PicardConfig;
use crate::model::{ModelSpec, PsiSpec};
use crate::models::{delayed_ou, multi_delay, opinion_model, pure_delay, DelaySpec, OpinionParams};
use crate::stochastics::TimeGrid;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub grid: GridConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub fixpoint: FixpointConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub tau: f64,
    pub horizon: f64,
    pub steps_per_delay: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// One of `opinion`, `delayed_ou`, `pure_delay`, `multi_delay`.
    pub name: String,
    /// Transport profile, `identity` (default) or `linear_quadratic`.
    #[serde(default)]
    pub psi: Option<String>,
    #[serde(default)]
    pub opinion: OpinionParams,
    #[serde(default)]
    pub delayed_ou: OuConfig,
    #[serde(default)]
    pub multi_delay: MultiDelayConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuConfig {
    pub a: f64,
    pub c: f64,
    pub sigma: f64,
    pub x0: f64,
}

impl Default for OuConfig {
    fn default() -> Self {
        Self {
            a: 1.0,
            c: 0.5,
            sigma: 0.5,
            x0: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiDelayConfig {
    pub kappa: f64,
    pub sigma: f64,
    pub x0: f64,
    /// Defaults to the two constant delays `tau / 2` and `tau`.
    pub delays: Option<Vec<DelaySpec>>,
}

impl Default for MultiDelayConfig {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            sigma: 0.0,
            x0: 1.0,
            delays: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub particles: usize,
    /// Times at which empirical measures are written; the horizon when empty.
    pub measure_times: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            particles: 256,
            measure_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixpointConfig {
    /// `"auto"` or a non-negative number.
    #[serde(deserialize_with = "lambda_setting")]
    pub lambda: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixpointConfig {
    fn default() -> Self {
        let p = PicardConfig::default();
        Self {
            lambda: p.lambda,
            tol: p.tol,
            max_iter: p.max_iter,
        }
    }
}

impl FixpointConfig {
    pub fn picard(&self) -> Result<PicardConfig> {
        if self.max_iter == 0 {
            return Err(Error::Config("fixpoint.max_iter must be at least 1".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Config(format!(
                "fixpoint.tol must be positive, got {}",
                self.tol
            )));
        }
        Ok(PicardConfig {
            lambda: self.lambda,
            tol: self.tol,
            max_iter: self.max_iter,
        })
    }
}

fn lambda_setting<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(f64),
        Word(String),
    }
    match Raw::deserialize(d)? {
        Raw::Number(v) if v >= 0.0 && v.is_finite() => Ok(Some(v)),
        Raw::Number(v) => Err(serde::de::Error::custom(format!(
            "lambda must be >= 0, got {v}"
        ))),
        Raw::Word(w) if w == "auto" => Ok(None),
        Raw::Word(w) => Err(serde::de::Error::custom(format!(
            "lambda must be \"auto\" or a number, got \"{w}\""
        ))),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub probes: usize,
    /// Half-width of the probe box `[-box, box]` per coordinate.
    #[serde(rename = "box")]
    pub half_width: f64,
    pub k_override: Option<f64>,
    pub theta_override: Option<f64>,
    pub zeta_override: Option<f64>,
    /// When false the model's constants are dropped and only estimates are reported.
    pub declare_constants: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            probes: 10_000,
            half_width: 5.0,
            k_override: None,
            theta_override: None,
            zeta_override: None,
            declare_constants: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Strong error against a fine reference, levels are steps per delay.
    Step,
    /// Picard fixed point against the particle system, levels are particle counts.
    Particles,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub kind: SweepKind,
    pub levels: Option<Vec<usize>>,
    pub paths: usize,
    pub reference_factor: usize,
    pub seeds: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            kind: SweepKind::Step,
            levels: None,
            paths: 1000,
            reference_factor: 64,
            seeds: 20,
        }
    }
}

impl ConvergenceConfig {
    pub fn levels(&self) -> Vec<usize> {
        self.levels.clone().unwrap_or_else(|| match self.kind {
            SweepKind::Step => vec![16, 32, 64, 128, 256],
            SweepKind::Particles => vec![64, 128, 256],
        })
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.tau, self.grid.horizon, self.grid.steps_per_delay)
    }

    pub fn model(&self) -> Result<ModelSpec> {
        let tau = self.grid.tau;
        let m = &self.model;
        let spec = match m.name.as_str() {
            "opinion" => opinion_model(&OpinionParams {
                tau,
                ..m.opinion.clone()
            })?,
            "delayed_ou" => {
                let c = &m.delayed_ou;
                delayed_ou(c.a, c.c, c.sigma, tau, c.x0)?
            }
            "pure_delay" => {
                if (tau - 1.0).abs() > 1e-12 {
                    return Err(Error::Config(format!(
                        "pure_delay has tau = 1, grid.tau is {tau}"
                    )));
                }
                pure_delay()?
            }
            "multi_delay" => {
                let c = &m.multi_delay;
                let delays = c.delays.clone().unwrap_or_else(|| {
                    vec![
                        DelaySpec::Constant { value: tau / 2.0 },
                        DelaySpec::Constant { value: tau },
                    ]
                });
                multi_delay(c.kappa, c.sigma, tau, &delays, c.x0, self.grid.horizon)?
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown model \"{other}\" (expected opinion, delayed_ou, pure_delay or multi_delay)"
                )))
            }
        };
        match &m.psi {
            None => Ok(spec),
            Some(name) => {
                let psi = PsiSpec::by_name(name)
                    .ok_or_else(|| Error::Config(format!("unknown psi \"{name}\"")))?;
                Ok(spec.with_psi(psi))
            }
        }
    }

    /// Measure output times, the horizon when none are configured.
    pub fn measure_times(&self) -> Vec<f64> {
        if self.run.measure_times.is_empty() {
            vec![self.grid.horizon]
        } else {
            self.run.measure_times.clone()
        }
    }
}
