//! Numerical toolkit for McKean-Vlasov stochastic differential delay equations.
//!
//! The equation `dX(t) = b(X(t), X(t - tau), mu_t) dt + sigma(X(t), X(t - tau)) dW(t)` couples
//! each trajectory to the joint law `mu_t` of its current and delayed states. This crate
//!
//! - integrates the equation with the law frozen to a given measure flow ([`solver`]),
//! - iterates the law map `mu -> Law(X^mu)` to its fixed point ([`fixedpoint`]),
//! - runs the self-consistent interacting particle system as a cross-check ([`particle`]),
//! - measures distances between empirical laws with a weighted transport cost ([`measure`]),
//! - probes the Lyapunov and one-sided Lipschitz hypotheses numerically ([`diagnostics`]).
//!
//! Ready-made models live in [`models`]; the `mvsdde` binary wraps everything in [`cli`].

pub mod assignment;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod fixedpoint;
pub mod measure;
pub mod model;
pub mod models;
pub mod particle;
pub mod solver;
pub mod stochastics;

pub use error::{Error, Result};
pub use measure::{EmpiricalMeasure, MeasureFlow};
pub use model::{DelayedState, ModelSpec};
pub use solver::ParticlePath;
pub use stochastics::{NoiseBank, NoiseStream, TimeGrid};
