//! Strong pathwise approximation of sub-fractional Brownian motion by means
//! of uniform transport (telegraph) processes.
//!
//! The crate builds the approximating processes `W^(n)`, `Y^(n)`,
//! `S^(n) = W^(n) + Y^(n)` from a triple of driver paths, validates the
//! deterministic kernel inequalities behind the construction, and reproduces
//! the closed-form fBm/sfBm covariances by Monte Carlo.
//!
//! Modules follow the pipeline:
//! - [`kernels`]: power-law kernels, schedules, closed-form primitives;
//! - [`paths`]: transport and grid-Brownian driver paths;
//! - [`stieltjes`]: exact Stieltjes integration and the tail quadrature;
//! - [`approximants`]: the assembled processes and exact covariances;
//! - [`oracles`]: independent ground truth (calibration, Gaussian samplers,
//!   telegraph variance, lemma-bound suite);
//! - [`montecarlo`]: the replica engine and statistical validation.

pub mod approximants;
pub mod error;
pub mod kernels;
pub mod paths;
pub mod stieltjes;

pub use error::{Error, Result};
