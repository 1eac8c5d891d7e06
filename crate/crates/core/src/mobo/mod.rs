//! Multi-objective Bayesian optimization.
//!
//! Objectives are handled in minimization convention internally; maximized
//! objectives are negated on the way in and reported in natural units.

mod acquisition;
mod driver;
mod hypervolume;
mod lhs;
mod pareto;

pub use acquisition::{acquisition_ehvi, propose_next, Ehvi, EhviContext, Proposal};
pub use driver::{fit_models, iteration_gp_seed, optimize, IterationRecord, OptimizationResult};
pub use hypervolume::hypervolume;
pub use lhs::latin_hypercube;
pub use pareto::{dominates, pareto_filter, to_minimization};

use crate::gp::GpError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MoboError {
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid design space: {0}")]
    InvalidSpace(String),
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point {index} lies beyond the reference point")]
    PointOutsideRef { index: usize },
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("objective failed at x = {x:?}: {message}")]
    Objective { x: Vec<f64>, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Minimize,
    Maximize,
}

/// Box of admissible design points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpace {
    pub bounds: Vec<[f64; 2]>,
}

impl DesignSpace {
    pub fn new(bounds: Vec<[f64; 2]>) -> Result<Self, MoboError> {
        let s = Self { bounds };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), MoboError> {
        if self.bounds.is_empty() {
            return Err(MoboError::InvalidSpace("no variables".into()));
        }
        for (i, [lo, hi]) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(MoboError::InvalidSpace(format!(
                    "variable {i}: lower {lo} must be below upper {hi}"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.bounds)
            .map(|(v, [lo, hi])| (v - lo) / (hi - lo))
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.bounds)
            .map(|(v, [lo, hi])| (lo + v * (hi - lo)).clamp(*lo, *hi))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.bounds).all(|(v, [lo, hi])| v >= lo && v <= hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "defaults::n_lhs")]
    pub n_lhs: usize,
    #[serde(default = "defaults::n_iterations")]
    pub n_iterations: usize,
    /// One entry per objective.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_sense: Vec<Sense>,
    #[serde(default = "defaults::ehvi_mc_samples")]
    pub ehvi_mc_samples: usize,
    /// Latin hypercube starts of the acquisition search.
    #[serde(default = "defaults::acq_restarts")]
    pub acq_restarts: usize,
    /// How many of the best starts are refined by pattern search.
    #[serde(default = "defaults::acq_local_searches")]
    pub acq_local_searches: usize,
    /// Local searches per GP hyperparameter fit.
    #[serde(default = "defaults::gp_restarts")]
    pub gp_restarts: usize,
    /// One lengthscale for all inputs instead of one per input.
    #[serde(default)]
    pub isotropic: bool,
    /// Derived from the run seed; not part of the configuration file.
    #[serde(skip)]
    pub rng_seed: u64,
}

mod defaults {
    pub fn n_lhs() -> usize {
        10
    }
    pub fn n_iterations() -> usize {
        20
    }
    pub fn ehvi_mc_samples() -> usize {
        2048
    }
    pub fn acq_restarts() -> usize {
        32
    }
    pub fn acq_local_searches() -> usize {
        4
    }
    pub fn gp_restarts() -> usize {
        10
    }
}

impl OptimizerConfig {
    pub fn new(objective_sense: Vec<Sense>) -> Self {
        Self {
            n_lhs: defaults::n_lhs(),
            n_iterations: defaults::n_iterations(),
            objective_sense,
            ehvi_mc_samples: defaults::ehvi_mc_samples(),
            acq_restarts: defaults::acq_restarts(),
            acq_local_searches: defaults::acq_local_searches(),
            gp_restarts: defaults::gp_restarts(),
            isotropic: false,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), MoboError> {
        let bad = |m: &str| Err(MoboError::InvalidConfig(m.into()));
        if self.n_lhs < 2 {
            return bad("n_lhs must be at least 2");
        }
        if self.objective_sense.is_empty() {
            return bad("at least one objective is required");
        }
        if self.ehvi_mc_samples < 2 {
            return bad("ehvi_mc_samples must be at least 2");
        }
        if self.acq_restarts == 0 {
            return bad("acq_restarts must be at least 1");
        }
        if self.gp_restarts == 0 {
            return bad("gp_restarts must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Lhs,
    Proposed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub x: Vec<f64>,
    /// Objective values in natural units.
    pub y: Vec<f64>,
    pub provenance: Provenance,
    /// Optimizer iteration that proposed the point.
    pub iteration: Option<usize>,
}

/// Non-dominated evaluations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoArchive {
    pub entries: Vec<Evaluation>,
    /// In minimization convention.
    pub reference_point: Vec<f64>,
}

impl ParetoArchive {
    pub fn from_history(history: &[Evaluation], sense: &[Sense]) -> Self {
        let ys: Vec<Vec<f64>> = history.iter().map(|e| e.y.clone()).collect();
        let flipped: Vec<Vec<f64>> = ys.iter().map(|y| to_minimization(y, sense)).collect();
        let entries = pareto_filter(&ys, sense)
            .into_iter()
            .map(|i| history[i].clone())
            .collect();
        Self {
            entries,
            reference_point: reference_point(&flipped),
        }
    }

    /// Hypervolume against `reference` (minimization convention).
    pub fn hypervolume(&self, sense: &[Sense], reference: &[f64]) -> Result<f64, MoboError> {
        let pts: Vec<Vec<f64>> = self
            .entries
            .iter()
            .map(|e| to_minimization(&e.y, sense))
            .collect();
        hypervolume(&pts, reference)
    }
}

/// Worst value per objective plus a tenth of the observed range
/// (minimization convention).
pub fn reference_point(points: &[Vec<f64>]) -> Vec<f64> {
    let m = points.first().map_or(0, |p| p.len());
    (0..m)
        .map(|j| {
            let hi = points.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
            let lo = points.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
            let range = hi - lo;
            if range > 0.0 {
                hi + 0.1 * range
            } else {
                hi + 0.1 * hi.abs().max(1.0)
            }
        })
        .collect()
}
