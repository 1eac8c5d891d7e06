use super::acquisition::{propose_next, EhviContext};
use super::hypervolume::hypervolume;
use super::lhs::latin_hypercube;
use super::pareto::to_minimization;
use super::{
    reference_point, DesignSpace, Evaluation, MoboError, OptimizerConfig, ParetoArchive,
    Provenance, Sense,
};
use crate::gp::{GpModel, GpOptions};
use crate::rng::{split_seed, STREAM_ACQUISITION, STREAM_GP, STREAM_LHS};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Display;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub x: Vec<f64>,
    pub ehvi: f64,
    pub ehvi_std_error: f64,
    pub fallback: bool,
    /// Reference point used by the acquisition (minimization convention).
    pub reference_point: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub sense: Vec<Sense>,
    /// Every evaluation in order: the Latin hypercube design, then proposals.
    pub history: Vec<Evaluation>,
    pub archive: ParetoArchive,
    pub iterations: Vec<IterationRecord>,
}

impl OptimizationResult {
    /// Hypervolume of the front of the first `k` evaluations, for every `k`,
    /// against a fixed reference (minimization convention). Points beyond the
    /// reference contribute nothing.
    pub fn hypervolume_trace(&self, reference: &[f64]) -> Result<Vec<f64>, MoboError> {
        let mut pts: Vec<Vec<f64>> = Vec::with_capacity(self.history.len());
        let mut out = Vec::with_capacity(self.history.len());
        for e in &self.history {
            let p = to_minimization(&e.y, &self.sense);
            pts.push(p.iter().zip(reference).map(|(a, r)| a.min(*r)).collect());
            out.push(hypervolume(&pts, reference)?);
        }
        Ok(out)
    }
}

fn gp_options(space: &DesignSpace, cfg: &OptimizerConfig, seed: u64) -> GpOptions {
    GpOptions {
        restarts: cfg.gp_restarts,
        isotropic: cfg.isotropic,
        seed,
        input_bounds: Some(space.bounds.clone()),
    }
}

/// One GP per objective on minimization-convention values. Model `j` uses
/// the seed `split_seed(seed, j)`.
pub fn fit_models(
    x: &[Vec<f64>],
    y_min: &[Vec<f64>],
    space: &DesignSpace,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<Vec<GpModel>, MoboError> {
    let m = cfg.objective_sense.len();
    (0..m)
        .into_par_iter()
        .map(|j| {
            let col: Vec<f64> = y_min.iter().map(|y| y[j]).collect();
            let opts = gp_options(space, cfg, split_seed(seed, j as u64));
            GpModel::fit(x, &col, &opts).map_err(MoboError::from)
        })
        .collect()
}

/// Seed of the GP fits in iteration `iteration`.
pub fn iteration_gp_seed(root: u64, iteration: usize) -> u64 {
    split_seed(split_seed(root, STREAM_GP), iteration as u64)
}

/// Run the optimization loop: `n_lhs` Latin hypercube points, then
/// `n_iterations` sequential proposals.
///
/// Randomness of iteration `i` depends only on the root seed and `i`, so a
/// shorter run yields a prefix of the history of a longer one.
pub fn optimize<F, E>(
    space: &DesignSpace,
    cfg: &OptimizerConfig,
    mut objective: F,
) -> Result<OptimizationResult, MoboError>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, E>,
    E: Display,
{
    space.validate()?;
    cfg.validate()?;
    let sense = &cfg.objective_sense;
    let mut history: Vec<Evaluation> = Vec::with_capacity(cfg.n_lhs + cfg.n_iterations);

    let mut evaluate = |x: Vec<f64>, provenance, iteration, history: &mut Vec<Evaluation>| {
        let y = objective(&x).map_err(|e| MoboError::Objective {
            x: x.clone(),
            message: e.to_string(),
        })?;
        if y.len() != sense.len() {
            return Err(MoboError::DimensionMismatch { expected: sense.len(), got: y.len() });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(MoboError::Objective { x, message: format!("non-finite objective values {y:?}") });
        }
        history.push(Evaluation { x, y, provenance, iteration });
        Ok(())
    };

    for x in latin_hypercube(space, cfg.n_lhs, split_seed(cfg.rng_seed, STREAM_LHS)) {
        evaluate(x, Provenance::Lhs, None, &mut history)?;
    }

    let acq_root = split_seed(cfg.rng_seed, STREAM_ACQUISITION);
    let mut iterations = Vec::with_capacity(cfg.n_iterations);
    for it in 0..cfg.n_iterations {
        let xs: Vec<Vec<f64>> = history.iter().map(|e| e.x.clone()).collect();
        let ys: Vec<Vec<f64>> = history.iter().map(|e| to_minimization(&e.y, sense)).collect();
        let models = fit_models(&xs, &ys, space, cfg, iteration_gp_seed(cfg.rng_seed, it))?;
        let reference = reference_point(&ys);
        let seed = split_seed(acq_root, it as u64);
        let ctx = EhviContext::new(&ys, &reference, cfg.ehvi_mc_samples, split_seed(seed, 2))?;
        let p = propose_next(&models, &ctx, space, &xs, cfg, seed)?;
        iterations.push(IterationRecord {
            iteration: it,
            x: p.x.clone(),
            ehvi: p.ehvi.value,
            ehvi_std_error: p.ehvi.std_error,
            fallback: p.fallback,
            reference_point: reference,
        });
        evaluate(p.x, Provenance::Proposed, Some(it), &mut history)?;
    }

    Ok(OptimizationResult {
        sense: sense.clone(),
        archive: ParetoArchive::from_history(&history, sense),
        history,
        iterations,
    })
}
