//! Expected hypervolume improvement and its maximization.

use super::hypervolume::improvement;
use super::lhs::latin_hypercube;
use super::pareto::pareto_filter_min;
use super::{DesignSpace, MoboError, OptimizerConfig};
use crate::gp::GpModel;
use crate::rng::split_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

const DUPLICATE_DISTANCE: f64 = 1e-6;
const INITIAL_STEP: f64 = 0.25;
const MIN_STEP: f64 = 1e-3;
const MAX_LOCAL_EVALS: usize = 400;

/// Front, reference point and standard normal draws shared by every EHVI
/// evaluation of one iteration, so the acquisition surface is a deterministic
/// function of `x`.
#[derive(Clone, Debug)]
pub struct EhviContext {
    front: Vec<Vec<f64>>,
    reference: Vec<f64>,
    normals: Vec<f64>,
    n_samples: usize,
}

impl EhviContext {
    /// `observed` and `reference` are in minimization convention; dominated
    /// observations are dropped here.
    pub fn new(
        observed: &[Vec<f64>],
        reference: &[f64],
        n_samples: usize,
        seed: u64,
    ) -> Result<Self, MoboError> {
        let m = reference.len();
        if let Some(p) = observed.iter().find(|p| p.len() != m) {
            return Err(MoboError::DimensionMismatch { expected: m, got: p.len() });
        }
        if n_samples < 2 {
            return Err(MoboError::InvalidConfig("at least two EHVI samples are required".into()));
        }
        let mut front: Vec<Vec<f64>> = pareto_filter_min(observed)
            .into_iter()
            .map(|i| observed[i].clone())
            .filter(|p| p.iter().zip(reference).all(|(a, r)| a < r))
            .collect();
        front.sort_by(|a, b| a[0].total_cmp(&b[0]));
        front.dedup();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normals = (0..n_samples * m).map(|_| rng.sample(StandardNormal)).collect();
        Ok(Self {
            front,
            reference: reference.to_vec(),
            normals,
            n_samples,
        })
    }

    pub fn front(&self) -> &[Vec<f64>] {
        &self.front
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ehvi {
    pub value: f64,
    /// Monte-Carlo standard error of `value`.
    pub std_error: f64,
}

/// EHVI at `x` under independent latent posteriors, one model per objective
/// (fitted to minimization-convention values).
pub fn acquisition_ehvi(models: &[GpModel], ctx: &EhviContext, x: &[f64]) -> Ehvi {
    let m = ctx.reference.len();
    assert_eq!(models.len(), m, "one model per objective");
    let (mean, sd): (Vec<f64>, Vec<f64>) = models
        .iter()
        .map(|g| {
            let (mu, var) = g.predict_latent(x);
            (mu, var.sqrt())
        })
        .unzip();
    if sd.iter().all(|s| *s == 0.0) {
        return Ehvi {
            value: improvement(&ctx.front, &mean, &ctx.reference),
            std_error: 0.0,
        };
    }
    let mut y = vec![0.0; m];
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for z in ctx.normals.chunks_exact(m) {
        for j in 0..m {
            y[j] = mean[j] + sd[j] * z[j];
        }
        let v = improvement(&ctx.front, &y, &ctx.reference);
        sum += v;
        sumsq += v * v;
    }
    let n = ctx.n_samples as f64;
    let value = sum / n;
    let var = ((sumsq - n * value * value) / (n - 1.0)).max(0.0);
    Ehvi {
        value,
        std_error: (var / n).sqrt(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub x: Vec<f64>,
    pub ehvi: Ehvi,
    /// True when the acquisition was zero everywhere searched and the point
    /// was chosen by posterior spread instead.
    pub fallback: bool,
}

/// Maximize EHVI over `space`: Latin hypercube starts, coordinate pattern
/// search from the best few, then the best candidate that is not a repeat of
/// an evaluated point.
pub fn propose_next(
    models: &[GpModel],
    ctx: &EhviContext,
    space: &DesignSpace,
    evaluated: &[Vec<f64>],
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<Proposal, MoboError> {
    space.validate()?;
    if let Some(g) = models.iter().find(|g| g.dim() != space.dim()) {
        return Err(MoboError::DimensionMismatch { expected: space.dim(), got: g.dim() });
    }
    let score = |u: &[f64]| acquisition_ehvi(models, ctx, &space.from_unit(u));

    let starts: Vec<Vec<f64>> = latin_hypercube(space, cfg.acq_restarts.max(1), split_seed(seed, 0))
        .iter()
        .map(|x| space.to_unit(x))
        .collect();
    let start_scores: Vec<Ehvi> = starts.par_iter().map(|u| score(u)).collect();

    let mut order: Vec<usize> = (0..starts.len()).collect();
    order.sort_by(|&a, &b| start_scores[b].value.total_cmp(&start_scores[a].value));
    let refined: Vec<(Vec<f64>, Ehvi)> = order
        .iter()
        .take(cfg.acq_local_searches)
        .filter(|&&i| start_scores[i].value > 0.0)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&&i| pattern_search(&score, starts[i].clone(), start_scores[i]))
        .collect();

    let mut candidates: Vec<(Vec<f64>, Ehvi)> = refined;
    candidates.extend(order.iter().map(|&i| (starts[i].clone(), start_scores[i])));
    candidates.sort_by(|a, b| b.1.value.total_cmp(&a.1.value));

    let evaluated_unit: Vec<Vec<f64>> = evaluated.iter().map(|x| space.to_unit(x)).collect();
    let fresh = |u: &[f64]| {
        evaluated_unit
            .iter()
            .all(|e| distance(e, u) > DUPLICATE_DISTANCE)
    };

    if candidates[0].1.value > 0.0 {
        if let Some((u, e)) = candidates.iter().find(|(u, _)| fresh(u)) {
            return Ok(Proposal { x: space.from_unit(u), ehvi: *e, fallback: false });
        }
    }

    // Flat acquisition: go where the surrogates know least.
    let spread = |u: &[f64]| -> f64 {
        let x = space.from_unit(u);
        models
            .iter()
            .map(|g| {
                let prior = g.hyperparams_raw().signal_variance;
                let (_, var) = g.predict_latent(&x);
                if prior > 0.0 { var / prior } else { 0.0 }
            })
            .sum()
    };
    let best = starts
        .iter()
        .enumerate()
        .filter(|(_, u)| fresh(u))
        .map(|(i, u)| (i, spread(u)))
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
    let u = match best {
        Some((i, _)) => starts[i].clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, 1));
            (0..space.dim()).map(|_| rng.random_range(0.0..1.0)).collect()
        }
    };
    let ehvi = score(&u);
    Ok(Proposal { x: space.from_unit(&u), ehvi, fallback: true })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Compass search in the unit box, maximizing.
fn pattern_search<F>(f: &F, mut u: Vec<f64>, mut best: Ehvi) -> (Vec<f64>, Ehvi)
where
    F: Fn(&[f64]) -> Ehvi,
{
    let mut step = INITIAL_STEP;
    let mut evals = 0;
    while step >= MIN_STEP && evals < MAX_LOCAL_EVALS {
        let mut moved = false;
        'poll: for j in 0..u.len() {
            for sign in [1.0, -1.0] {
                let mut cand = u.clone();
                cand[j] = (u[j] + sign * step).clamp(0.0, 1.0);
                if cand[j] == u[j] {
                    continue;
                }
                let v = f(&cand);
                evals += 1;
                if v.value > best.value {
                    u = cand;
                    best = v;
                    moved = true;
                    break 'poll;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    (u, best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::GpHyperparams;
    use crate::mobo::Sense;
    use statrs::distribution::{Continuous, ContinuousCDF, Normal};

    fn model_1d(x: &[f64], y: &[f64], ell: f64) -> GpModel {
        let xs: Vec<Vec<f64>> = x.iter().map(|v| vec![*v]).collect();
        let hyper = GpHyperparams {
            lengthscales: vec![ell],
            signal_variance: 1.0,
            noise_variance: 1e-6,
        };
        GpModel::with_hyperparams(&xs, y, hyper, Some(&[[0.0, 1.0]])).unwrap()
    }

    fn expected_improvement(best: f64, mu: f64, sd: f64) -> f64 {
        let z = (best - mu) / sd;
        let n = Normal::standard();
        (best - mu) * n.cdf(z) + sd * n.pdf(z)
    }

    #[test]
    fn single_objective_matches_closed_form_ei() {
        let xs = [0.0, 0.2, 0.45, 0.9, 1.0];
        let ys = [1.0, 0.3, 0.6, -0.2, 0.5];
        let g = model_1d(&xs, &ys, 0.2);
        let best = -0.2;
        let ctx = EhviContext::new(&[vec![best]], &[100.0], 4096, 9).unwrap();
        let mut informative = 0;
        for x in [0.1, 0.33, 0.6, 0.7, 0.75, 0.8, 0.95] {
            let (mu, var) = g.predict_latent(&[x]);
            let exact = expected_improvement(best, mu, var.sqrt());
            if exact > 1e-3 {
                informative += 1;
            }
            let e = acquisition_ehvi(std::slice::from_ref(&g), &ctx, &[x]);
            // The floor covers points where every draw misses the front.
            assert!(
                (e.value - exact).abs() <= 3.0 * e.std_error + 1e-6,
                "x = {x}: {} vs {exact} (se {})",
                e.value,
                e.std_error
            );
        }
        assert!(informative >= 3);
    }

    #[test]
    fn dominated_posterior_gives_zero() {
        // Both models sit at large values with almost no variance.
        let xs: Vec<Vec<f64>> = vec![vec![0.0], vec![1.0]];
        let hyper = GpHyperparams {
            lengthscales: vec![10.0],
            signal_variance: 1e-12,
            noise_variance: 1e-12,
        };
        let a = GpModel::with_hyperparams(&xs, &[5.0, 5.0 + 1e-9], hyper.clone(), None).unwrap();
        let b = GpModel::with_hyperparams(&xs, &[5.0, 5.0 + 1e-9], hyper, None).unwrap();
        let ctx = EhviContext::new(&[vec![1.0, 1.0]], &[10.0, 10.0], 256, 1).unwrap();
        let e = acquisition_ehvi(&[a, b], &ctx, &[0.5]);
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn degenerate_posterior_gives_the_deterministic_gain() {
        let xs: Vec<Vec<f64>> = vec![vec![0.0], vec![1.0]];
        let a = GpModel::fit(&xs, &[0.5, 0.5], &Default::default()).unwrap();
        let b = GpModel::fit(&xs, &[0.5, 0.5], &Default::default()).unwrap();
        assert!(a.is_degenerate());
        let ctx = EhviContext::new(&[vec![1.0, 2.0], vec![2.0, 1.0]], &[3.0, 3.0], 512, 1).unwrap();
        let e = acquisition_ehvi(&[a, b], &ctx, &[0.3]);
        // HV goes from 3 to 2.5 * 2.5 = 6.25.
        assert!((e.value - 3.25).abs() < 1e-3, "{}", e.value);
    }

    #[test]
    fn proposal_finds_the_single_peak() {
        // Training points leave one gap around 0.6 next to the lowest value.
        let xs = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.75, 0.85, 0.95, 1.0];
        let ys: Vec<f64> = xs.iter().map(|x| (x - 0.62) * (x - 0.62) * 4.0).collect();
        let g = model_1d(&xs, &ys, 0.15);
        let models = [g];
        let best = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let ctx = EhviContext::new(&[vec![best]], &[10.0], 2048, 5).unwrap();
        let space = DesignSpace::new(vec![[0.0, 1.0]]).unwrap();
        let (peak, _) = (0..=10_000)
            .map(|i| {
                let x = i as f64 / 10_000.0;
                (x, acquisition_ehvi(&models, &ctx, &[x]).value)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!(peak > 0.5 && peak < 0.75, "peak {peak}");
        let cfg = OptimizerConfig::new(vec![Sense::Minimize]);
        let evaluated: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x]).collect();
        let p = propose_next(&models, &ctx, &space, &evaluated, &cfg, 3).unwrap();
        assert!(!p.fallback);
        assert!((p.x[0] - peak).abs() < 1e-2, "proposal {} vs peak {peak}", p.x[0]);
    }

    #[test]
    fn flat_acquisition_still_proposes_a_fresh_point() {
        let xs: Vec<Vec<f64>> = vec![vec![0.2, 0.2], vec![0.8, 0.8]];
        let a = GpModel::fit(&xs, &[4.0, 4.0], &Default::default()).unwrap();
        let b = GpModel::fit(&xs, &[4.0, 4.0], &Default::default()).unwrap();
        let ctx = EhviContext::new(&[vec![0.0, 0.0]], &[5.0, 5.0], 64, 1).unwrap();
        let space = DesignSpace::new(vec![[0.0, 1.0], [0.0, 1.0]]).unwrap();
        let cfg = OptimizerConfig::new(vec![Sense::Minimize; 2]);
        let p = propose_next(&[a, b], &ctx, &space, &xs, &cfg, 4).unwrap();
        assert!(p.fallback);
        assert!(space.contains(&p.x));
        assert!(xs.iter().all(|e| distance(e, &p.x) > DUPLICATE_DISTANCE));
    }

    #[test]
    fn evaluated_points_are_not_proposed_again() {
        let xs = [0.0, 0.3, 0.7, 1.0];
        let ys = [1.0, 0.0, 0.0, 1.0];
        let g = model_1d(&xs, &ys, 0.3);
        let ctx = EhviContext::new(&[vec![0.0]], &[2.0], 256, 2).unwrap();
        let space = DesignSpace::new(vec![[0.0, 1.0]]).unwrap();
        let mut cfg = OptimizerConfig::new(vec![Sense::Minimize]);
        cfg.acq_restarts = 4;
        let models = [g];
        let first = propose_next(&models, &ctx, &space, &[], &cfg, 8).unwrap();
        let again = propose_next(&models, &ctx, &space, &[first.x.clone()], &cfg, 8).unwrap();
        assert!(distance(&first.x, &again.x) > DUPLICATE_DISTANCE);
    }

    #[test]
    fn ehvi_is_non_negative_and_reproducible() {
        let xs = [0.0, 0.5, 1.0];
        let g1 = model_1d(&xs, &[0.0, 1.0, 2.0], 0.4);
        let g2 = model_1d(&xs, &[2.0, 1.0, 0.0], 0.4);
        let obs = vec![vec![0.0, 2.0], vec![1.0, 1.0], vec![2.0, 0.0]];
        let ctx = EhviContext::new(&obs, &[2.2, 2.2], 512, 3).unwrap();
        let models = [g1, g2];
        for i in 0..50 {
            let x = [i as f64 / 49.0];
            let a = acquisition_ehvi(&models, &ctx, &x);
            assert!(a.value >= 0.0);
            assert_eq!(a, acquisition_ehvi(&models, &ctx, &x));
        }
    }
}
