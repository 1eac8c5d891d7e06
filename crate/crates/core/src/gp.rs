//! Gaussian-process regression with a squared-exponential ARD kernel.
//!
//! Inputs are mapped affinely to the unit box and outputs standardized before
//! fitting; hyperparameters live in those normalized units. The prior mean is
//! zero on the standardized outputs.

use argmin::core::{CostFunction, Error as ArgminError, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{rng_for, STREAM_GP};

pub const LENGTHSCALE_BOUNDS: [f64; 2] = [1e-2, 1e2];
pub const SIGNAL_VARIANCE_BOUNDS: [f64; 2] = [1e-4, 1e4];
pub const NOISE_VARIANCE_BOUNDS: [f64; 2] = [1e-8, 1.0];

/// Diagonal jitter tried in turn when the Gram matrix does not factorize.
const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("need at least two distinct training points")]
    TooFewPoints,
    #[error("point {index} has {got} coordinates, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("{0} training inputs but {1} outputs")]
    LengthMismatch(usize, usize),
    #[error("non-finite training data")]
    NonFinite,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("Gram matrix is not positive definite even with jitter")]
    NotPositiveDefinite,
    #[error("hyperparameter search failed: {0}")]
    Optimizer(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl GpHyperparams {
    pub fn validate(&self, dim: usize) -> Result<(), GpError> {
        if self.lengthscales.len() != dim {
            return Err(GpError::InvalidHyperparams(format!(
                "{} lengthscales for {dim} inputs",
                self.lengthscales.len()
            )));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !self.lengthscales.iter().all(|&l| positive(l))
            || !positive(self.signal_variance)
            || !positive(self.noise_variance)
        {
            return Err(GpError::InvalidHyperparams("all values must be positive".into()));
        }
        Ok(())
    }
}

/// `σ_f² exp(-½ Σ (a_d - b_d)² / ℓ_d²)`.
pub fn kernel_se(a: &[f64], b: &[f64], hyper: &GpHyperparams) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(&hyper.lengthscales)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    hyper.signal_variance * (-0.5 * r2).exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpOptions {
    /// Number of local searches; the first always starts from the same point.
    pub restarts: usize,
    /// Share one lengthscale across all inputs.
    pub isotropic: bool,
    pub seed: u64,
    /// Raw input box mapped to the unit box; the data range is used if absent.
    pub input_bounds: Option<Vec<[f64; 2]>>,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            isotropic: false,
            seed: 0,
            input_bounds: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GpModel {
    x_raw: Vec<Vec<f64>>,
    y_raw: Vec<f64>,
    x_train: Vec<Vec<f64>>,
    hyper: GpHyperparams,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
    lower: Vec<f64>,
    scale: Vec<f64>,
    y_mean: f64,
    y_sd: f64,
    degenerate: bool,
    lml: f64,
}

/// Audit record of a fitted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpDump {
    /// Hyperparameters in normalized units.
    pub hyperparams: GpHyperparams,
    /// Hyperparameters in raw input and output units.
    pub hyperparams_raw: GpHyperparams,
    pub input_lower: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_mean: f64,
    pub output_sd: f64,
    pub jitter: f64,
    pub degenerate: bool,
    pub log_marginal_likelihood: f64,
    pub x_train: Vec<Vec<f64>>,
    pub y_train: Vec<f64>,
}

struct Prepared {
    x: Vec<Vec<f64>>,
    y: DVector<f64>,
    lower: Vec<f64>,
    scale: Vec<f64>,
    y_mean: f64,
    y_sd: f64,
    degenerate: bool,
}

fn prepare(x: &[Vec<f64>], y: &[f64], bounds: Option<&[[f64; 2]]>) -> Result<Prepared, GpError> {
    if x.len() != y.len() {
        return Err(GpError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(GpError::TooFewPoints);
    }
    let dim = x[0].len();
    if dim == 0 {
        return Err(GpError::DimensionMismatch {
            index: 0,
            expected: 1,
            got: 0,
        });
    }
    for (index, p) in x.iter().enumerate() {
        if p.len() != dim {
            return Err(GpError::DimensionMismatch {
                index,
                expected: dim,
                got: p.len(),
            });
        }
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(GpError::NonFinite);
    }
    if x.iter().all(|p| p == &x[0]) {
        return Err(GpError::TooFewPoints);
    }

    let (lower, scale): (Vec<f64>, Vec<f64>) = match bounds {
        Some(b) => {
            if b.len() != dim {
                return Err(GpError::DimensionMismatch {
                    index: 0,
                    expected: dim,
                    got: b.len(),
                });
            }
            b.iter().map(|&[lo, hi]| (lo, hi - lo)).unzip()
        }
        None => (0..dim)
            .map(|d| {
                let lo = x.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min);
                let hi = x.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max);
                (lo, hi - lo)
            })
            .unzip(),
    };
    let scale: Vec<f64> = scale.into_iter().map(|s| if s > 0.0 { s } else { 1.0 }).collect();
    let xn = x
        .iter()
        .map(|p| {
            p.iter()
                .zip(lower.iter().zip(&scale))
                .map(|(v, (lo, s))| (v - lo) / s)
                .collect()
        })
        .collect();

    let n = y.len() as f64;
    let y_mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / (n - 1.0);
    let degenerate = !(var.sqrt() > 1e-12 * y_mean.abs().max(1.0));
    let y_sd = if degenerate { 1.0 } else { var.sqrt() };
    let ys = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_sd));
    Ok(Prepared {
        x: xn,
        y: ys,
        lower,
        scale,
        y_mean,
        y_sd,
        degenerate,
    })
}

fn gram(x: &[Vec<f64>], hyper: &GpHyperparams) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel_se(&x[i], &x[j], hyper);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += hyper.noise_variance;
    }
    k
}

fn factorize(mut k: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok((c, 0.0));
    }
    let n = k.nrows();
    let mut added = 0.0;
    for &jitter in &JITTER_LADDER {
        for i in 0..n {
            k[(i, i)] += jitter - added;
        }
        added = jitter;
        if let Some(c) = Cholesky::new(k.clone()) {
            return Ok((c, jitter));
        }
    }
    Err(GpError::NotPositiveDefinite)
}

struct Factored {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
    lml: f64,
}

fn factor_and_score(x: &[Vec<f64>], y: &DVector<f64>, hyper: &GpHyperparams) -> Result<Factored, GpError> {
    let (chol, jitter) = factorize(gram(x, hyper))?;
    let alpha = chol.solve(y);
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().take(y.len()).map(|d| d.ln()).sum();
    let lml = -0.5 * y.dot(&alpha) - log_det_half - 0.5 * y.len() as f64 * LN_2PI;
    Ok(Factored {
        chol,
        alpha,
        jitter,
        lml,
    })
}

/// Log-space parameter vector: lengthscales (one if isotropic), σ_f², σ_n².
struct Likelihood<'a> {
    x: &'a [Vec<f64>],
    y: &'a DVector<f64>,
    dim: usize,
    isotropic: bool,
}

impl Likelihood<'_> {
    fn n_params(&self) -> usize {
        if self.isotropic {
            3
        } else {
            self.dim + 2
        }
    }

    fn bounds(&self, i: usize) -> [f64; 2] {
        let b = if i + 2 < self.n_params() {
            LENGTHSCALE_BOUNDS
        } else if i + 2 == self.n_params() {
            SIGNAL_VARIANCE_BOUNDS
        } else {
            NOISE_VARIANCE_BOUNDS
        };
        [b[0].ln(), b[1].ln()]
    }

    fn clamp(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let [lo, hi] = self.bounds(i);
                t.clamp(lo, hi)
            })
            .collect()
    }

    fn hyper(&self, theta: &[f64]) -> GpHyperparams {
        let m = self.n_params();
        let within = |t: f64, b: [f64; 2]| t.exp().clamp(b[0], b[1]);
        let lengthscales = if self.isotropic {
            vec![within(theta[0], LENGTHSCALE_BOUNDS); self.dim]
        } else {
            theta[..self.dim].iter().map(|&t| within(t, LENGTHSCALE_BOUNDS)).collect()
        };
        GpHyperparams {
            lengthscales,
            signal_variance: within(theta[m - 2], SIGNAL_VARIANCE_BOUNDS),
            noise_variance: within(theta[m - 1], NOISE_VARIANCE_BOUNDS),
        }
    }
}

impl CostFunction for Likelihood<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, theta: &Vec<f64>) -> Result<f64, ArgminError> {
        let clamped = self.clamp(theta);
        let excess: f64 = theta.iter().zip(&clamped).map(|(a, b)| (a - b).powi(2)).sum();
        let nll = match factor_and_score(self.x, self.y, &self.hyper(&clamped)) {
            Ok(f) if f.lml.is_finite() => -f.lml,
            _ => 1e10,
        };
        Ok(nll + 1e3 * excess)
    }
}

fn local_search(problem: Likelihood<'_>, start: Vec<f64>) -> Result<(Vec<f64>, f64), GpError> {
    let m = start.len();
    let mut simplex = vec![start.clone()];
    for i in 0..m {
        let mut v = start.clone();
        v[i] += 1.0;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-9)
        .map_err(|e| GpError::Optimizer(e.to_string()))?;
    let res = Executor::new(problem, solver)
        .configure(|s| s.max_iters(150 * m as u64 + 200))
        .run()
        .map_err(|e| GpError::Optimizer(e.to_string()))?;
    let state = res.state();
    let best = state
        .get_best_param()
        .cloned()
        .ok_or_else(|| GpError::Optimizer("no parameters evaluated".into()))?;
    Ok((best, state.get_best_cost()))
}

impl GpModel {
    /// Fits hyperparameters by maximizing the log marginal likelihood.
    pub fn fit(x: &[Vec<f64>], y: &[f64], opts: &GpOptions) -> Result<GpModel, GpError> {
        let prep = prepare(x, y, opts.input_bounds.as_deref())?;
        let dim = prep.x[0].len();
        if prep.degenerate {
            let hyper = GpHyperparams {
                lengthscales: vec![1.0; dim],
                signal_variance: SIGNAL_VARIANCE_BOUNDS[0],
                noise_variance: NOISE_VARIANCE_BOUNDS[0],
            };
            return Self::assemble(x, y, prep, hyper);
        }
        let problem = || Likelihood {
            x: &prep.x,
            y: &prep.y,
            dim,
            isotropic: opts.isotropic,
        };
        let m = problem().n_params();
        let mut rng = rng_for(opts.seed, STREAM_GP);
        let mut best: Option<(Vec<f64>, f64)> = None;
        for r in 0..opts.restarts.max(1) {
            let start: Vec<f64> = if r == 0 {
                let mut s = vec![0.5f64.ln(); m];
                s[m - 2] = 0.0;
                s[m - 1] = 1e-3f64.ln();
                s
            } else {
                (0..m)
                    .map(|i| {
                        let range = if i + 2 < m {
                            [0.05f64, 3.0]
                        } else if i + 2 == m {
                            [0.1, 10.0]
                        } else {
                            [1e-6, 0.1]
                        };
                        rng.random_range(range[0].ln()..range[1].ln())
                    })
                    .collect()
            };
            let (theta, cost) = local_search(problem(), start)?;
            if best.as_ref().is_none_or(|(_, c)| cost < *c) {
                best = Some((theta, cost));
            }
        }
        let (theta, _) = best.expect("at least one restart");
        let hyper = problem().hyper(&problem().clamp(&theta));
        Self::assemble(x, y, prep, hyper)
    }

    /// Conditions on the data with fixed hyperparameters in normalized units.
    pub fn with_hyperparams(
        x: &[Vec<f64>],
        y: &[f64],
        hyper: GpHyperparams,
        input_bounds: Option<&[[f64; 2]]>,
    ) -> Result<GpModel, GpError> {
        let prep = prepare(x, y, input_bounds)?;
        hyper.validate(prep.x[0].len())?;
        Self::assemble(x, y, prep, hyper)
    }

    fn assemble(x: &[Vec<f64>], y: &[f64], prep: Prepared, hyper: GpHyperparams) -> Result<GpModel, GpError> {
        let f = factor_and_score(&prep.x, &prep.y, &hyper)?;
        Ok(GpModel {
            x_raw: x.to_vec(),
            y_raw: y.to_vec(),
            x_train: prep.x,
            hyper,
            chol: f.chol,
            alpha: f.alpha,
            jitter: f.jitter,
            lower: prep.lower,
            scale: prep.scale,
            y_mean: prep.y_mean,
            y_sd: prep.y_sd,
            degenerate: prep.degenerate,
            lml: f.lml,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.y_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_raw.is_empty()
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn hyperparams_raw(&self) -> GpHyperparams {
        let s2 = self.y_sd * self.y_sd;
        GpHyperparams {
            lengthscales: self.hyper.lengthscales.iter().zip(&self.scale).map(|(l, s)| l * s).collect(),
            signal_variance: self.hyper.signal_variance * s2,
            noise_variance: self.hyper.noise_variance * s2,
        }
    }

    /// True when all training outputs were equal; the model then predicts
    /// that constant with a tiny variance.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Log marginal likelihood of the standardized outputs.
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.scale))
            .map(|(v, (lo, s))| (v - lo) / s)
            .collect()
    }

    /// Mean and variance of the latent function at raw input `x`, raw output units.
    pub fn predict_latent(&self, x: &[f64]) -> (f64, f64) {
        assert_eq!(x.len(), self.dim(), "prediction point dimension");
        let xn = self.normalize(x);
        let ks = DVector::from_iterator(
            self.x_train.len(),
            self.x_train.iter().map(|p| kernel_se(&xn, p, &self.hyper)),
        );
        let mean = ks.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&ks)
            .expect("Cholesky factor has a positive diagonal");
        let var = (self.hyper.signal_variance - v.norm_squared()).max(0.0);
        (
            self.y_mean + self.y_sd * mean,
            var * self.y_sd * self.y_sd,
        )
    }

    /// Mean and variance of a noisy observation at raw input `x`, raw output units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let (m, v) = self.predict_latent(x);
        (m, v + self.hyper.noise_variance * self.y_sd * self.y_sd)
    }

    pub fn dump(&self) -> GpDump {
        GpDump {
            hyperparams: self.hyper.clone(),
            hyperparams_raw: self.hyperparams_raw(),
            input_lower: self.lower.clone(),
            input_scale: self.scale.clone(),
            output_mean: self.y_mean,
            output_sd: self.y_sd,
            jitter: self.jitter,
            degenerate: self.degenerate,
            log_marginal_likelihood: self.lml,
            x_train: self.x_raw.clone(),
            y_train: self.y_raw.clone(),
        }
    }

    #[cfg(test)]
    fn standardized_outputs(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.y_raw.iter().map(|v| (v - self.y_mean) / self.y_sd))
    }
}
