//! Explicit Runge-Kutta integration with output on a prescribed time grid.
//!
//! Two methods are provided: classic fixed-step RK4 and the adaptive
//! Dormand-Prince 5(4) pair. Steps are truncated so that every requested grid
//! time is hit exactly, which keeps reported timestamps bit-identical to the
//! request and makes the hourly decision grid of the seed-train independent of
//! step-size history.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegratorError {
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid output grid: {0}")]
    InvalidGrid(String),
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("component {component} became negative ({value:e}) at t = {t}")]
    NegativeState { component: usize, value: f64, t: f64 },
    #[error("exceeded {0} steps")]
    TooManySteps(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4Fixed,
    Rk45Adaptive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Initial step (adaptive) or fixed step (RK4), h.
    pub h_init: f64,
    pub rel_tol: f64,
    /// Absolute tolerance per state component; a single entry is broadcast.
    pub abs_tol: Vec<f64>,
    pub h_max: f64,
    /// Clamp tiny negative components to zero after each step and abort on
    /// larger ones.
    #[serde(default = "default_true")]
    pub non_negative: bool,
}

fn default_true() -> bool {
    true
}

/// Maximum number of accepted plus rejected steps per call.
const MAX_STEPS: usize = 10_000_000;

/// Relative size below which negative components are rounding noise.
const NEGATIVE_SLACK: f64 = 1e-9;

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::Rk45Adaptive,
            h_init: 0.1,
            rel_tol: 1e-8,
            abs_tol: vec![1e-10],
            h_max: 1.0,
            non_negative: true,
        }
    }
}

impl IntegratorConfig {
    /// Tolerances suited to the culture state (cells/L, mmol/L, mg/L, L).
    pub fn culture_default() -> Self {
        Self {
            abs_tol: vec![1.0, 1.0, 1e-9, 1e-9, 1e-9, 1e-9, 1e-9, 1e-12],
            ..Self::default()
        }
    }

    pub fn validate(&self, dim: usize) -> Result<(), IntegratorError> {
        let bad = |msg: String| Err(IntegratorError::InvalidConfig(msg));
        if !(self.h_init > 0.0 && self.h_init.is_finite()) {
            return bad(format!("h_init must be positive, got {}", self.h_init));
        }
        if !(self.h_max > 0.0 && self.h_max.is_finite()) {
            return bad(format!("h_max must be positive, got {}", self.h_max));
        }
        if self.h_init > self.h_max {
            return bad(format!("h_init {} exceeds h_max {}", self.h_init, self.h_max));
        }
        if !(self.rel_tol > 0.0) {
            return bad(format!("rel_tol must be positive, got {}", self.rel_tol));
        }
        if self.abs_tol.len() != 1 && self.abs_tol.len() != dim {
            return bad(format!(
                "abs_tol has {} entries, expected 1 or {dim}",
                self.abs_tol.len()
            ));
        }
        if self.abs_tol.iter().any(|a| !(*a > 0.0)) {
            return bad("abs_tol entries must be positive".into());
        }
        Ok(())
    }

    fn abs_tol_at(&self, i: usize) -> f64 {
        if self.abs_tol.len() == 1 {
            self.abs_tol[0]
        } else {
            self.abs_tol[i]
        }
    }
}

/// States sampled at the requested grid times.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<const N: usize> {
    pub times: Vec<f64>,
    pub states: Vec<[f64; N]>,
    /// State at `t_end`.
    pub end: [f64; N],
    pub stats: Stats,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

/// A right-hand side whose discrete switches, if any, are held fixed over
/// each step so that it is smooth within the step.
pub trait OdeSystem<const N: usize> {
    fn rhs(&mut self, t: f64, y: &[f64; N], dy: &mut [f64; N]);

    /// Fixes the switches for a step starting at `(t, y)`. Returns whether
    /// they changed since the previous call.
    fn latch(&mut self, _t: f64, _y: &[f64; N]) -> bool {
        false
    }
}

struct Plain<F>(F);

impl<const N: usize, F: FnMut(f64, &[f64; N], &mut [f64; N])> OdeSystem<N> for Plain<F> {
    fn rhs(&mut self, t: f64, y: &[f64; N], dy: &mut [f64; N]) {
        (self.0)(t, y, dy)
    }
}

/// Integrates `dy/dt = rhs(t, y)` from `(t0, y0)` to `t_end`, returning states at
/// every time in `grid`.
pub fn integrate<const N: usize, F>(
    rhs: F,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    cfg: &IntegratorConfig,
    grid: &[f64],
) -> Result<Trajectory<N>, IntegratorError>
where
    F: FnMut(f64, &[f64; N], &mut [f64; N]),
{
    integrate_system(Plain(rhs), t0, y0, t_end, cfg, grid)
}

/// [`integrate`] for a system with switches, latched at the start of every step.
pub fn integrate_system<const N: usize, S: OdeSystem<N>>(
    mut sys: S,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    cfg: &IntegratorConfig,
    grid: &[f64],
) -> Result<Trajectory<N>, IntegratorError> {
    cfg.validate(N)?;
    if !(t_end >= t0) {
        return Err(IntegratorError::InvalidGrid(format!(
            "t_end {t_end} precedes t0 {t0}"
        )));
    }
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(IntegratorError::InvalidGrid("grid must be sorted".into()));
    }
    if let (Some(&first), Some(&last)) = (grid.first(), grid.last()) {
        if first < t0 || last > t_end {
            return Err(IntegratorError::InvalidGrid(format!(
                "grid [{first}, {last}] outside [{t0}, {t_end}]"
            )));
        }
    }

    let mut solver = Solver {
        cfg,
        stats: Stats::default(),
        scale: y0.map(|v| v.abs().max(1.0)),
    };
    let mut states = Vec::with_capacity(grid.len());
    let mut t = t0;
    let mut y = y0;
    let mut h = cfg.h_init.min(cfg.h_max);
    // Cached derivative at (t, y) for the FSAL property of Dormand-Prince.
    let mut k1: Option<[f64; N]> = None;

    let mut next = 0;
    while next < grid.len() && grid[next] == t {
        states.push(y);
        next += 1;
    }

    // Stops are the grid times after t0 followed by t_end.
    let mut stops = grid[next..].iter().copied().chain(std::iter::once(t_end));
    let mut stop = stops.next();
    while let Some(target) = stop {
        while t < target {
            let remaining = target - t;
            let (step, lands) = if h * 1.01 >= remaining {
                (remaining, true)
            } else {
                (h, false)
            };
            if sys.latch(t, &y) {
                k1 = None;
            }
            match cfg.method {
                Method::Rk4Fixed => {
                    y = solver.rk4_step(&mut sys, t, &y, step)?;
                    t = if lands { target } else { t + step };
                }
                Method::Rk45Adaptive => {
                    let (accepted, y_new, k_end, h_next) =
                        solver.dopri_step(&mut sys, t, &y, step, k1.take())?;
                    if accepted && solver.overshoots(&y_new) {
                        // Retry with the step cut where the first component
                        // crosses zero, aiming just inside the projection slack.
                        solver.stats.accepted -= 1;
                        solver.stats.rejected += 1;
                        h = step * solver.crossing_fraction(&y, &y_new).clamp(1e-3, 0.9);
                        if h < 1e-12 * t.abs().max(1.0) {
                            let (component, value) = y_new
                                .iter()
                                .copied()
                                .enumerate()
                                .min_by(|a, b| a.1.total_cmp(&b.1))
                                .expect("state is not empty");
                            return Err(IntegratorError::NegativeState { component, value, t: t + step });
                        }
                        continue;
                    }
                    if accepted {
                        y = y_new;
                        t = if lands { target } else { t + step };
                        k1 = Some(k_end);
                        // Do not let a truncated landing step shrink the controller.
                        h = if lands { h.max(h_next).min(cfg.h_max) } else { h_next };
                    } else {
                        k1 = Some(k_end);
                        h = h_next;
                        let floor = 1e-12 * t.abs().max(1.0);
                        if h < floor {
                            return Err(IntegratorError::StepSizeUnderflow { t, h });
                        }
                        continue;
                    }
                }
            }
            if solver.project(&mut y, t)? {
                k1 = None;
            }
            if solver.stats.accepted + solver.stats.rejected > MAX_STEPS {
                return Err(IntegratorError::TooManySteps(MAX_STEPS));
            }
        }
        stop = stops.next();
        // Record every grid entry equal to the time just reached.
        while next < grid.len() && grid[next] == t {
            states.push(y);
            next += 1;
        }
    }

    Ok(Trajectory {
        times: grid.to_vec(),
        states,
        end: y,
        stats: solver.stats,
    })
}

struct Solver<'a, const N: usize> {
    cfg: &'a IntegratorConfig,
    stats: Stats,
    scale: [f64; N],
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th and embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

impl<const N: usize> Solver<'_, N> {
    fn eval<S: OdeSystem<N>>(&mut self, sys: &mut S, t: f64, y: &[f64; N]) -> Result<[f64; N], IntegratorError> {
        let mut dy = [0.0; N];
        sys.rhs(t, y, &mut dy);
        self.stats.rhs_evals += 1;
        if dy.iter().any(|d| !d.is_finite()) {
            return Err(IntegratorError::NonFiniteState { t });
        }
        if self.cfg.non_negative {
            // A component resting at zero may not be pushed below it, otherwise
            // zero-order consumption chatters around zero with tiny steps.
            for i in 0..N {
                if y[i] <= NEGATIVE_SLACK * self.scale[i] {
                    dy[i] = dy[i].max(0.0);
                }
            }
        }
        Ok(dy)
    }

    fn rk4_step<S: OdeSystem<N>>(
        &mut self,
        rhs: &mut S,
        t: f64,
        y: &[f64; N],
        h: f64,
    ) -> Result<[f64; N], IntegratorError>
    {
        let k1 = self.eval(rhs, t, y)?;
        let k2 = self.eval(rhs, t + h / 2.0, &axpy(y, &[(h / 2.0, &k1)]))?;
        let k3 = self.eval(rhs, t + h / 2.0, &axpy(y, &[(h / 2.0, &k2)]))?;
        let k4 = self.eval(rhs, t + h, &axpy(y, &[(h, &k3)]))?;
        self.stats.accepted += 1;
        Ok(axpy(
            y,
            &[(h / 6.0, &k1), (h / 3.0, &k2), (h / 3.0, &k3), (h / 6.0, &k4)],
        ))
    }

    /// One attempted Dormand-Prince step. Returns (accepted, y_new, derivative
    /// to reuse at the next attempt, proposed next step size).
    fn dopri_step<S: OdeSystem<N>>(
        &mut self,
        rhs: &mut S,
        t: f64,
        y: &[f64; N],
        h: f64,
        k1: Option<[f64; N]>,
    ) -> Result<(bool, [f64; N], [f64; N], f64), IntegratorError>
    {
        let k1 = match k1 {
            Some(k) => k,
            None => self.eval(rhs, t, y)?,
        };
        let k2 = self.eval(rhs, t + C2 * h, &axpy(y, &[(h * A21, &k1)]))?;
        let k3 = self.eval(rhs, t + C3 * h, &axpy(y, &[(h * A31, &k1), (h * A32, &k2)]))?;
        let k4 = self.eval(
            rhs,
            t + C4 * h,
            &axpy(y, &[(h * A41, &k1), (h * A42, &k2), (h * A43, &k3)]),
        )?;
        let k5 = self.eval(
            rhs,
            t + C5 * h,
            &axpy(
                y,
                &[(h * A51, &k1), (h * A52, &k2), (h * A53, &k3), (h * A54, &k4)],
            ),
        )?;
        let k6 = self.eval(
            rhs,
            t + h,
            &axpy(
                y,
                &[
                    (h * A61, &k1),
                    (h * A62, &k2),
                    (h * A63, &k3),
                    (h * A64, &k4),
                    (h * A65, &k5),
                ],
            ),
        )?;
        let y_new = axpy(
            y,
            &[
                (h * B1, &k1),
                (h * B3, &k3),
                (h * B4, &k4),
                (h * B5, &k5),
                (h * B6, &k6),
            ],
        );
        let k7 = self.eval(rhs, t + h, &y_new)?;

        let mut err: f64 = 0.0;
        for i in 0..N {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let tol = self.cfg.abs_tol_at(i) + self.cfg.rel_tol * y[i].abs().max(y_new[i].abs());
            err = err.max(e.abs() / tol);
        }
        if !err.is_finite() {
            return Err(IntegratorError::NonFiniteState { t });
        }

        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        let h_next = (h * factor).min(self.cfg.h_max);
        if err <= 1.0 {
            self.stats.accepted += 1;
            Ok((true, y_new, k7, h_next))
        } else {
            self.stats.rejected += 1;
            Ok((false, y_new, k1, h_next.min(h)))
        }
    }

    /// Whether a trial state falls below zero by more than the rounding slack.
    fn overshoots(&self, y: &[f64; N]) -> bool {
        self.cfg.non_negative
            && y.iter().zip(&self.scale).any(|(v, s)| *v < -NEGATIVE_SLACK * s)
    }

    fn crossing_fraction(&self, y0: &[f64; N], y1: &[f64; N]) -> f64 {
        let mut theta: f64 = 1.0;
        for i in 0..N {
            let target = -0.5 * NEGATIVE_SLACK * self.scale[i];
            if y1[i] < target && y0[i] > y1[i] {
                theta = theta.min((y0[i] - target) / (y0[i] - y1[i]));
            }
        }
        theta
    }

    /// Returns whether any component was clamped.
    fn project(&mut self, y: &mut [f64; N], t: f64) -> Result<bool, IntegratorError> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(IntegratorError::NonFiniteState { t });
        }
        if !self.cfg.non_negative {
            return Ok(false);
        }
        let mut clamped = false;
        for i in 0..N {
            if y[i] < 0.0 {
                if y[i] >= -NEGATIVE_SLACK * self.scale[i] {
                    y[i] = 0.0;
                    clamped = true;
                } else {
                    return Err(IntegratorError::NegativeState {
                        component: i,
                        value: y[i],
                        t,
                    });
                }
            }
            self.scale[i] = self.scale[i].max(y[i].abs());
        }
        Ok(clamped)
    }
}

fn axpy<const N: usize>(y: &[f64; N], terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (a, k) in terms {
        for i in 0..N {
            out[i] += a * k[i];
        }
    }
    out
}

/// Integer-hour grid `start, start + 1, ..., end` (inclusive).
pub fn hourly_grid(start: f64, end: f64) -> Vec<f64> {
    let first = start.ceil() as i64;
    let last = end.floor() as i64;
    (first..=last).map(|h| h as f64).collect()
}
