//! Mechanistic growth and metabolism model for CHO cell cultures.
//!
//! The model tracks viable and total cell density, the two main substrates
//! (glucose, glutamine), the two main by-products (lactate, ammonia), product
//! titer and culture volume. Cell growth follows double Monod kinetics with an
//! optional linear lag correction, cell death increases under starvation, and
//! all balances carry dilution terms for fed-batch operation.

use crate::integrator::OdeSystem;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of integrated state components (time is carried separately).
pub const STATE_DIM: usize = 8;

/// Denominator floor for the lactate and ammonia rate expressions, mmol/L.
pub const METABOLITE_FLOOR: f64 = 1e-6;

/// Names of the integrated state components, in array order.
pub const STATE_NAMES: [&str; STATE_DIM] =
    ["xv", "xt", "c_glc", "c_gln", "c_lac", "c_amm", "c_titer", "v"];

/// Units of the integrated state components, in array order.
pub const STATE_UNITS: [&str; STATE_DIM] = [
    "cells/L", "cells/L", "mmol/L", "mmol/L", "mmol/L", "mmol/L", "mg/L", "L",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KineticsError {
    #[error("invalid model parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("invalid culture state: {0}")]
    InvalidState(String),
    #[error("invalid feed schedule: {0}")]
    InvalidFeed(String),
    #[error("non-finite derivative at t = {t} h (volume {volume} L)")]
    NonFiniteDerivative { t: f64, volume: f64 },
}

/// Kinetic constants of the growth model.
///
/// Units: rates in 1/h, affinities in mmol/L, cell-specific rates in
/// mmol/(cell h) (titer: mg/(cell h)), yields in mmol/mmol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParameters {
    /// Maximum specific growth rate, 1/h.
    pub mu_max: f64,
    /// Minimum specific death rate, 1/h.
    pub mu_d_min: f64,
    /// Starvation-driven additional death rate, 1/h.
    pub mu_d_max: f64,
    /// Monod constant of glucose for growth and death, mmol/L.
    pub k_s_glc: f64,
    /// Monod constant of glutamine for growth and death, mmol/L.
    pub k_s_gln: f64,
    /// Half-saturation constant of glucose uptake, mmol/L.
    pub k_glc: f64,
    /// Half-saturation constant of glutamine uptake, mmol/L.
    pub k_gln: f64,
    /// Maximum cell-specific glucose uptake, mmol/(cell h).
    pub q_glc_max: f64,
    /// Maximum cell-specific glutamine uptake, mmol/(cell h).
    pub q_gln_max: f64,
    /// Lactate production constant, mmol/mmol.
    pub y_lac_glc: f64,
    /// Ammonia production constant, mmol/mmol.
    pub y_amm_gln: f64,
    /// Maximum cell-specific lactate uptake, mmol/(cell h).
    pub q_lac_uptake_max: f64,
    /// Maximum cell-specific ammonia uptake, mmol/(cell h).
    pub q_amm_uptake_max: f64,
    /// Ammonia correction constant used while growth does not exceed death, dimensionless.
    pub k_amm: f64,
    /// Cell lysis constant, 1/h.
    pub k_lys: f64,
    /// Cell-specific product formation rate, mg/(cell h).
    pub q_titer_max: f64,
    /// Duration of the lag phase, h.
    pub t_lag: f64,
    /// Relative growth reduction at t = 0, dimensionless in [0, 1].
    pub a_lag: f64,
    /// Glucose level at or below which lactate is taken up, mmol/L.
    pub glc_switch_threshold: f64,
}

impl Default for ModelParameters {
    /// Reference parameter set.
    ///
    /// `mu_max` and `q_titer_max` are the published values for the industrial
    /// CHO line; every other constant is a typical CHO literature magnitude.
    fn default() -> Self {
        Self {
            mu_max: 0.029,
            mu_d_min: 0.001,
            mu_d_max: 0.04,
            k_s_glc: 0.2,
            k_s_gln: 0.05,
            k_glc: 1.0,
            k_gln: 0.3,
            q_glc_max: 1.0e-10,
            q_gln_max: 1.5e-11,
            y_lac_glc: 1.0,
            y_amm_gln: 0.8,
            q_lac_uptake_max: 5.0e-11,
            q_amm_uptake_max: 5.0e-12,
            k_amm: 0.0,
            k_lys: 0.01,
            q_titer_max: 3.9e-10,
            t_lag: 12.0,
            a_lag: 0.5,
            glc_switch_threshold: 0.5,
        }
    }
}

impl ModelParameters {
    pub fn validate(&self) -> Result<(), KineticsError> {
        let non_negative = [
            ("mu_max", self.mu_max),
            ("mu_d_min", self.mu_d_min),
            ("mu_d_max", self.mu_d_max),
            ("k_s_glc", self.k_s_glc),
            ("k_s_gln", self.k_s_gln),
            ("k_glc", self.k_glc),
            ("k_gln", self.k_gln),
            ("q_glc_max", self.q_glc_max),
            ("q_gln_max", self.q_gln_max),
            ("y_lac_glc", self.y_lac_glc),
            ("y_amm_gln", self.y_amm_gln),
            ("q_lac_uptake_max", self.q_lac_uptake_max),
            ("q_amm_uptake_max", self.q_amm_uptake_max),
            ("k_amm", self.k_amm),
            ("k_lys", self.k_lys),
            ("q_titer_max", self.q_titer_max),
            ("t_lag", self.t_lag),
            ("glc_switch_threshold", self.glc_switch_threshold),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(KineticsError::InvalidParameter {
                    name,
                    reason: format!("must be finite and >= 0, got {value}"),
                });
            }
        }
        if !(0.0..=1.0).contains(&self.a_lag) {
            return Err(KineticsError::InvalidParameter {
                name: "a_lag",
                reason: format!("must lie in [0, 1], got {}", self.a_lag),
            });
        }
        Ok(())
    }
}

/// Culture state at time `t` (h, time since inoculation of the current vessel).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CultureState {
    /// Time, h.
    pub t: f64,
    /// Viable cell density, cells/L.
    pub xv: f64,
    /// Total cell density, cells/L.
    pub xt: f64,
    /// Glucose, mmol/L.
    pub c_glc: f64,
    /// Glutamine, mmol/L.
    pub c_gln: f64,
    /// Lactate, mmol/L.
    pub c_lac: f64,
    /// Ammonia, mmol/L.
    pub c_amm: f64,
    /// Product titer, mg/L.
    pub c_titer: f64,
    /// Culture volume, L.
    pub v: f64,
}

impl CultureState {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.xv,
            self.xt,
            self.c_glc,
            self.c_gln,
            self.c_lac,
            self.c_amm,
            self.c_titer,
            self.v,
        ]
    }

    pub fn from_array(t: f64, y: &[f64; STATE_DIM]) -> Self {
        Self {
            t,
            xv: y[0],
            xt: y[1],
            c_glc: y[2],
            c_gln: y[3],
            c_lac: y[4],
            c_amm: y[5],
            c_titer: y[6],
            v: y[7],
        }
    }

    /// Viable fraction in percent; zero for an empty culture.
    pub fn viability_percent(&self) -> f64 {
        if self.xt > 0.0 {
            100.0 * self.xv / self.xt
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<(), KineticsError> {
        let y = self.to_array();
        if !self.t.is_finite() || y.iter().any(|c| !c.is_finite()) {
            return Err(KineticsError::InvalidState("non-finite component".into()));
        }
        if let Some(i) = y.iter().position(|&c| c < 0.0) {
            return Err(KineticsError::InvalidState(format!(
                "{} is negative ({})",
                STATE_NAMES[i], y[i]
            )));
        }
        if self.v <= 0.0 {
            return Err(KineticsError::InvalidState(format!(
                "volume must be positive, got {}",
                self.v
            )));
        }
        // Allow rounding slack on the total >= viable ordering.
        if self.xt < self.xv * (1.0 - 1e-12) {
            return Err(KineticsError::InvalidState(format!(
                "total cell density {} below viable cell density {}",
                self.xt, self.xv
            )));
        }
        Ok(())
    }
}

/// Flow rates and feed concentrations in effect over one time segment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedRates {
    /// Glucose feed flow, L/h.
    pub f_glc: f64,
    /// Glutamine feed flow, L/h.
    pub f_gln: f64,
    /// Medium feed flow, L/h.
    pub f_medium: f64,
    /// Sampling outflow, L/h.
    pub f_sample: f64,
    /// Glucose concentration of the glucose feed, mmol/L.
    pub c_glc_feed: f64,
    /// Glutamine concentration of the glutamine feed, mmol/L.
    pub c_gln_feed: f64,
    /// Glucose concentration of the medium feed, mmol/L.
    pub c_glc_medium: f64,
    /// Glutamine concentration of the medium feed, mmol/L.
    pub c_gln_medium: f64,
}

impl FeedRates {
    fn inflow(&self) -> f64 {
        self.f_glc + self.f_gln + self.f_medium
    }

    fn is_zero_flow(&self) -> bool {
        self.f_glc == 0.0 && self.f_gln == 0.0 && self.f_medium == 0.0 && self.f_sample == 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedSegment {
    /// Segment start, h. The segment lasts until the next segment starts.
    pub start: f64,
    #[serde(flatten)]
    pub rates: FeedRates,
}

/// Piecewise-constant feeding profile. An empty schedule is batch operation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedSchedule {
    pub segments: Vec<FeedSegment>,
}

impl FeedSchedule {
    pub fn batch() -> Self {
        Self::default()
    }

    pub fn new(segments: Vec<FeedSegment>) -> Result<Self, KineticsError> {
        let schedule = Self { segments };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<(), KineticsError> {
        for pair in self.segments.windows(2) {
            if !(pair[0].start < pair[1].start) {
                return Err(KineticsError::InvalidFeed(
                    "segment start times must be strictly increasing".into(),
                ));
            }
        }
        for seg in &self.segments {
            let r = &seg.rates;
            let all = [
                r.f_glc,
                r.f_gln,
                r.f_medium,
                r.f_sample,
                r.c_glc_feed,
                r.c_gln_feed,
                r.c_glc_medium,
                r.c_gln_medium,
            ];
            if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(KineticsError::InvalidFeed(format!(
                    "flows and concentrations must be finite and >= 0 (segment at {} h)",
                    seg.start
                )));
            }
        }
        Ok(())
    }

    pub fn is_batch(&self) -> bool {
        self.segments.iter().all(|s| s.rates.is_zero_flow())
    }

    /// Rates in effect at time `t`; zero before the first segment.
    pub fn at(&self, t: f64) -> FeedRates {
        self.segments
            .iter()
            .take_while(|s| s.start <= t)
            .last()
            .map(|s| s.rates)
            .unwrap_or_default()
    }
}

/// Cell-specific rates evaluated at one state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpecificRates {
    pub mu: f64,
    pub mu_d: f64,
    pub q_glc: f64,
    pub q_gln: f64,
    pub q_lac: f64,
    pub q_amm: f64,
    pub q_titer: f64,
}

fn monod(c: f64, k: f64) -> f64 {
    if c <= 0.0 {
        0.0
    } else {
        c / (c + k)
    }
}

/// Starvation factor K / (K + c), equal to one at zero concentration.
fn starvation(c: f64, k: f64) -> f64 {
    if k == 0.0 {
        if c <= 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        k / (k + c.max(0.0))
    }
}

/// Specific growth rate with lag correction, clamped at zero.
pub fn specific_growth_rate(state: &CultureState, p: &ModelParameters) -> f64 {
    let mut mu = p.mu_max * monod(state.c_glc, p.k_s_glc) * monod(state.c_gln, p.k_s_gln);
    if p.t_lag > 0.0 && state.t <= p.t_lag {
        mu -= (1.0 - state.t / p.t_lag) * p.a_lag * p.mu_max;
    }
    mu.max(0.0)
}

pub fn specific_death_rate(state: &CultureState, p: &ModelParameters) -> f64 {
    p.mu_d_min
        + p.mu_d_max * starvation(state.c_glc, p.k_s_glc) * starvation(state.c_gln, p.k_s_gln)
}

/// Branch of the ammonia uptake switch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AmmoniaCase {
    /// Glutamine above ammonia: no uptake term.
    GlutamineExcess,
    /// Growth outpaces death: ammonia is taken up.
    Uptake,
    /// Death dominates: the term is scaled by `-k_amm`.
    Decline,
}

/// Which branch of each rate switch applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Switches {
    pub lactate_uptake: bool,
    pub ammonia: AmmoniaCase,
}

impl Switches {
    pub fn at(state: &CultureState, p: &ModelParameters) -> Self {
        let mu = specific_growth_rate(state, p);
        let mu_d = specific_death_rate(state, p);
        Self {
            lactate_uptake: state.c_glc <= p.glc_switch_threshold,
            ammonia: if state.c_gln > state.c_amm {
                AmmoniaCase::GlutamineExcess
            } else if mu > mu_d {
                AmmoniaCase::Uptake
            } else {
                AmmoniaCase::Decline
            },
        }
    }
}

/// All cell-specific rates, including the lactate and ammonia switches.
pub fn uptake_and_production_rates(state: &CultureState, p: &ModelParameters) -> SpecificRates {
    rates_with_switches(state, p, Switches::at(state, p))
}

/// Rates with the switch branches given rather than read off the state.
pub fn rates_with_switches(state: &CultureState, p: &ModelParameters, sw: Switches) -> SpecificRates {
    let mu = specific_growth_rate(state, p);
    let mu_d = specific_death_rate(state, p);
    let q_glc = p.q_glc_max * monod(state.c_glc, p.k_glc);
    let q_gln = p.q_gln_max * monod(state.c_gln, p.k_gln);

    let growth_deficit = if p.mu_max > 0.0 {
        (p.mu_max - mu) / p.mu_max
    } else {
        0.0
    };

    let q_lac_uptake = if sw.lactate_uptake { p.q_lac_uptake_max } else { 0.0 };
    let q_lac = p.y_lac_glc * q_glc * state.c_glc.max(0.0) / state.c_lac.max(METABOLITE_FLOOR)
        - q_lac_uptake * growth_deficit;

    let k_amm_factor = match sw.ammonia {
        AmmoniaCase::GlutamineExcess => 0.0,
        AmmoniaCase::Uptake => 1.0,
        AmmoniaCase::Decline => -p.k_amm,
    };
    let q_amm = p.y_amm_gln * q_gln * state.c_gln.max(0.0) / state.c_amm.max(METABOLITE_FLOOR)
        - k_amm_factor * p.q_amm_uptake_max * growth_deficit;

    SpecificRates {
        mu,
        mu_d,
        q_glc,
        q_gln,
        q_lac,
        q_amm,
        q_titer: p.q_titer_max,
    }
}

/// Time derivatives of all state components, in [`STATE_NAMES`] order.
pub fn ode_rhs(
    state: &CultureState,
    p: &ModelParameters,
    feeds: &FeedSchedule,
) -> Result<[f64; STATE_DIM], KineticsError> {
    let mut dy = [0.0; STATE_DIM];
    rhs_with_rates(state, p, &feeds.at(state.t), &mut dy);
    if state.v <= 0.0 || dy.iter().any(|d| !d.is_finite()) {
        return Err(KineticsError::NonFiniteDerivative {
            t: state.t,
            volume: state.v,
        });
    }
    Ok(dy)
}

/// Batch right-hand side on the raw state array; used by the integrator.
pub fn batch_rhs(t: f64, y: &[f64; STATE_DIM], p: &ModelParameters, dy: &mut [f64; STATE_DIM]) {
    rhs_with_rates(&CultureState::from_array(t, y), p, &FeedRates::default(), dy);
}

/// Batch culture for [`integrate_system`](crate::integrator::integrate_system): the rate switches are held at
/// their value at the start of each step.
#[derive(Clone, Debug)]
pub struct BatchCulture<'a> {
    params: &'a ModelParameters,
    switches: Option<Switches>,
}

impl<'a> BatchCulture<'a> {
    pub fn new(params: &'a ModelParameters) -> Self {
        Self { params, switches: None }
    }
}

impl OdeSystem<STATE_DIM> for BatchCulture<'_> {
    fn rhs(&mut self, t: f64, y: &[f64; STATE_DIM], dy: &mut [f64; STATE_DIM]) {
        let state = CultureState::from_array(t, y);
        let sw = self.switches.unwrap_or_else(|| Switches::at(&state, self.params));
        rhs_with_switches(&state, self.params, &FeedRates::default(), sw, dy);
    }

    fn latch(&mut self, t: f64, y: &[f64; STATE_DIM]) -> bool {
        let sw = Switches::at(&CultureState::from_array(t, y), self.params);
        self.switches.replace(sw).is_some_and(|old| old != sw)
    }
}

fn rhs_with_rates(
    state: &CultureState,
    p: &ModelParameters,
    f: &FeedRates,
    dy: &mut [f64; STATE_DIM],
) {
    rhs_with_switches(state, p, f, Switches::at(state, p), dy)
}

fn rhs_with_switches(
    state: &CultureState,
    p: &ModelParameters,
    f: &FeedRates,
    sw: Switches,
    dy: &mut [f64; STATE_DIM],
) {
    let r = rates_with_switches(state, p, sw);
    let xv = state.xv;
    let inflow = f.inflow();
    let dilution = if inflow == 0.0 { 0.0 } else { inflow / state.v };

    dy[0] = xv * (r.mu - r.mu_d) - dilution * xv;
    dy[1] = xv * r.mu - p.k_lys * (state.xt - xv) - dilution * state.xt;
    dy[2] = -xv * r.q_glc + f.f_glc / state.v * f.c_glc_feed + f.f_medium / state.v * f.c_glc_medium
        - dilution * state.c_glc;
    dy[3] = -xv * r.q_gln + f.f_gln / state.v * f.c_gln_feed + f.f_medium / state.v * f.c_gln_medium
        - dilution * state.c_gln;
    dy[4] = xv * r.q_lac - dilution * state.c_lac;
    dy[5] = xv * r.q_amm - dilution * state.c_amm;
    dy[6] = xv * r.q_titer - dilution * state.c_titer;
    dy[7] = -f.f_sample + inflow;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn state(c_glc: f64, c_gln: f64) -> CultureState {
        CultureState {
            t: 100.0,
            xv: 1e9,
            xt: 1.1e9,
            c_glc,
            c_gln,
            c_lac: 5.0,
            c_amm: 1.0,
            c_titer: 0.0,
            v: 1.0,
        }
    }

    #[test]
    fn growth_vanishes_without_substrate() {
        let p = ModelParameters::default();
        assert_eq!(specific_growth_rate(&state(0.0, 5.0), &p), 0.0);
        assert_eq!(specific_growth_rate(&state(30.0, 0.0), &p), 0.0);
    }

    #[test]
    fn growth_saturates() {
        let p = ModelParameters::default();
        let s = state(1e6, 1e6);
        let mu = specific_growth_rate(&s, &p);
        let bound = p.k_s_glc / s.c_glc + p.k_s_gln / s.c_gln;
        assert!((p.mu_max - mu) / p.mu_max <= bound);
    }

    #[test]
    fn full_lag_stops_growth_at_start() {
        let p = ModelParameters {
            a_lag: 1.0,
            ..Default::default()
        };
        let mut s = state(1e12, 1e12);
        s.t = 0.0;
        assert_eq!(specific_growth_rate(&s, &p), 0.0);
    }

    #[test]
    fn lag_is_clamped_at_zero() {
        let p = ModelParameters {
            a_lag: 1.0,
            ..Default::default()
        };
        let mut s = state(1.0, 0.3);
        s.t = 0.0;
        assert_eq!(specific_growth_rate(&s, &p), 0.0);
    }

    #[test]
    fn death_rate_limits() {
        let p = ModelParameters::default();
        let sat = specific_death_rate(&state(1e9, 1e9), &p);
        assert_relative_eq!(sat, p.mu_d_min, max_relative = 1e-6);
        let starved = specific_death_rate(&state(0.0, 0.0), &p);
        assert_relative_eq!(starved, p.mu_d_min + p.mu_d_max);
        let half = specific_death_rate(&state(p.k_s_glc, p.k_s_gln), &p);
        assert_relative_eq!(half, p.mu_d_min + p.mu_d_max / 4.0, max_relative = 1e-14);
    }

    #[test]
    fn glucose_uptake_half_saturation() {
        let p = ModelParameters::default();
        let r = uptake_and_production_rates(&state(p.k_glc, 5.0), &p);
        assert_relative_eq!(r.q_glc, p.q_glc_max / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn lactate_uptake_only_below_switch() {
        let p = ModelParameters::default();
        let s = state(10.0, 5.0);
        let r = uptake_and_production_rates(&s, &p);
        assert_relative_eq!(
            r.q_lac,
            p.y_lac_glc * r.q_glc * s.c_glc / s.c_lac,
            max_relative = 1e-14
        );

        let low = state(0.4, 5.0);
        let r = uptake_and_production_rates(&low, &p);
        let deficit = (p.mu_max - r.mu) / p.mu_max;
        let expected = p.y_lac_glc * r.q_glc * low.c_glc / low.c_lac - p.q_lac_uptake_max * deficit;
        assert_relative_eq!(r.q_lac, expected, max_relative = 1e-12);
    }

    #[test]
    fn ammonia_correction_cases() {
        let p = ModelParameters {
            k_amm: 0.7,
            ..Default::default()
        };
        // Gln > Amm: no uptake term.
        let s = state(30.0, 5.0);
        let r = uptake_and_production_rates(&s, &p);
        assert_relative_eq!(r.q_amm, p.y_amm_gln * r.q_gln * 5.0 / 1.0, max_relative = 1e-14);

        // Gln <= Amm with growth above death: K_Amm = 1.
        let mut s = state(30.0, 2.0);
        s.c_amm = 4.0;
        let r = uptake_and_production_rates(&s, &p);
        assert!(r.mu > r.mu_d);
        let deficit = (p.mu_max - r.mu) / p.mu_max;
        let expected = p.y_amm_gln * r.q_gln * 2.0 / 4.0 - p.q_amm_uptake_max * deficit;
        assert_relative_eq!(r.q_amm, expected, max_relative = 1e-12);

        // Growth at or below death: K_Amm = -k_amm.
        let mut s = state(0.0, 0.1);
        s.c_amm = 4.0;
        let r = uptake_and_production_rates(&s, &p);
        assert!(r.mu <= r.mu_d);
        let deficit = (p.mu_max - r.mu) / p.mu_max;
        let expected = p.y_amm_gln * r.q_gln * 0.1 / 4.0 + p.k_amm * p.q_amm_uptake_max * deficit;
        assert_relative_eq!(r.q_amm, expected, max_relative = 1e-12);
    }

    #[test]
    fn switches_follow_the_state() {
        let p = ModelParameters::default();
        let mut s = state(30.0, 5.0);
        s.c_amm = 1.0;
        assert_eq!(
            Switches::at(&s, &p),
            Switches { lactate_uptake: false, ammonia: AmmoniaCase::GlutamineExcess }
        );
        s.c_glc = 0.4;
        s.c_amm = 8.0;
        let sw = Switches::at(&s, &p);
        assert!(sw.lactate_uptake);
        assert_ne!(sw.ammonia, AmmoniaCase::GlutamineExcess);
        assert_eq!(rates_with_switches(&s, &p, sw), uptake_and_production_rates(&s, &p));
    }

    #[test]
    fn latched_culture_reports_switch_changes() {
        let p = ModelParameters::default();
        let mut sys = BatchCulture::new(&p);
        let mut s = state(30.0, 5.0);
        assert!(!sys.latch(s.t, &s.to_array()));
        assert!(!sys.latch(s.t, &s.to_array()));
        s.c_glc = 0.1;
        assert!(sys.latch(s.t, &s.to_array()));
        // Within a step the latched branch holds even across the threshold.
        let mut dy = [0.0; STATE_DIM];
        s.c_glc = 0.6;
        sys.rhs(s.t, &s.to_array(), &mut dy);
        let mut expected = [0.0; STATE_DIM];
        let sw = Switches { lactate_uptake: true, ..Switches::at(&s, &p) };
        rhs_with_switches(&s, &p, &FeedRates::default(), sw, &mut expected);
        assert_eq!(dy, expected);
    }

    #[test]
    fn zero_metabolites_are_guarded() {
        let p = ModelParameters::default();
        let mut s = state(30.0, 5.0);
        s.c_lac = 0.0;
        s.c_amm = 0.0;
        let dy = ode_rhs(&s, &p, &FeedSchedule::batch()).unwrap();
        assert!(dy.iter().all(|d| d.is_finite()));
        assert!(dy[4] > 0.0 && dy[5] > 0.0);
    }

    #[test]
    fn batch_exponential_reduction() {
        let p = ModelParameters {
            mu_d_min: 0.0,
            mu_d_max: 0.0,
            k_lys: 0.0,
            t_lag: 0.0,
            k_s_glc: 0.0,
            k_s_gln: 0.0,
            ..Default::default()
        };
        let s = state(30.0, 5.0);
        let dy = ode_rhs(&s, &p, &FeedSchedule::batch()).unwrap();
        assert_relative_eq!(dy[0], p.mu_max * s.xv, max_relative = 1e-14);
        assert_eq!(dy[7], 0.0);
    }

    #[test]
    fn no_cells_no_kinetics() {
        let p = ModelParameters::default();
        let mut s = state(30.0, 5.0);
        s.xv = 0.0;
        s.xt = 0.0;
        let dy = ode_rhs(&s, &p, &FeedSchedule::batch()).unwrap();
        assert!(dy[..7].iter().all(|d| *d == 0.0));
    }

    #[test]
    fn dilution_and_volume_terms() {
        let p = ModelParameters::default();
        let mut s = state(30.0, 5.0);
        s.xv = 0.0;
        s.xt = 0.0;
        s.v = 2.0;
        let feeds = FeedSchedule::new(vec![FeedSegment {
            start: 0.0,
            rates: FeedRates {
                f_medium: 0.2,
                f_sample: 0.05,
                c_glc_medium: 40.0,
                ..Default::default()
            },
        }])
        .unwrap();
        assert!(!feeds.is_batch());
        let dy = ode_rhs(&s, &p, &feeds).unwrap();
        assert_relative_eq!(dy[2], 0.2 / 2.0 * 40.0 - 0.1 * 30.0);
        assert_relative_eq!(dy[3], -0.1 * 5.0);
        assert_relative_eq!(dy[7], 0.15);
    }

    #[test]
    fn non_positive_volume_is_reported() {
        let p = ModelParameters::default();
        let mut s = state(30.0, 5.0);
        s.v = 0.0;
        let feeds = FeedSchedule::new(vec![FeedSegment {
            start: 0.0,
            rates: FeedRates {
                f_medium: 0.1,
                ..Default::default()
            },
        }])
        .unwrap();
        assert!(matches!(
            ode_rhs(&s, &p, &feeds),
            Err(KineticsError::NonFiniteDerivative { .. })
        ));
    }

    #[test]
    fn feed_schedule_lookup() {
        let seg = |start, f_medium| FeedSegment {
            start,
            rates: FeedRates {
                f_medium,
                ..Default::default()
            },
        };
        let f = FeedSchedule::new(vec![seg(10.0, 1.0), seg(20.0, 2.0)]).unwrap();
        assert_eq!(f.at(5.0).f_medium, 0.0);
        assert_eq!(f.at(10.0).f_medium, 1.0);
        assert_eq!(f.at(25.0).f_medium, 2.0);
        assert!(FeedSchedule::new(vec![seg(20.0, 1.0), seg(10.0, 1.0)]).is_err());
        assert!(FeedSchedule::new(vec![seg(0.0, -1.0)]).is_err());
    }

    #[test]
    fn parameter_validation() {
        assert!(ModelParameters::default().validate().is_ok());
        let bad = ModelParameters {
            a_lag: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelParameters {
            q_glc_max: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn growth_monotone_in_substrates(
                glc in 0.0..50.0f64, dglc in 0.0..10.0f64,
                gln in 0.0..10.0f64, dgln in 0.0..5.0f64,
            ) {
                let p = ModelParameters::default();
                let base = specific_growth_rate(&state(glc, gln), &p);
                prop_assert!(specific_growth_rate(&state(glc + dglc, gln), &p) >= base);
                prop_assert!(specific_growth_rate(&state(glc, gln + dgln), &p) >= base);
            }

            #[test]
            fn death_rate_bounded(glc in 0.0..100.0f64, gln in 0.0..20.0f64) {
                let p = ModelParameters::default();
                let mu_d = specific_death_rate(&state(glc, gln), &p);
                prop_assert!(mu_d >= p.mu_d_min && mu_d <= p.mu_d_min + p.mu_d_max);
            }
        }
    }
}
