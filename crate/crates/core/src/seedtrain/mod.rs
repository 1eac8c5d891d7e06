//! Seed-train simulation.
//!
//! A seed train is an ordered list of cultivation scales, from the first
//! shake flask after thawing to the production vessel. Each scale is simulated
//! as a Monte-Carlo ensemble; the ensemble decides one shared passaging time
//! through a mean-minus-alpha-sd utility, after which every sample is passaged
//! into the next scale with the same rule (discard surplus suspension to hit
//! the target seeding density).

mod export;
mod passaging;
pub mod presets;
mod simulate;

pub use export::{bands_csv, protocol_csv};
pub use passaging::{execute_passaging, find_passaging_time, required_transfer_vcd, Passage};
pub use simulate::{
    simulate_seed_train, Band, BandPoint, Bands, PassagingEvent, SeedTrainResult, SimulateOptions,
};

use crate::integrator::IntegratorError;
use crate::kinetics::{CultureState, KineticsError, ModelParameters};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeedTrainError {
    #[error("invalid seed-train configuration: {0}")]
    InvalidConfig(String),
    #[error("design point has {got} volumes but the design covers {expected} scales")]
    DesignDimension { expected: usize, got: usize },
    #[error("volume {volume} L for scale `{scale}` outside working range [{lo}, {hi}] L")]
    VolumeOutOfRange {
        scale: String,
        volume: f64,
        lo: f64,
        hi: f64,
    },
    #[error("utility never reaches {threshold:e} cells/L within [{lo}, {hi}] h")]
    ThresholdUnreachable { threshold: f64, lo: f64, hi: f64 },
    #[error("ensemble needs at least two samples, got {0}")]
    EnsembleTooSmall(usize),
    #[error(transparent)]
    Kinetics(#[from] KineticsError),
    #[error("integration failed in scale {scale}, sample {sample}: {source}")]
    Integration {
        scale: usize,
        sample: usize,
        source: IntegratorError,
    },
}

fn default_window() -> [f64; 2] {
    [48.0, 120.0]
}

/// One cultivation vessel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleConfig {
    pub name: String,
    /// Filling volume, L. Overwritten by the design point for optimized flasks.
    pub filling_volume_target: f64,
    /// Allowed filling volumes, L.
    pub working_volume_range: [f64; 2],
    /// Feasible passaging times after inoculation, h.
    #[serde(default = "default_window")]
    pub passaging_window: [f64; 2],
    /// Glucose in fresh medium, mmol/L.
    pub medium_c_glc: f64,
    /// Glutamine in fresh medium, mmol/L.
    pub medium_c_gln: f64,
    /// Scale-specific maximum growth rate, 1/h.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_max_override: Option<f64>,
    /// Whether the lag-phase correction applies in this scale.
    #[serde(default)]
    pub apply_lag: bool,
}

/// Multiplicative lognormal perturbations, drawn once per Monte-Carlo sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintySpec {
    /// Relative standard deviation of the maximum growth rate.
    pub mu_max_rel_sd: f64,
    /// Relative standard deviation of the viable cell density after thawing.
    pub initial_vcd_rel_sd: f64,
    /// Derived from the run seed; not part of the configuration file.
    #[serde(skip)]
    pub rng_seed: u64,
}

impl Default for UncertaintySpec {
    fn default() -> Self {
        Self {
            mu_max_rel_sd: 0.03,
            initial_vcd_rel_sd: 0.05,
            rng_seed: 0,
        }
    }
}

/// How the deviation rate counts range violations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationCounting {
    /// Fraction of Monte-Carlo trajectories with at least one violation.
    #[default]
    PerTrajectory,
    /// Fraction of all seeding and transfer checks that fail.
    PerEvent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedTrainConfig {
    /// Flasks, bioreactors and, last, the production vessel.
    pub scales: Vec<ScaleConfig>,
    /// Acceptable seeding viable cell density, cells/L.
    pub seeding_vcd_range: [f64; 2],
    /// Acceptable transfer viable cell density, cells/L.
    pub transfer_vcd_range: [f64; 2],
    /// Target seeding viable cell density, cells/L.
    pub target_seeding_vcd: f64,
    /// Risk aversion of the passaging utility.
    pub alpha: f64,
    pub uncertainty: UncertaintySpec,
    pub n_mc: usize,
    /// Batch cultivation time in the production vessel, h.
    pub production_duration: f64,
    /// State after thawing; its volume is replaced by the first filling volume.
    pub initial_state: CultureState,
    /// Passage after a fixed interval instead of using the utility search, h.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_passaging_interval: Option<f64>,
    #[serde(default)]
    pub deviation_counting: DeviationCounting,
}

impl SeedTrainConfig {
    pub fn validate(&self) -> Result<(), SeedTrainError> {
        let bad = |msg: String| Err(SeedTrainError::InvalidConfig(msg));
        if self.scales.len() < 2 {
            return bad("at least one seed scale and a production vessel are required".into());
        }
        for (i, s) in self.scales.iter().enumerate() {
            if s.name.is_empty() || s.name.contains([',', '"', '\n', '\r']) {
                return bad(format!("scales[{i}].name must be non-empty plain text"));
            }
            let [lo, hi] = s.working_volume_range;
            if !(lo > 0.0 && lo <= hi) {
                return bad(format!("scales[{i}].working_volume_range is not well ordered"));
            }
            if !(s.filling_volume_target >= lo && s.filling_volume_target <= hi) {
                return bad(format!(
                    "scales[{i}].filling_volume_target {} outside working range [{lo}, {hi}]",
                    s.filling_volume_target
                ));
            }
            let [wlo, whi] = s.passaging_window;
            if !(wlo >= 0.0 && wlo < whi && whi.is_finite()) {
                return bad(format!("scales[{i}].passaging_window must satisfy 0 <= lower < upper"));
            }
            if !(s.medium_c_glc >= 0.0 && s.medium_c_gln >= 0.0) {
                return bad(format!("scales[{i}] medium concentrations must be >= 0"));
            }
            if let Some(mu) = s.mu_max_override {
                if !(mu >= 0.0 && mu.is_finite()) {
                    return bad(format!("scales[{i}].mu_max_override must be >= 0"));
                }
            }
        }
        let [slo, shi] = self.seeding_vcd_range;
        if !(slo > 0.0 && slo < shi) {
            return bad("seeding_vcd_range is not well ordered".into());
        }
        let [tlo, thi] = self.transfer_vcd_range;
        if !(tlo > 0.0 && tlo < thi) {
            return bad("transfer_vcd_range is not well ordered".into());
        }
        if !(self.target_seeding_vcd >= slo && self.target_seeding_vcd <= shi) {
            return bad("target_seeding_vcd outside seeding_vcd_range".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be >= 0".into());
        }
        if self.n_mc < 2 {
            return bad(format!("n_mc must be >= 2, got {}", self.n_mc));
        }
        let u = &self.uncertainty;
        if !(u.mu_max_rel_sd >= 0.0 && u.initial_vcd_rel_sd >= 0.0) {
            return bad("uncertainty standard deviations must be >= 0".into());
        }
        if !(self.production_duration > 0.0 && self.production_duration.is_finite()) {
            return bad("production_duration must be positive".into());
        }
        if let Some(dt) = self.fixed_passaging_interval {
            if !(dt > 0.0 && dt.is_finite() && dt.fract() == 0.0) {
                return bad("fixed_passaging_interval must be a positive whole number of hours".into());
            }
        }
        let mut s0 = self.initial_state;
        s0.v = self.scales[0].filling_volume_target;
        s0.validate()?;
        Ok(())
    }

    /// Copy with the first `x.len()` filling volumes replaced by the design point.
    pub fn with_design(&self, x: &DesignPoint) -> Result<SeedTrainConfig, SeedTrainError> {
        if x.0.len() >= self.scales.len() {
            return Err(SeedTrainError::DesignDimension {
                expected: self.scales.len() - 1,
                got: x.0.len(),
            });
        }
        let mut cfg = self.clone();
        for (scale, &v) in cfg.scales.iter_mut().zip(&x.0) {
            let [lo, hi] = scale.working_volume_range;
            if !(v >= lo && v <= hi) {
                return Err(SeedTrainError::VolumeOutOfRange {
                    scale: scale.name.clone(),
                    volume: v,
                    lo,
                    hi,
                });
            }
            scale.filling_volume_target = v;
        }
        Ok(cfg)
    }

    /// Duration and deviation rate assigned when no feasible passaging time exists.
    pub fn penalty(&self) -> ObjectiveVector {
        let upper = self
            .scales
            .iter()
            .map(|s| s.passaging_window[1])
            .fold(0.0, f64::max);
        ObjectiveVector {
            d: upper * self.scales.len() as f64 * 2.0,
            deviation_rate: 100.0,
            titer_end: Some(0.0),
            viability_end: Some(0.0),
        }
    }

    /// Parameters used in `scale` for a sample with growth multiplier `mu_factor`.
    pub fn scale_parameters(
        &self,
        base: &ModelParameters,
        scale: usize,
        mu_factor: f64,
    ) -> ModelParameters {
        let s = &self.scales[scale];
        let mut p = base.clone();
        p.mu_max = s.mu_max_override.unwrap_or(base.mu_max) * mu_factor;
        if !s.apply_lag {
            p.a_lag = 0.0;
        }
        p
    }
}

/// Filling volumes of the optimized flask scales, L.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint(pub Vec<f64>);

/// Which objectives the optimizer sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Duration and deviation rate.
    #[default]
    Two,
    /// Additionally end titer and end viability in the production vessel.
    Four,
}

impl ObjectiveMode {
    pub fn count(self) -> usize {
        match self {
            ObjectiveMode::Two => 2,
            ObjectiveMode::Four => 4,
        }
    }
}

/// Seed-train objectives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    /// Time until inoculation of the production vessel, h.
    pub d: f64,
    /// Share of Monte-Carlo runs leaving the VCD ranges, percent.
    pub deviation_rate: f64,
    /// Mean product titer at the end of production, mg/L.
    pub titer_end: Option<f64>,
    /// Mean viability at the end of production, percent.
    pub viability_end: Option<f64>,
}

impl ObjectiveVector {
    /// Objective values in natural units (titer and viability are to be maximized).
    pub fn to_vec(&self, mode: ObjectiveMode) -> Vec<f64> {
        match mode {
            ObjectiveMode::Two => vec![self.d, self.deviation_rate],
            ObjectiveMode::Four => vec![
                self.d,
                self.deviation_rate,
                self.titer_end.unwrap_or(0.0),
                self.viability_end.unwrap_or(0.0),
            ],
        }
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn validation_catches_bad_ranges() {
        let cfg = small_train();
        assert!(cfg.validate().is_ok());

        let mut c = cfg.clone();
        c.target_seeding_vcd = 5e8;
        assert!(c.validate().is_err());

        let mut c = cfg.clone();
        c.n_mc = 1;
        assert!(c.validate().is_err());

        let mut c = cfg.clone();
        c.scales[1].passaging_window = [120.0, 48.0];
        assert!(c.validate().is_err());

        let mut c = cfg.clone();
        c.scales[1].filling_volume_target = 1.0;
        assert!(c.validate().is_err());

        let mut c = cfg;
        c.scales[0].name = "a,b".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn design_overrides_volumes() {
        let cfg = small_train();
        let c = cfg.with_design(&DesignPoint(vec![0.014, 0.1])).unwrap();
        assert_eq!(c.scales[0].filling_volume_target, 0.014);
        assert_eq!(c.scales[1].filling_volume_target, 0.1);
        assert!(matches!(
            cfg.with_design(&DesignPoint(vec![0.014, 0.2])),
            Err(SeedTrainError::VolumeOutOfRange { .. })
        ));
        assert!(matches!(
            cfg.with_design(&DesignPoint(vec![0.014, 0.1, 0.5])),
            Err(SeedTrainError::DesignDimension { .. })
        ));
    }

    #[test]
    fn penalty_values() {
        let p = small_train().penalty();
        assert_eq!(p.d, 120.0 * 3.0 * 2.0);
        assert_eq!(p.deviation_rate, 100.0);
    }
}
