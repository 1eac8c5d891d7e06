//! Built-in seed-train layouts.

use super::{DeviationCounting, ScaleConfig, SeedTrainConfig, UncertaintySpec};
use crate::kinetics::CultureState;

/// Glucose and glutamine of fresh medium, mmol/L.
pub const MEDIUM_GLC: f64 = 33.0;
pub const MEDIUM_GLN: f64 = 6.0;

/// Maximum growth rate in the first bioreactor, 1/h.
pub const FIRST_BIOREACTOR_MU_MAX: f64 = 0.028;

/// Passaging interval of the conventional reference train, h.
pub const REFERENCE_INTERVAL: f64 = 72.0;

/// Flask filling volumes of the conventional reference train, L.
pub const REFERENCE_FLASK_VOLUMES: [f64; 5] = [0.015, 0.08, 0.30, 2.0, 4.0];

/// Bioreactor and production filling volumes, L.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BioreactorLayout {
    /// 40 / 320 / 2100 L bioreactors, 9600 L production.
    #[default]
    Standard,
    /// 38 / 302 / 2054 L bioreactors, 9500 L production.
    Tabulated,
}

impl BioreactorLayout {
    pub fn volumes(self) -> ([f64; 3], f64) {
        match self {
            BioreactorLayout::Standard => ([40.0, 320.0, 2100.0], 9600.0),
            BioreactorLayout::Tabulated => ([38.0, 302.0, 2054.0], 9500.0),
        }
    }
}

/// Allowed filling volumes of each flask scale for 3, 4 or 5 flasks, L.
pub fn flask_bounds(n_flasks: usize) -> Option<Vec<[f64; 2]>> {
    match n_flasks {
        5 => Some(vec![
            [0.014, 0.015],
            [0.05, 0.15],
            [0.15, 1.5],
            [1.5, 4.0],
            [4.0, 8.0],
        ]),
        4 => Some(vec![[0.014, 0.015], [0.1, 1.0], [1.5, 4.0], [4.0, 8.0]]),
        3 => Some(vec![[0.014, 0.015], [0.1, 2.0], [4.0, 8.0]]),
        _ => None,
    }
}

fn scale(name: String, v: f64, range: [f64; 2]) -> ScaleConfig {
    ScaleConfig {
        name,
        filling_volume_target: v,
        working_volume_range: range,
        passaging_window: [48.0, 120.0],
        medium_c_glc: MEDIUM_GLC,
        medium_c_gln: MEDIUM_GLN,
        mu_max_override: None,
        apply_lag: false,
    }
}

/// Culture right after thawing into the first flask.
pub fn thawed_culture() -> CultureState {
    CultureState {
        t: 0.0,
        xv: 3.15e8,
        xt: 3.3e8,
        c_glc: 30.0,
        c_gln: 5.5,
        c_lac: 1.5,
        c_amm: 0.4,
        c_titer: 0.0,
        v: 0.015,
    }
}

/// Flasks, three bioreactors and a production vessel. Flask volumes start at
/// the geometric centre of their ranges.
pub fn seed_train(n_flasks: usize, layout: BioreactorLayout) -> Option<SeedTrainConfig> {
    let bounds = flask_bounds(n_flasks)?;
    let mut scales: Vec<ScaleConfig> = bounds
        .iter()
        .enumerate()
        .map(|(i, &[lo, hi])| scale(format!("SF{}", i + 1), (lo * hi).sqrt(), [lo, hi]))
        .collect();
    scales[0].apply_lag = true;
    let (bio, production) = layout.volumes();
    for (i, &v) in bio.iter().enumerate() {
        scales.push(scale(format!("BR{}", i + 1), v, [v, v]));
    }
    scales[n_flasks].mu_max_override = Some(FIRST_BIOREACTOR_MU_MAX);
    scales.push(scale("PV".into(), production, [production, production]));
    Some(SeedTrainConfig {
        scales,
        seeding_vcd_range: [3e8, 3.5e8],
        transfer_vcd_range: [1e9, 1e10],
        target_seeding_vcd: 3.15e8,
        alpha: 1.0,
        uncertainty: UncertaintySpec::default(),
        n_mc: 1000,
        production_duration: 192.0,
        initial_state: thawed_culture(),
        fixed_passaging_interval: None,
        deviation_counting: DeviationCounting::PerTrajectory,
    })
}

/// Five flasks at fixed volumes, passaged every 72 h.
pub fn reference_train(layout: BioreactorLayout) -> SeedTrainConfig {
    let mut cfg = seed_train(5, layout).expect("five flasks are supported");
    for (s, v) in cfg.scales.iter_mut().zip(REFERENCE_FLASK_VOLUMES) {
        s.filling_volume_target = v;
    }
    cfg.fixed_passaging_interval = Some(REFERENCE_INTERVAL);
    cfg
}
