use super::{ScaleConfig, SeedTrainError};
use crate::kinetics::CultureState;

/// Viable cell density the current scale must reach so that the next scale
/// can be seeded at `target` without topping up, cells/L.
pub fn required_transfer_vcd(
    current: &ScaleConfig,
    next: &ScaleConfig,
    target: f64,
    transfer_floor: f64,
) -> f64 {
    (target * next.filling_volume_target / current.filling_volume_target).max(transfer_floor)
}

/// Earliest whole hour in `window` at which `mean - alpha * sd` of the
/// ensemble reaches `threshold`.
///
/// `ensemble[s][i]` is the viable cell density of sample `s` at `times[i]`.
/// The standard deviation uses the `n - 1` denominator.
pub fn find_passaging_time(
    times: &[f64],
    ensemble: &[Vec<f64>],
    alpha: f64,
    threshold: f64,
    window: [f64; 2],
) -> Result<f64, SeedTrainError> {
    let n = ensemble.len();
    if n < 2 {
        return Err(SeedTrainError::EnsembleTooSmall(n));
    }
    let unreachable = SeedTrainError::ThresholdUnreachable {
        threshold,
        lo: window[0],
        hi: window[1],
    };
    let (lo, hi) = (window[0].ceil(), window[1].floor());
    for (i, &t) in times.iter().enumerate() {
        if t < lo || t > hi || t.fract() != 0.0 {
            continue;
        }
        if utility(ensemble, i, alpha) >= threshold {
            return Ok(t);
        }
    }
    Err(unreachable)
}

fn utility(ensemble: &[Vec<f64>], i: usize, alpha: f64) -> f64 {
    let n = ensemble.len() as f64;
    let mean = ensemble.iter().map(|s| s[i]).sum::<f64>() / n;
    let var = ensemble.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
    mean - alpha * var.sqrt()
}

/// Result of moving one culture into the next scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Passage {
    /// State at local time zero in the next scale.
    pub state: CultureState,
    /// Suspension volume transferred, L.
    pub suspension_used: f64,
    /// Fresh medium added, L.
    pub medium_added: f64,
    /// Suspension left behind, L.
    pub discarded: f64,
}

/// Transfer just enough suspension to seed `next` at `target` and fill up
/// with fresh medium. Only glucose and glutamine come with the medium; every
/// other quantity is diluted.
pub fn execute_passaging(source: &CultureState, next: &ScaleConfig, target: f64) -> Passage {
    let v_next = next.filling_volume_target;
    let v_t = (target * v_next / source.xv).min(source.v).min(v_next);
    let v_m = v_next - v_t;
    let f = v_t / v_next;
    let state = CultureState {
        t: 0.0,
        xv: source.xv * f,
        xt: source.xt * f,
        c_glc: (source.c_glc * v_t + next.medium_c_glc * v_m) / v_next,
        c_gln: (source.c_gln * v_t + next.medium_c_gln * v_m) / v_next,
        c_lac: source.c_lac * f,
        c_amm: source.c_amm * f,
        c_titer: source.c_titer * f,
        v: v_next,
    };
    Passage {
        state,
        suspension_used: v_t,
        medium_added: v_m,
        discarded: source.v - v_t,
    }
}
