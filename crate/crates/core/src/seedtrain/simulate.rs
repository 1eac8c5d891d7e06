use super::passaging::{execute_passaging, find_passaging_time, required_transfer_vcd};
use super::{DesignPoint, DeviationCounting, ObjectiveVector, SeedTrainConfig, SeedTrainError};
use crate::integrator::{hourly_grid, integrate_system, IntegratorConfig, Trajectory};
use crate::kinetics::{BatchCulture, CultureState, ModelParameters, STATE_DIM};
use crate::rng::rng_for;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimulateOptions {
    /// Run the production vessel and report end titer and viability.
    pub production: bool,
    /// Keep hourly ensemble statistics of every state variable.
    pub bands: bool,
}

/// One passaging step of the ensemble. VCDs and volumes are ensemble means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassagingEvent {
    /// Index of the source scale.
    pub scale_index: usize,
    pub from_scale: String,
    pub to_scale: String,
    /// Absolute time since thawing, h.
    pub time: f64,
    /// Time spent in the source scale, h.
    pub local_time: f64,
    pub required_transfer_vcd: f64,
    pub transfer_vcd: f64,
    pub seeding_vcd: f64,
    pub suspension_used: f64,
    pub medium_added: f64,
    pub discarded: f64,
    pub transfer_violations: usize,
    pub seeding_violations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub mean: f64,
    pub q05: f64,
    pub q95: f64,
}

/// Hourly ensemble statistics inside one scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub scale: String,
    /// Absolute times, h.
    pub times: Vec<f64>,
    pub points: Vec<[BandPoint; STATE_DIM]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub segments: Vec<Band>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedTrainResult {
    pub objectives: ObjectiveVector,
    pub protocol: Vec<PassagingEvent>,
    pub bands: Option<Bands>,
    /// Per Monte-Carlo sample: did any seeding or transfer check fail.
    pub mc_violation_flags: Vec<bool>,
    /// False when a passaging threshold was unreachable and the penalty applies.
    pub feasible: bool,
    pub failure: Option<String>,
}

struct Sample {
    mu_factor: f64,
    state: CultureState,
    violated: bool,
}

fn lognormal_factor(z: f64, rel_sd: f64) -> f64 {
    if rel_sd == 0.0 {
        return 1.0;
    }
    let s2 = (1.0 + rel_sd * rel_sd).ln();
    (-0.5 * s2 + s2.sqrt() * z).exp()
}

fn draw_samples(cfg: &SeedTrainConfig) -> Vec<Sample> {
    let u = &cfg.uncertainty;
    (0..cfg.n_mc)
        .map(|s| {
            let mut rng = rng_for(u.rng_seed, s as u64);
            let z_mu: f64 = StandardNormal.sample(&mut rng);
            let z_x0: f64 = StandardNormal.sample(&mut rng);
            let x0 = lognormal_factor(z_x0, u.initial_vcd_rel_sd);
            let mut state = cfg.initial_state;
            state.t = 0.0;
            state.v = cfg.scales[0].filling_volume_target;
            state.xv *= x0;
            state.xt *= x0;
            Sample {
                mu_factor: lognormal_factor(z_mu, u.mu_max_rel_sd),
                state,
                violated: false,
            }
        })
        .collect()
}

fn run_ensemble(
    cfg: &SeedTrainConfig,
    base: &ModelParameters,
    icfg: &IntegratorConfig,
    scale: usize,
    samples: &[Sample],
    horizon: f64,
    grid: &[f64],
) -> Result<Vec<Trajectory<STATE_DIM>>, SeedTrainError> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let p = cfg.scale_parameters(base, scale, s.mu_factor);
            integrate_system(
                BatchCulture::new(&p),
                0.0,
                s.state.to_array(),
                horizon,
                icfg,
                grid,
            )
            .map_err(|source| SeedTrainError::Integration {
                scale,
                sample: i,
                source,
            })
        })
        .collect()
}

fn band_point(values: &mut [f64]) -> BandPoint {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let (min, max) = (values[0], values[n - 1]);
    let mean = (values.iter().sum::<f64>() / n as f64).clamp(min, max);
    BandPoint {
        mean,
        q05: quantile(values, 0.05),
        q95: quantile(values, 0.95),
    }
}

/// Linear interpolation between order statistics of sorted `v`.
fn quantile(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    if lo == hi {
        v[lo]
    } else {
        v[lo] + w * (v[hi] - v[lo])
    }
}

fn band(name: &str, offset: f64, trajs: &[Trajectory<STATE_DIM>], until: usize) -> Band {
    let times = trajs[0].times[..=until].iter().map(|t| t + offset).collect();
    let mut buf = vec![0.0; trajs.len()];
    let points = (0..=until)
        .map(|i| {
            std::array::from_fn(|c| {
                for (b, tr) in buf.iter_mut().zip(trajs) {
                    *b = tr.states[i][c];
                }
                band_point(&mut buf)
            })
        })
        .collect();
    Band {
        scale: name.to_string(),
        times,
        points,
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

fn in_range(x: f64, r: [f64; 2]) -> bool {
    x >= r[0] && x <= r[1]
}

/// Simulates the seed train with the first `x.len()` filling volumes set by
/// `x`. The returned objectives are the penalty values when some scale never
/// reaches its transfer density inside the passaging window.
pub fn simulate_seed_train(
    x: &DesignPoint,
    cfg: &SeedTrainConfig,
    params: &ModelParameters,
    icfg: &IntegratorConfig,
    opts: SimulateOptions,
) -> Result<SeedTrainResult, SeedTrainError> {
    let cfg = cfg.with_design(x)?;
    cfg.validate()?;
    params.validate()?;
    icfg.validate(STATE_DIM)
        .map_err(|source| SeedTrainError::Integration {
            scale: 0,
            sample: 0,
            source,
        })?;

    let n = cfg.n_mc;
    let mut samples = draw_samples(&cfg);
    let mut protocol = Vec::new();
    let mut bands = Bands::default();
    let mut elapsed = 0.0;
    let mut failed_checks = 0usize;
    let last = cfg.scales.len() - 1;

    for k in 0..last {
        let (cur, next) = (&cfg.scales[k], &cfg.scales[k + 1]);
        let horizon = cfg.fixed_passaging_interval.unwrap_or(cur.passaging_window[1]);
        let grid = hourly_grid(0.0, horizon);
        let trajs = run_ensemble(&cfg, params, icfg, k, &samples, horizon, &grid)?;
        let threshold = required_transfer_vcd(
            cur,
            next,
            cfg.target_seeding_vcd,
            cfg.transfer_vcd_range[0],
        );

        let t_star = match cfg.fixed_passaging_interval {
            Some(dt) => dt,
            None => {
                let xv: Vec<Vec<f64>> = trajs
                    .iter()
                    .map(|tr| tr.states.iter().map(|y| y[0]).collect())
                    .collect();
                match find_passaging_time(&grid, &xv, cfg.alpha, threshold, cur.passaging_window)
                {
                    Ok(t) => t,
                    Err(e @ SeedTrainError::ThresholdUnreachable { .. }) => {
                        return Ok(penalty_result(&cfg, n, protocol, format!("{}: {e}", cur.name)))
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        let idx = grid
            .iter()
            .position(|&t| t == t_star)
            .expect("passaging time lies on the hourly grid");
        if opts.bands {
            bands.segments.push(band(&cur.name, elapsed, &trajs, idx));
        }

        let mut event = PassagingEvent {
            scale_index: k,
            from_scale: cur.name.clone(),
            to_scale: next.name.clone(),
            time: elapsed + t_star,
            local_time: t_star,
            required_transfer_vcd: threshold,
            transfer_vcd: 0.0,
            seeding_vcd: 0.0,
            suspension_used: 0.0,
            medium_added: 0.0,
            discarded: 0.0,
            transfer_violations: 0,
            seeding_violations: 0,
        };
        let mut passages = Vec::with_capacity(n);
        for (s, tr) in samples.iter_mut().zip(&trajs) {
            let src = CultureState::from_array(t_star, &tr.states[idx]);
            let p = execute_passaging(&src, next, cfg.target_seeding_vcd);
            if !in_range(src.xv, cfg.transfer_vcd_range) {
                event.transfer_violations += 1;
                s.violated = true;
            }
            if !in_range(p.state.xv, cfg.seeding_vcd_range) {
                event.seeding_violations += 1;
                s.violated = true;
            }
            s.state = p.state;
            passages.push((src.xv, p));
        }
        event.transfer_vcd = mean(passages.iter().map(|(x, _)| *x));
        event.seeding_vcd = mean(passages.iter().map(|(_, p)| p.state.xv));
        event.suspension_used = mean(passages.iter().map(|(_, p)| p.suspension_used));
        event.medium_added = mean(passages.iter().map(|(_, p)| p.medium_added));
        event.discarded = mean(passages.iter().map(|(_, p)| p.discarded));
        failed_checks += event.transfer_violations + event.seeding_violations;
        protocol.push(event);
        elapsed += t_star;
    }

    let flags: Vec<bool> = samples.iter().map(|s| s.violated).collect();
    let deviation_rate = match cfg.deviation_counting {
        DeviationCounting::PerTrajectory => {
            100.0 * flags.iter().filter(|&&v| v).count() as f64 / n as f64
        }
        DeviationCounting::PerEvent => 100.0 * failed_checks as f64 / (2 * last * n) as f64,
    };
    let mut objectives = ObjectiveVector {
        d: elapsed,
        deviation_rate,
        titer_end: None,
        viability_end: None,
    };

    if opts.production {
        let duration = cfg.production_duration;
        let grid = if opts.bands {
            hourly_grid(0.0, duration)
        } else {
            vec![duration]
        };
        let trajs = run_ensemble(&cfg, params, icfg, last, &samples, duration, &grid)?;
        let ends: Vec<CultureState> = trajs
            .iter()
            .map(|tr| CultureState::from_array(duration, &tr.end))
            .collect();
        objectives.titer_end = Some(mean(ends.iter().map(|s| s.c_titer)));
        objectives.viability_end = Some(mean(ends.iter().map(|s| s.viability_percent())));
        if opts.bands {
            let until = trajs[0].times.len() - 1;
            bands.segments.push(band(&cfg.scales[last].name, elapsed, &trajs, until));
        }
    }

    Ok(SeedTrainResult {
        objectives,
        protocol,
        bands: opts.bands.then_some(bands),
        mc_violation_flags: flags,
        feasible: true,
        failure: None,
    })
}

fn penalty_result(
    cfg: &SeedTrainConfig,
    n: usize,
    protocol: Vec<PassagingEvent>,
    reason: String,
) -> SeedTrainResult {
    SeedTrainResult {
        objectives: cfg.penalty(),
        protocol,
        bands: None,
        mc_violation_flags: vec![true; n],
        feasible: false,
        failure: Some(reason),
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::small_train;
    use super::super::presets::{reference_train, seed_train, BioreactorLayout, REFERENCE_FLASK_VOLUMES};
    use super::*;
    use proptest::prelude::*;

    fn run(x: &[f64], cfg: &SeedTrainConfig, opts: SimulateOptions) -> SeedTrainResult {
        simulate_seed_train(
            &DesignPoint(x.to_vec()),
            cfg,
            &ModelParameters::default(),
            &IntegratorConfig::culture_default(),
            opts,
        )
        .unwrap()
    }

    fn five_flasks(n_mc: usize) -> SeedTrainConfig {
        let mut cfg = seed_train(5, BioreactorLayout::Standard).unwrap();
        cfg.n_mc = n_mc;
        cfg.uncertainty.rng_seed = 5;
        cfg
    }

    const OPTIMIZED: [f64; 5] = [0.015, 0.114, 0.431, 2.026, 7.97];

    #[test]
    fn reference_train_takes_576_hours() {
        let mut cfg = reference_train(BioreactorLayout::Standard);
        cfg.n_mc = 100;
        let r = run(&REFERENCE_FLASK_VOLUMES, &cfg, SimulateOptions::default());
        assert_eq!(r.objectives.d, 576.0);
        assert_eq!(r.protocol.len(), 8);
        assert!(r.protocol.iter().all(|e| e.local_time == 72.0));
    }

    #[test]
    fn optimized_volumes_beat_reference() {
        let cfg = five_flasks(200);
        let opt = run(&OPTIMIZED, &cfg, SimulateOptions::default());
        let mut rcfg = reference_train(BioreactorLayout::Standard);
        rcfg.n_mc = 200;
        let reference = run(&REFERENCE_FLASK_VOLUMES, &rcfg, SimulateOptions::default());
        assert!(opt.feasible);
        assert!(opt.objectives.d < 576.0, "{:?}", opt.objectives);
        assert!(reference.objectives.deviation_rate > opt.objectives.deviation_rate);
    }

    #[test]
    fn duration_is_sum_of_scale_times_and_rate_counts_flags() {
        let cfg = five_flasks(100);
        let r = run(&OPTIMIZED, &cfg, SimulateOptions::default());
        let total: f64 = r.protocol.iter().map(|e| e.local_time).sum();
        assert_eq!(r.objectives.d, total);
        assert_eq!(r.objectives.d, r.protocol.last().unwrap().time);
        let violating = r.mc_violation_flags.iter().filter(|&&v| v).count();
        assert_eq!(r.objectives.deviation_rate, 100.0 * violating as f64 / 100.0);
        for e in &r.protocol {
            assert!(e.local_time.fract() == 0.0);
            assert!(e.local_time >= 48.0 && e.local_time <= 120.0);
        }
    }

    #[test]
    fn per_event_counting_uses_protocol_counts() {
        let mut cfg = five_flasks(100);
        cfg.deviation_counting = DeviationCounting::PerEvent;
        let r = run(&OPTIMIZED, &cfg, SimulateOptions::default());
        let failed: usize = r
            .protocol
            .iter()
            .map(|e| e.transfer_violations + e.seeding_violations)
            .sum();
        let checks = 2 * r.protocol.len() * 100;
        assert_eq!(r.objectives.deviation_rate, 100.0 * failed as f64 / checks as f64);
    }

    #[test]
    fn zero_uncertainty_gives_degenerate_rate_and_bands() {
        let mut cfg = five_flasks(8);
        cfg.uncertainty.mu_max_rel_sd = 0.0;
        cfg.uncertainty.initial_vcd_rel_sd = 0.0;
        // A zero spread makes the utility the plain mean.
        let r = run(&OPTIMIZED, &cfg, SimulateOptions { production: true, bands: true });
        let d = r.objectives.deviation_rate;
        assert!(d == 0.0 || d == 100.0, "{d}");
        for seg in &r.bands.unwrap().segments {
            for pts in &seg.points {
                for p in pts {
                    assert_eq!(p.q05, p.mean);
                    assert_eq!(p.q95, p.mean);
                }
            }
        }
    }

    #[test]
    fn bands_cover_every_hour_and_are_ordered() {
        let cfg = five_flasks(50);
        let r = run(&OPTIMIZED, &cfg, SimulateOptions { production: true, bands: true });
        let bands = r.bands.unwrap();
        assert_eq!(bands.segments.len(), cfg.scales.len());
        let mut last_t = -1.0;
        for seg in &bands.segments {
            for (t, pts) in seg.times.iter().zip(&seg.points) {
                assert!(*t >= last_t);
                last_t = *t;
                for p in pts {
                    assert!(p.q05 <= p.q95);
                }
            }
        }
        assert_eq!(last_t, r.objectives.d + cfg.production_duration);
        let titer = r.objectives.titer_end.unwrap();
        let via = r.objectives.viability_end.unwrap();
        assert!(titer > 0.0);
        assert!((0.0..=100.0).contains(&via));
    }

    #[test]
    fn reproducible_for_fixed_seed() {
        let cfg = five_flasks(40);
        let opts = SimulateOptions { production: true, bands: true };
        assert_eq!(run(&OPTIMIZED, &cfg, opts), run(&OPTIMIZED, &cfg, opts));
        let mut other = cfg.clone();
        other.uncertainty.rng_seed = 6;
        assert_ne!(
            run(&OPTIMIZED, &cfg, opts).mc_violation_flags,
            run(&OPTIMIZED, &other, opts).mc_violation_flags
        );
    }

    #[test]
    fn sample_draws_do_not_depend_on_ensemble_size() {
        let small = five_flasks(10);
        let large = five_flasks(1000);
        let a = draw_samples(&small);
        let b = draw_samples(&large);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mu_factor, y.mu_factor);
            assert_eq!(x.state, y.state);
        }
    }

    #[test]
    fn lognormal_factors_have_unit_mean_and_requested_spread() {
        let cfg = five_flasks(20_000);
        let f: Vec<f64> = draw_samples(&cfg).iter().map(|s| s.mu_factor).collect();
        let n = f.len() as f64;
        let m = f.iter().sum::<f64>() / n;
        let sd = (f.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((m - 1.0).abs() < 4.0 * 0.03 / n.sqrt());
        assert!((sd - 0.03).abs() < 0.002);
    }

    #[test]
    fn doubling_ensemble_keeps_rate_within_binomial_interval() {
        let a = run(&OPTIMIZED, &five_flasks(500), SimulateOptions::default());
        let b = run(&OPTIMIZED, &five_flasks(1000), SimulateOptions::default());
        let p = b.objectives.deviation_rate / 100.0;
        let half_width = 2.576 * (p * (1.0 - p) / 500.0).sqrt() * 100.0;
        assert!(
            (a.objectives.deviation_rate - b.objectives.deviation_rate).abs() <= half_width,
            "{} vs {}",
            a.objectives.deviation_rate,
            b.objectives.deviation_rate
        );
    }

    #[test]
    fn unreachable_threshold_gives_penalty() {
        let mut cfg = small_train();
        cfg.scales[1].working_volume_range = [0.05, 5.0];
        let r = run(&[0.015, 5.0], &cfg, SimulateOptions { production: true, bands: true });
        assert!(!r.feasible);
        assert_eq!(r.objectives, cfg.penalty());
        assert!(r.failure.unwrap().starts_with("SF1"));
        assert!(r.mc_violation_flags.iter().all(|&v| v));
    }

    #[test]
    fn bad_design_is_an_error() {
        let cfg = five_flasks(10);
        let err = simulate_seed_train(
            &DesignPoint(vec![0.015, 0.114]),
            &cfg,
            &ModelParameters::default(),
            &IntegratorConfig::culture_default(),
            SimulateOptions::default(),
        );
        assert!(err.is_ok());
        let err = simulate_seed_train(
            &DesignPoint(vec![0.02]),
            &cfg,
            &ModelParameters::default(),
            &IntegratorConfig::culture_default(),
            SimulateOptions::default(),
        );
        assert!(matches!(err, Err(SeedTrainError::VolumeOutOfRange { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn objectives_and_protocol_stay_consistent(
            v1 in 0.014f64..0.015,
            v2 in 0.05f64..0.15,
            seed in 0u64..1000,
        ) {
            let mut cfg = small_train();
            cfg.n_mc = 12;
            cfg.uncertainty.rng_seed = seed;
            let r = run(&[v1, v2], &cfg, SimulateOptions { production: true, bands: false });
            let o = r.objectives;
            prop_assert!(o.d > 0.0);
            prop_assert!((0.0..=100.0).contains(&o.deviation_rate));
            prop_assert!((0.0..=100.0).contains(&o.viability_end.unwrap()));
            let designed = cfg.with_design(&DesignPoint(vec![v1, v2])).unwrap();
            for e in &r.protocol {
                let v_src = designed.scales[e.scale_index].filling_volume_target;
                let v_next = designed.scales[e.scale_index + 1].filling_volume_target;
                prop_assert!(e.suspension_used + e.discarded <= v_src * (1.0 + 1e-12));
                prop_assert!((e.suspension_used + e.medium_added - v_next).abs() <= 1e-12 * v_next);
                // No cells are created by passaging.
                prop_assert!(e.seeding_vcd * v_next <= e.transfer_vcd * v_src * (1.0 + 1e-9));
            }
        }
    }
}
