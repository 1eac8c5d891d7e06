//! The verbs: each validates the configuration, runs, and writes its artifacts.

use crate::config::RunConfig;
use crate::output::{num, write_atomic, write_json, Table};
use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use seedbo_core::gp::{GpDump, GpModel};
use seedbo_core::kinetics::STATE_NAMES;
use seedbo_core::mobo::{
    fit_models, hypervolume, iteration_gp_seed, optimize, reference_point, to_minimization,
    DesignSpace, Evaluation, OptimizationResult, ParetoArchive, Provenance, Sense,
};
use seedbo_core::seedtrain::presets::{REFERENCE_FLASK_VOLUMES, REFERENCE_INTERVAL};
use seedbo_core::seedtrain::{
    bands_csv, protocol_csv, simulate_seed_train, DesignPoint, ObjectiveMode, ObjectiveVector,
    SeedTrainResult, SimulateOptions,
};
use serde::Serialize;
use std::path::Path;

fn objective_columns(mode: ObjectiveMode) -> Vec<(&'static str, &'static str)> {
    let mut c = vec![("d", "h"), ("deviation_rate", "%")];
    if mode == ObjectiveMode::Four {
        c.extend([("titer_end", "mg/L"), ("viability_end", "%")]);
    }
    c
}

fn hypervolume_unit(mode: ObjectiveMode) -> String {
    objective_columns(mode).iter().map(|c| c.1).collect::<Vec<_>>().join("*")
}

fn from_minimization(y: &[f64], sense: &[Sense]) -> Vec<f64> {
    to_minimization(y, sense)
}

#[derive(Clone, Debug, Serialize)]
pub struct Volume {
    pub scale: String,
    /// L
    pub volume: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulationSummary {
    pub seed: u64,
    pub n_mc: usize,
    pub filling_volumes: Vec<Volume>,
    pub objectives: ObjectiveVector,
    pub feasible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// Share of Monte-Carlo samples with at least one range violation, %.
    pub violating_samples: f64,
}

fn simulate_design(cfg: &RunConfig, x: &[f64], bands: bool) -> Result<SeedTrainResult> {
    Ok(simulate_seed_train(
        &DesignPoint(x.to_vec()),
        &cfg.seeded_train(),
        &cfg.model,
        &cfg.integrator,
        SimulateOptions { production: true, bands },
    )?)
}

fn write_simulation(cfg: &RunConfig, x: &[f64], r: &SeedTrainResult, out: &Path) -> Result<SimulationSummary> {
    write_atomic(&out.join("protocol.csv"), protocol_csv(&r.protocol).as_bytes())?;
    if let Some(bands) = &r.bands {
        for (i, name) in STATE_NAMES.iter().enumerate() {
            write_atomic(&out.join("bands").join(format!("{name}.csv")), bands_csv(bands, i).as_bytes())?;
        }
    }
    let train = cfg.seed_train.with_design(&DesignPoint(x.to_vec()))?;
    let flags = &r.mc_violation_flags;
    let summary = SimulationSummary {
        seed: cfg.seed,
        n_mc: cfg.seed_train.n_mc,
        filling_volumes: train
            .scales
            .iter()
            .map(|s| Volume { scale: s.name.clone(), volume: s.filling_volume_target })
            .collect(),
        objectives: r.objectives,
        feasible: r.feasible,
        failure: r.failure.clone(),
        violating_samples: 100.0 * flags.iter().filter(|f| **f).count() as f64 / flags.len().max(1) as f64,
    };
    write_json(&out.join("objectives.json"), &summary)?;
    Ok(summary)
}

/// Simulates the configured volumes and writes the protocol, hourly bands and
/// objectives.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<SimulationSummary> {
    cfg.validate()?;
    let r = simulate_design(cfg, &[], true)?;
    write_simulation(cfg, &[], &r, out)
}

/// The fixed-interval protocol with the reference flask volumes.
pub fn cmd_reference(cfg: &RunConfig, out: &Path) -> Result<SimulationSummary> {
    cfg.validate()?;
    if cfg.design_space()?.dim() != REFERENCE_FLASK_VOLUMES.len() {
        bail!("the reference protocol needs {} flask scales", REFERENCE_FLASK_VOLUMES.len());
    }
    let mut c = cfg.clone();
    c.seed_train.fixed_passaging_interval = Some(REFERENCE_INTERVAL);
    let r = simulate_design(&c, &REFERENCE_FLASK_VOLUMES, true)?;
    write_simulation(&c, &REFERENCE_FLASK_VOLUMES, &r, out)
}

/// Runs the optimizer with the seed-train simulation as objective. Finished
/// evaluations are appended to `done` as they complete.
pub fn run_optimization(
    cfg: &RunConfig,
    done: &mut Vec<(Vec<f64>, Vec<f64>)>,
    quiet: bool,
) -> Result<OptimizationResult> {
    cfg.validate()?;
    let space = cfg.design_space()?;
    let ocfg = cfg.optimizer_config();
    let train = cfg.seeded_train();
    let mode = cfg.objectives;
    let opts = SimulateOptions { production: mode == ObjectiveMode::Four, bands: false };
    let total = ocfg.n_lhs + ocfg.n_iterations;
    let result = optimize(&space, &ocfg, |x: &[f64]| {
        let r = simulate_seed_train(&DesignPoint(x.to_vec()), &train, &cfg.model, &cfg.integrator, opts)?;
        let y = r.objectives.to_vec(mode);
        done.push((x.to_vec(), y.clone()));
        if !quiet {
            eprintln!("[{}/{total}] x = {x:.4?} -> {y:?}", done.len());
        }
        Ok::<_, seedbo_core::seedtrain::SeedTrainError>(y)
    })?;
    Ok(result)
}

#[derive(Clone, Debug, Serialize)]
pub struct ParetoPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OptimizationSummary {
    pub seed: u64,
    pub design_scales: Vec<String>,
    pub objectives: Vec<String>,
    pub senses: Vec<Sense>,
    pub n_lhs: usize,
    pub n_iterations: usize,
    pub n_evaluations: usize,
    /// Natural units.
    pub reference_point: Vec<f64>,
    /// Of the archive against `reference_point`.
    pub hypervolume: f64,
    pub hypervolume_unit: String,
    pub pareto: Vec<ParetoPoint>,
}

fn design_scales(cfg: &RunConfig, dim: usize) -> Vec<String> {
    cfg.seed_train.scales.iter().take(dim).map(|s| s.name.clone()).collect()
}

fn evaluation_table(cfg: &RunConfig, scales: &[String], entries: &[&Evaluation], ehvi: &[Option<f64>]) -> Table {
    let penalty = cfg.seed_train.penalty().to_vec(cfg.objectives);
    let mut cols: Vec<(String, String)> = vec![
        ("evaluation".into(), "-".into()),
        ("provenance".into(), "-".into()),
        ("iteration".into(), "-".into()),
    ];
    cols.extend(scales.iter().map(|s| (s.clone(), "L".to_string())));
    cols.extend(objective_columns(cfg.objectives).iter().map(|(c, u)| (c.to_string(), u.to_string())));
    cols.push(("feasible".into(), "-".into()));
    cols.push(("ehvi".into(), hypervolume_unit(cfg.objectives)));
    let mut t = Table::new(cols);
    for (i, e) in entries.iter().enumerate() {
        let mut row = vec![
            i.to_string(),
            match e.provenance {
                Provenance::Lhs => "lhs".into(),
                Provenance::Proposed => "proposed".into(),
            },
            e.iteration.map(|k| k.to_string()).unwrap_or_default(),
        ];
        row.extend(e.x.iter().map(|v| num(*v)));
        row.extend(e.y.iter().map(|v| num(*v)));
        row.push((e.y != penalty).to_string());
        row.push(ehvi[i].map(num).unwrap_or_default());
        t.push(row);
    }
    t
}

fn history_table(cfg: &RunConfig, scales: &[String], result: &OptimizationResult, upto: usize) -> Table {
    let entries: Vec<&Evaluation> = result.history[..upto].iter().collect();
    let ehvi: Vec<Option<f64>> = entries
        .iter()
        .map(|e| e.iteration.map(|k| result.iterations[k].ehvi))
        .collect();
    evaluation_table(cfg, scales, &entries, &ehvi)
}

fn pareto_table(cfg: &RunConfig, scales: &[String], archive: &ParetoArchive) -> Table {
    let entries: Vec<&Evaluation> = archive.entries.iter().collect();
    evaluation_table(cfg, scales, &entries, &vec![None; entries.len()])
}

/// Optimizes and writes history, Pareto set, protocols, surrogate dumps,
/// contour grids and (four objectives) spider data. On failure the
/// evaluations finished so far go to `history_partial.csv`.
pub fn cmd_optimize(cfg: &RunConfig, out: &Path, quiet: bool) -> Result<OptimizationSummary> {
    let mut done = Vec::new();
    match run_optimization(cfg, &mut done, quiet) {
        Ok(result) => write_optimization(cfg, &result, out),
        Err(e) => {
            if !done.is_empty() {
                let entries: Vec<Evaluation> = done
                    .into_iter()
                    .map(|(x, y)| Evaluation { x, y, provenance: Provenance::Lhs, iteration: None })
                    .collect();
                let scales = design_scales(cfg, entries[0].x.len());
                let refs: Vec<&Evaluation> = entries.iter().collect();
                let t = evaluation_table(cfg, &scales, &refs, &vec![None; refs.len()]);
                t.write(&out.join("history_partial.csv"))?;
            }
            Err(e)
        }
    }
}

pub fn write_optimization(cfg: &RunConfig, result: &OptimizationResult, out: &Path) -> Result<OptimizationSummary> {
    let space = cfg.design_space()?;
    let scales = design_scales(cfg, space.dim());
    let sense = &result.sense;
    history_table(cfg, &scales, result, result.history.len()).write(&out.join("history.csv"))?;
    pareto_table(cfg, &scales, &result.archive).write(&out.join("pareto.csv"))?;

    if cfg.report.pareto_protocols {
        let protocols: Vec<Result<String>> = result
            .archive
            .entries
            .par_iter()
            .map(|e| Ok(protocol_csv(&simulate_design(cfg, &e.x, false)?.protocol)))
            .collect();
        for (k, p) in protocols.into_iter().enumerate() {
            write_atomic(&out.join("protocols").join(format!("pareto_{k}.csv")), p?.as_bytes())?;
        }
    }

    let xs: Vec<Vec<f64>> = result.history.iter().map(|e| e.x.clone()).collect();
    let ys: Vec<Vec<f64>> = result.history.iter().map(|e| to_minimization(&e.y, sense)).collect();
    let ocfg = cfg.optimizer_config();
    let models = fit_models(&xs, &ys, &space, &ocfg, iteration_gp_seed(cfg.seed, ocfg.n_iterations))?;
    write_models(cfg, &models, &out.join("gp_models.json"))?;
    write_contours(cfg, result, &space, &scales, &models, &out.join("contours"))?;
    if cfg.objectives == ObjectiveMode::Four {
        write_spider(cfg, &result.archive, &out.join("spider.csv"))?;
    }

    let reference = &result.archive.reference_point;
    let summary = OptimizationSummary {
        seed: cfg.seed,
        design_scales: scales,
        objectives: objective_columns(cfg.objectives).iter().map(|c| c.0.to_string()).collect(),
        senses: sense.clone(),
        n_lhs: ocfg.n_lhs,
        n_iterations: ocfg.n_iterations,
        n_evaluations: result.history.len(),
        reference_point: from_minimization(reference, sense),
        hypervolume: result.archive.hypervolume(sense, reference)?,
        hypervolume_unit: hypervolume_unit(cfg.objectives),
        pareto: result
            .archive
            .entries
            .iter()
            .map(|e| ParetoPoint { x: e.x.clone(), y: e.y.clone() })
            .collect(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Serialize)]
struct ModelEntry<'a> {
    objective: &'a str,
    unit: &'a str,
    sense: Sense,
    /// Models are fitted to minimization-convention values.
    model: GpDump,
}

#[derive(Serialize)]
struct ModelFile<'a> {
    models: Vec<ModelEntry<'a>>,
}

fn write_models(cfg: &RunConfig, models: &[GpModel], path: &Path) -> Result<()> {
    let cols = objective_columns(cfg.objectives);
    let entries = models
        .iter()
        .zip(&cols)
        .zip(cfg.senses())
        .map(|((m, (objective, unit)), sense)| ModelEntry { objective, unit, sense, model: m.dump() })
        .collect();
    write_json(path, &ModelFile { models: entries })
}

/// Surrogate mean and standard deviation over every pair of design variables.
/// The other variables sit at the Pareto solution with the lowest deviation
/// rate (then shortest duration).
fn write_contours(
    cfg: &RunConfig,
    result: &OptimizationResult,
    space: &DesignSpace,
    scales: &[String],
    models: &[GpModel],
    dir: &Path,
) -> Result<()> {
    let anchor = result
        .archive
        .entries
        .iter()
        .min_by(|a, b| a.y[1].total_cmp(&b.y[1]).then(a.y[0].total_cmp(&b.y[0])))
        .context("empty Pareto archive")?
        .x
        .clone();
    let n = cfg.report.contour_resolution;
    let cols = objective_columns(cfg.objectives);
    let sense = cfg.senses();
    let grid = |[lo, hi]: [f64; 2], k: usize| lo + (hi - lo) * k as f64 / (n - 1) as f64;
    for i in 0..space.dim() {
        for j in i + 1..space.dim() {
            for (m, ((name, unit), s)) in models.iter().zip(cols.iter().zip(&sense)) {
                let mut t = Table::new([
                    (scales[i].as_str(), "L"),
                    (scales[j].as_str(), "L"),
                    ("mean", unit),
                    ("sd", unit),
                ]);
                let mut x = anchor.clone();
                for a in 0..n {
                    for b in 0..n {
                        x[i] = grid(space.bounds[i], a);
                        x[j] = grid(space.bounds[j], b);
                        let (mu, var) = m.predict_latent(&x);
                        let mean = if *s == Sense::Maximize { -mu } else { mu };
                        t.push(vec![num(x[i]), num(x[j]), num(mean), num(var.sqrt())]);
                    }
                }
                t.write(&dir.join(format!("{name}__{}__{}.csv", scales[i], scales[j])))?;
            }
        }
    }
    Ok(())
}

fn write_spider(cfg: &RunConfig, archive: &ParetoArchive, path: &Path) -> Result<()> {
    let mut cols = vec![("solution", "-")];
    cols.extend(objective_columns(cfg.objectives));
    let mut t = Table::new(cols);
    for (k, e) in archive.entries.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(e.y.iter().map(|v| num(*v)));
        t.push(row);
    }
    t.write(path)
}

fn mu_dir(f: f64) -> String {
    format!("mu_{f:.3}")
}

#[derive(Clone, Debug, Serialize)]
pub struct Scenario {
    pub mu_factor: f64,
    pub summary: OptimizationSummary,
}

/// One optimization per growth-rate multiplier, plus a comparison table.
pub fn cmd_sweep_mu(cfg: &RunConfig, out: &Path, quiet: bool) -> Result<Vec<Scenario>> {
    cfg.validate()?;
    let mut names: Vec<String> = cfg.sweep.mu_factors.iter().map(|f| mu_dir(*f)).collect();
    names.sort();
    names.dedup();
    if names.len() != cfg.sweep.mu_factors.len() {
        bail!("sweep.mu_factors must differ in the first three decimals");
    }
    let scenarios: Vec<Result<Scenario>> = cfg
        .sweep
        .mu_factors
        .par_iter()
        .map(|&f| {
            let c = cfg.with_mu_factor(f);
            let summary = cmd_optimize(&c, &out.join(mu_dir(f)), quiet)
                .with_context(|| format!("scenario mu x {f}"))?;
            Ok(Scenario { mu_factor: f, summary })
        })
        .collect();
    let scenarios: Vec<Scenario> = scenarios.into_iter().collect::<Result<_>>()?;

    let obj = objective_columns(cfg.objectives);
    let mut cols: Vec<(String, String)> = vec![
        ("mu_factor".into(), "-".into()),
        ("mu_max".into(), "1/h".into()),
        ("pareto_solutions".into(), "count".into()),
    ];
    for (name, unit) in &obj {
        cols.push((format!("best_{name}"), unit.to_string()));
        cols.push((format!("worst_{name}"), unit.to_string()));
    }
    let mut t = Table::new(cols);
    let sense = cfg.senses();
    for s in &scenarios {
        let mut row = vec![num(s.mu_factor), num(cfg.model.mu_max * s.mu_factor), s.summary.pareto.len().to_string()];
        for (k, sn) in sense.iter().enumerate() {
            let vals = s.summary.pareto.iter().map(|p| p.y[k]);
            let lo = vals.clone().fold(f64::INFINITY, f64::min);
            let hi = vals.fold(f64::NEG_INFINITY, f64::max);
            let (best, worst) = if *sn == Sense::Minimize { (lo, hi) } else { (hi, lo) };
            row.extend([num(best), num(worst)]);
        }
        t.push(row);
    }
    t.write(&out.join("comparison.csv"))?;
    Ok(scenarios)
}

#[derive(Clone, Debug, Serialize)]
pub struct BudgetPoint {
    pub budget: usize,
    pub n_evaluations: usize,
    pub pareto_solutions: usize,
    pub hypervolume: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StudySummary {
    pub seed: u64,
    /// Shared by every budget, natural units.
    pub reference_point: Vec<f64>,
    pub hypervolume_unit: String,
    pub budgets: Vec<BudgetPoint>,
}

/// Archives after each iteration budget. One run with the largest budget is
/// sliced: the history of a shorter run is a prefix of it.
pub fn cmd_iteration_study(cfg: &RunConfig, out: &Path, quiet: bool) -> Result<StudySummary> {
    let mut budgets = cfg.study.budgets.clone();
    budgets.sort_unstable();
    budgets.dedup();
    let mut c = cfg.clone();
    c.optimizer.n_iterations = *budgets.last().context("no budgets")?;
    let mut done = Vec::new();
    let result = run_optimization(&c, &mut done, quiet)?;
    let space = c.design_space()?;
    let scales = design_scales(&c, space.dim());
    let sense = &result.sense;
    let n_lhs = c.optimizer.n_lhs;

    let all: Vec<Vec<f64>> = result.history.iter().map(|e| to_minimization(&e.y, sense)).collect();
    let reference = reference_point(&all);
    history_table(&c, &scales, &result, result.history.len()).write(&out.join("history.csv"))?;

    let mut points = Vec::new();
    let mut t = Table::new([
        ("budget".to_string(), "iterations".to_string()),
        ("n_evaluations".to_string(), "count".to_string()),
        ("pareto_solutions".to_string(), "count".to_string()),
        ("hypervolume".to_string(), hypervolume_unit(c.objectives)),
    ]);
    for &b in &budgets {
        let prefix = &result.history[..n_lhs + b];
        let archive = ParetoArchive::from_history(prefix, sense);
        let front: Vec<Vec<f64>> = archive.entries.iter().map(|e| to_minimization(&e.y, sense)).collect();
        let hv = hypervolume(&front, &reference)?;
        pareto_table(&c, &scales, &archive).write(&out.join(format!("budget_{b}")).join("pareto.csv"))?;
        t.push(vec![b.to_string(), prefix.len().to_string(), archive.entries.len().to_string(), num(hv)]);
        points.push(BudgetPoint {
            budget: b,
            n_evaluations: prefix.len(),
            pareto_solutions: archive.entries.len(),
            hypervolume: hv,
        });
    }
    t.write(&out.join("hypervolume_vs_budget.csv"))?;
    let summary = StudySummary {
        seed: c.seed,
        reference_point: from_minimization(&reference, sense),
        hypervolume_unit: hypervolume_unit(c.objectives),
        budgets: points,
    };
    write_json(&out.join("study.json"), &summary)?;
    Ok(summary)
}

/// Canonical form of a valid configuration.
pub fn cmd_validate_config(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    cfg.to_toml()
}
