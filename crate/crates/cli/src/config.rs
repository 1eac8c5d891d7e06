//! Run configuration files.

use anyhow::{bail, Context, Result};
use seedbo_core::integrator::IntegratorConfig;
use seedbo_core::kinetics::{ModelParameters, STATE_DIM};
use seedbo_core::mobo::{DesignSpace, OptimizerConfig, Sense};
use seedbo_core::rng::{split_seed, STREAM_MONTE_CARLO};
use seedbo_core::seedtrain::presets::{self, BioreactorLayout};
use seedbo_core::seedtrain::{ObjectiveMode, SeedTrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream in the run.
    pub seed: u64,
    #[serde(default)]
    pub objectives: ObjectiveMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub seed_train: SeedTrainConfig,
    #[serde(default)]
    pub model: ModelParameters,
    #[serde(default = "IntegratorConfig::culture_default")]
    pub integrator: IntegratorConfig,
    /// Bounds of the optimized filling volumes. When absent, every leading
    /// scale with a non-degenerate working range is a design variable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_space: Option<DesignSpace>,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

fn default_optimizer() -> OptimizerConfig {
    OptimizerConfig::new(Vec::new())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Multipliers of every maximum growth rate in the train.
    pub mu_factors: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            mu_factors: vec![0.95, 1.0, 1.05],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// Optimizer iterations after the initial design.
    pub budgets: Vec<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            budgets: vec![10, 20, 30],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// Grid points per axis of the surrogate contour grids.
    #[serde(default = "default_contour_resolution")]
    pub contour_resolution: usize,
    /// Re-simulate every Pareto solution and write its passaging protocol.
    #[serde(default = "default_true")]
    pub pareto_protocols: bool,
}

fn default_contour_resolution() -> usize {
    50
}

fn default_true() -> bool {
    true
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            contour_resolution: default_contour_resolution(),
            pareto_protocols: true,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub objectives: Option<ObjectiveMode>,
    pub flasks: Option<usize>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).context("configuration is not valid TOML")?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("configuration field `{path}`: {}", e.into_inner())
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Standard presets: `n_flasks` shake flasks, three bioreactors and the
    /// production vessel.
    pub fn preset(n_flasks: usize) -> Result<Self> {
        let Some(seed_train) = presets::seed_train(n_flasks, BioreactorLayout::Standard) else {
            bail!("no preset for {n_flasks} flasks (3, 4 or 5 are available)");
        };
        Ok(Self::with_train(seed_train, presets::flask_bounds(n_flasks)))
    }

    /// Five flasks at fixed volumes passaged every 72 h.
    pub fn reference_preset() -> Self {
        Self::with_train(presets::reference_train(BioreactorLayout::Standard), None)
    }

    fn with_train(seed_train: SeedTrainConfig, bounds: Option<Vec<[f64; 2]>>) -> Self {
        Self {
            seed: 7,
            objectives: ObjectiveMode::Two,
            output_dir: None,
            seed_train,
            model: ModelParameters::default(),
            integrator: IntegratorConfig::culture_default(),
            design_space: bounds.map(|bounds| DesignSpace { bounds }),
            optimizer: default_optimizer(),
            sweep: SweepConfig::default(),
            study: StudyConfig::default(),
            report: ReportConfig::default(),
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(mode) = o.objectives {
            self.objectives = mode;
        }
        if let Some(n) = o.flasks {
            self.set_flasks(n)?;
        }
        Ok(())
    }

    /// Swap the flask scales for the `n`-flask preset and keep everything else.
    fn set_flasks(&mut self, n: usize) -> Result<()> {
        let Some(preset) = presets::seed_train(n, BioreactorLayout::Standard) else {
            bail!("--flasks must be 3, 4 or 5, got {n}");
        };
        let current = self.design_dim();
        let mut scales: Vec<_> = preset.scales[..n].to_vec();
        scales.extend(self.seed_train.scales[current..].iter().cloned());
        self.seed_train.scales = scales;
        self.design_space = presets::flask_bounds(n).map(|bounds| DesignSpace { bounds });
        Ok(())
    }

    fn design_dim(&self) -> usize {
        match &self.design_space {
            Some(s) => s.dim(),
            None => self
                .seed_train
                .scales
                .iter()
                .take_while(|s| s.working_volume_range[0] < s.working_volume_range[1])
                .count(),
        }
    }

    pub fn design_space(&self) -> Result<DesignSpace> {
        let space = match &self.design_space {
            Some(s) => s.clone(),
            None => DesignSpace {
                bounds: self
                    .seed_train
                    .scales
                    .iter()
                    .take(self.design_dim())
                    .map(|s| s.working_volume_range)
                    .collect(),
            },
        };
        space.validate().context("design_space")?;
        Ok(space)
    }

    pub fn senses(&self) -> Vec<Sense> {
        match self.objectives {
            ObjectiveMode::Two => vec![Sense::Minimize; 2],
            ObjectiveMode::Four => {
                vec![Sense::Minimize, Sense::Minimize, Sense::Maximize, Sense::Maximize]
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.seed_train.validate().context("seed_train")?;
        self.model.validate().context("model")?;
        self.integrator.validate(STATE_DIM).context("integrator")?;
        let space = self.design_space()?;
        if space.dim() >= self.seed_train.scales.len() {
            bail!(
                "design_space has {} variables but the train has only {} scales",
                space.dim(),
                self.seed_train.scales.len()
            );
        }
        for (s, [lo, hi]) in self.seed_train.scales.iter().zip(&space.bounds) {
            let [wlo, whi] = s.working_volume_range;
            if *lo < wlo || *hi > whi {
                bail!(
                    "design_space bounds [{lo}, {hi}] for {} leave its working range [{wlo}, {whi}]",
                    s.name
                );
            }
        }
        if !self.optimizer.objective_sense.is_empty() && self.optimizer.objective_sense != self.senses() {
            bail!("optimizer.objective_sense disagrees with objectives = {:?}", self.objectives);
        }
        self.optimizer_config().validate().context("optimizer")?;
        if self.sweep.mu_factors.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            bail!("sweep.mu_factors must be positive");
        }
        if self.study.budgets.is_empty() {
            bail!("study.budgets must not be empty");
        }
        if self.report.contour_resolution < 2 {
            bail!("report.contour_resolution must be at least 2");
        }
        Ok(())
    }

    /// The seed train with its Monte-Carlo stream derived from the run seed.
    pub fn seeded_train(&self) -> SeedTrainConfig {
        let mut t = self.seed_train.clone();
        t.uncertainty.rng_seed = split_seed(self.seed, STREAM_MONTE_CARLO);
        t
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        let mut o = self.optimizer.clone();
        o.objective_sense = self.senses();
        o.rng_seed = self.seed;
        o
    }

    /// Every maximum growth rate in the train multiplied by `factor`.
    pub fn with_mu_factor(&self, factor: f64) -> Self {
        let mut c = self.clone();
        c.model.mu_max *= factor;
        for s in &mut c.seed_train.scales {
            if let Some(m) = s.mu_max_override.as_mut() {
                *m *= factor;
            }
        }
        c
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("seedbo-out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_canonical() {
        for cfg in [RunConfig::preset(5).unwrap(), RunConfig::reference_preset()] {
            let text = cfg.to_toml().unwrap();
            let back = RunConfig::from_toml_str(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_toml().unwrap(), text);
        }
    }

    #[test]
    fn unknown_and_missing_fields_are_named() {
        let mut text = RunConfig::preset(4).unwrap().to_toml().unwrap();
        text = text.replacen("n_mc =", "n_mcc =", 1);
        let err = format!("{:#}", RunConfig::from_toml_str(&text).unwrap_err());
        assert!(err.contains("seed_train"), "{err}");
        assert!(err.contains("n_mcc"), "{err}");

        let text = RunConfig::preset(4).unwrap().to_toml().unwrap();
        let text: String = text.lines().filter(|l| !l.starts_with("alpha")).collect::<Vec<_>>().join("\n");
        let err = format!("{:#}", RunConfig::from_toml_str(&text).unwrap_err());
        assert!(err.contains("alpha"), "{err}");
    }

    #[test]
    fn partial_model_section_keeps_defaults() {
        let mut text = RunConfig::preset(3).unwrap().to_toml().unwrap();
        let start = text.find("[model]").unwrap();
        let end = start + text[start..].find("\n[").map_or(text.len() - start, |e| e + 1);
        text.replace_range(start..end, "[model]\nmu_max = 0.03\n");
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.model.mu_max, 0.03);
        assert_eq!(cfg.model.k_glc, ModelParameters::default().k_glc);
    }

    #[test]
    fn flask_override_swaps_the_flasks_only() {
        let mut cfg = RunConfig::preset(5).unwrap();
        cfg.seed_train.n_mc = 10;
        cfg.apply(&Overrides { flasks: Some(3), seed: Some(99), ..Default::default() }).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.seed_train.n_mc, 10);
        assert_eq!(cfg.seed_train.scales, RunConfig::preset(3).unwrap().seed_train.scales);
        assert_eq!(cfg.design_space().unwrap().dim(), 3);
        cfg.validate().unwrap();
        assert!(cfg.apply(&Overrides { flasks: Some(6), ..Default::default() }).is_err());
    }

    #[test]
    fn implied_design_space() {
        let mut cfg = RunConfig::preset(4).unwrap();
        let explicit = cfg.design_space().unwrap();
        cfg.design_space = None;
        assert_eq!(cfg.design_space().unwrap(), explicit);
        assert_eq!(RunConfig::reference_preset().design_space().unwrap().dim(), 5);
    }

    #[test]
    fn mu_factor_scales_overrides() {
        let cfg = RunConfig::preset(5).unwrap();
        let fast = cfg.with_mu_factor(1.05);
        assert!((fast.model.mu_max - cfg.model.mu_max * 1.05).abs() < 1e-15);
        let o = |c: &RunConfig| c.seed_train.scales.iter().find_map(|s| s.mu_max_override).unwrap();
        assert!((o(&fast) - o(&cfg) * 1.05).abs() < 1e-15);
        assert_eq!(cfg.with_mu_factor(1.0), cfg);
    }

    #[test]
    fn conflicting_sense_is_rejected() {
        let mut cfg = RunConfig::preset(5).unwrap();
        cfg.optimizer.objective_sense = vec![Sense::Maximize, Sense::Minimize];
        assert!(cfg.validate().is_err());
    }
}
