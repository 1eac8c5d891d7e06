use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use seedbo_cli::{commands, Overrides, RunConfig};
use seedbo_core::seedtrain::ObjectiveMode;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "seedbo", version, about = "Seed-train simulation and filling-volume optimization")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Simulate the configured filling volumes.
    Simulate(Common),
    /// Optimize the flask filling volumes.
    Optimize(Common),
    /// Simulate the fixed 72 h reference protocol.
    Reference(Common),
    /// Optimize once per growth-rate multiplier.
    SweepMu(Common),
    /// Archive quality after each iteration budget.
    IterationStudy(Common),
    /// Check a configuration and print its canonical form.
    ValidateConfig(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    objectives: Option<Objectives>,
    /// Use the preset flask scales for 3, 4 or 5 flasks.
    #[arg(long)]
    flasks: Option<usize>,
    /// No per-evaluation progress on stderr.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Objectives {
    Two,
    Four,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            seed: self.seed,
            objectives: self.objectives.map(|o| match o {
                Objectives::Two => ObjectiveMode::Two,
                Objectives::Four => ObjectiveMode::Four,
            }),
            flasks: self.flasks,
        })?;
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.verb {
        Verb::Simulate(c) => {
            let cfg = c.load()?;
            let out = cfg.output_dir(c.out.as_deref());
            let s = commands::cmd_simulate(&cfg, &out)?;
            println!("d = {} h, D = {} %  ({})", s.objectives.d, s.objectives.deviation_rate, out.display());
        }
        Verb::Reference(c) => {
            let cfg = c.load()?;
            let out = cfg.output_dir(c.out.as_deref());
            let s = commands::cmd_reference(&cfg, &out)?;
            println!("reference: d = {} h, D = {} %  ({})", s.objectives.d, s.objectives.deviation_rate, out.display());
        }
        Verb::Optimize(c) => {
            let cfg = c.load()?;
            let out = cfg.output_dir(c.out.as_deref());
            let s = commands::cmd_optimize(&cfg, &out, c.quiet)?;
            println!("{} Pareto solutions, hypervolume {} {}  ({})", s.pareto.len(), s.hypervolume, s.hypervolume_unit, out.display());
            for p in &s.pareto {
                println!("  {:?} -> {:?}", p.x, p.y);
            }
        }
        Verb::SweepMu(c) => {
            let cfg = c.load()?;
            let out = cfg.output_dir(c.out.as_deref());
            for s in commands::cmd_sweep_mu(&cfg, &out, c.quiet)? {
                let best_d = s.summary.pareto.iter().map(|p| p.y[0]).fold(f64::INFINITY, f64::min);
                println!("mu x {}: {} Pareto solutions, shortest d {} h", s.mu_factor, s.summary.pareto.len(), best_d);
            }
        }
        Verb::IterationStudy(c) => {
            let cfg = c.load()?;
            let out = cfg.output_dir(c.out.as_deref());
            for b in commands::cmd_iteration_study(&cfg, &out, c.quiet)?.budgets {
                println!("budget {}: {} Pareto solutions, hypervolume {}", b.budget, b.pareto_solutions, b.hypervolume);
            }
        }
        Verb::ValidateConfig(c) => {
            print!("{}", commands::cmd_validate_config(&c.load()?)?);
        }
    }
    Ok(())
}
