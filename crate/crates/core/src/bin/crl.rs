use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crl_core::augment::AugmentationKind;
use crl_core::runner::{self, AblationAxis, ExperimentConfig, RunOptions};
use crl_core::sac::UpdatePath;

#[derive(Parser)]
#[command(name = "crl", version, about = "Continual RL with state augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds overriding the config.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Output directory overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds trained in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Bypass the augmentation code path entirely.
    #[arg(long)]
    plain: bool,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = &self.seed_list {
            cfg.experiment.seeds = s.clone();
        }
        if let Some(o) = &self.out {
            cfg.experiment.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            path: if self.plain { UpdatePath::Plain } else { UpdatePath::Augmented },
            jobs: self.jobs,
            write_outputs: true,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one experiment across its seeds.
    Run(Common),
    /// Single-task plain-SAC reference curves.
    Reference(Common),
    /// Sweep memory size or epsilon.
    Ablate {
        #[arg(long)]
        axis: AblationAxis,
        #[command(flatten)]
        common: Common,
    },
    /// Aggregate existing run directories into one table.
    Report {
        dirs: Vec<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Relative runtime of augmentation kinds against no augmentation.
    Bench {
        /// Comma-separated kinds; defaults to all of them.
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<AugmentationKind>>,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run(c) => {
            let cfg = c.load()?;
            let r = runner::run_experiment(&cfg, c.options())?;
            println!(
                "{}: final performance {:.3} forgetting {:.3} ({} seeds, {} failed, {:.1}s)",
                r.label,
                r.final_performance.mean,
                r.forgetting.mean,
                r.per_seed.len(),
                r.failed_seeds.len(),
                r.runtime_seconds
            );
            println!("wrote {}", cfg.experiment.output_dir.display());
        }
        Command::Reference(c) => {
            let cfg = c.load()?;
            let records = runner::run_reference(&cfg, c.options())?;
            println!(
                "{} reference points written to {}",
                records.len(),
                cfg.experiment.output_dir.join("reference.csv").display()
            );
        }
        Command::Ablate { axis, common } => {
            let cfg = common.load()?;
            let (rows, _) = runner::run_ablation(&cfg, axis, common.options())?;
            for r in rows {
                println!("{}={}: {:.3}", r.axis, r.value, r.final_performance);
            }
        }
        Command::Report { dirs, out } => {
            if dirs.is_empty() {
                bail!("report needs at least one run directory");
            }
            let rows = runner::report(&dirs)?;
            match out {
                Some(p) => runner::write_csv(&p, &rows)?,
                None => {
                    let mut w = csv::Writer::from_writer(std::io::stdout());
                    for r in &rows {
                        w.serialize(r)?;
                    }
                    w.flush()?;
                }
            }
        }
        Command::Bench { kinds, common } => {
            let cfg = common.load()?;
            let kinds = kinds.unwrap_or_else(|| AugmentationKind::ALL.to_vec());
            let rows = runner::bench(&cfg, &kinds, common.options())?;
            for r in rows {
                println!("{:<24} {:>10.2}s {:>6}", r.label, r.runtime_seconds, r.relative);
            }
        }
    }
    Ok(())
}
