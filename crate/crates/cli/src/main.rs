use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use safeid::ConstraintMode;
use safeid_cli::config::read_config;
use safeid_cli::runner::{load_sweep_dir, run, sweep};
use safeid_cli::RunConfig;

#[derive(Parser)]
#[command(
    name = "safeid",
    version,
    about = "Safe online identification with barrier-filtered control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write trajectory.csv and metrics.csv.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run every *.toml in a directory, one output directory per file.
    Sweep {
        #[arg(long)]
        configs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load and check a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

/// Flags that replace the config key of the same name.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    mode: Option<ConstraintMode>,
    #[arg(long)]
    est_hz: Option<f64>,
    #[arg(long)]
    qp_hz: Option<f64>,
    #[arg(long)]
    dt_sim: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    d_bar: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.mode {
            cfg.barrier.mode = v;
        }
        if let Some(v) = self.d_bar {
            cfg.barrier.d_bar = v;
        }
        if let Some(v) = self.est_hz {
            cfg.schedule.est_hz = v;
        }
        if let Some(v) = self.qp_hz {
            cfg.schedule.qp_hz = v;
        }
        if let Some(v) = self.dt_sim {
            cfg.schedule.dt_sim = v;
        }
        if let Some(v) = self.horizon {
            cfg.schedule.horizon = v;
        }
        if let Some(v) = self.seed {
            cfg.schedule.seed = v;
        }
        if let Some(v) = self.gamma {
            cfg.estimator.gamma = v;
        }
        if let Some(v) = self.r {
            cfg.estimator.r = v;
        }
    }
}

fn resolve(config: Option<&PathBuf>, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = match config {
        Some(p) => read_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            out,
            overrides,
        } => {
            let cfg = resolve(config.as_ref(), &overrides)?;
            let out = out
                .or_else(|| cfg.out.clone())
                .context("no output directory: pass --out or set `out` in the config")?;
            let (_, metrics) = run(&cfg, &out)?;
            for (k, v) in metrics.entries() {
                println!("{k:<20} {v}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { configs, out } => {
            let entries = load_sweep_dir(&configs)?;
            if entries.is_empty() {
                anyhow::bail!("no *.toml files in {}", configs.display());
            }
            let outcomes = sweep(entries, &out)?;
            let failed = outcomes.iter().filter(|o| o.result.is_err()).count();
            for o in &outcomes {
                match &o.result {
                    Ok(m) => println!(
                        "{:<24} ok     minB {:.6}  tPsiZero {:?}",
                        o.name, m.min_b, m.t_psi_zero
                    ),
                    Err(e) => println!("{:<24} FAILED {e}", o.name),
                }
            }
            println!(
                "comparison table: {}",
                out.join(safeid_cli::runner::COMPARISON_FILE).display()
            );
            Ok(if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Validate { config, overrides } => {
            let cfg = resolve(Some(&config), &overrides)?;
            println!("{} is valid (beta = {})", config.display(), cfg.beta());
            Ok(ExitCode::SUCCESS)
        }
    }
}
