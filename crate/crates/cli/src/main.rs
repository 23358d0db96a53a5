use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use trgail_core::env::make_env;
use trgail_core::expert::{load_dataset, save_dataset};
use trgail_core::harness::{
    compare_methods, emit_plots, find_runs, run_experiment, sample_expert_dataset, train_expert_fixture,
    ExperimentConfig, Method,
};
use trgail_core::rl::Policy;

#[derive(Parser)]
#[command(name = "trgail", version, about = "Task-reward GAIL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Overrides {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Replace the configured seeds with this one.
    #[arg(long)]
    seed: Option<u64>,
    /// Output location.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    /// Number of demonstrations.
    #[arg(long)]
    demos: Option<usize>,
}

impl Overrides {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config).with_context(|| format!("reading {}", self.config.display()))?;
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
            cfg.expert.seed = s;
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(n) = self.demos {
            cfg.n_demonstrations = n;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train an expert or sample its demonstrations.
    #[command(subcommand)]
    Expert(ExpertCommand),
    /// Run one method for every configured seed.
    Run(Overrides),
    /// Run the configured methods and demonstration counts into a table.
    Sweep(Overrides),
    /// Draw learning curves of every run under a directory.
    Plot {
        /// Directory holding runs.
        runs: PathBuf,
        /// Where the SVG files go (defaults to the runs directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-audit every stored run and table under a directory.
    Verify { runs: PathBuf },
}

#[derive(Subcommand)]
enum ExpertCommand {
    /// Train on the shaped reward; writes the best checkpoint and a report.
    Train(Overrides),
    /// Sample demonstrations from a trained expert checkpoint.
    Sample {
        #[command(flatten)]
        overrides: Overrides,
        /// Expert checkpoint written by `expert train`.
        #[arg(long)]
        policy: PathBuf,
    },
}

fn write(path: &PathBuf, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Expert(ExpertCommand::Train(o)) => {
            let cfg = o.load()?;
            let out = o
                .out
                .clone()
                .unwrap_or_else(|| cfg.out_dir.join("expert").join(format!("{}.policy", cfg.env.id)));
            let (policy, report) = train_expert_fixture(&cfg)?;
            write(&out, &policy.encode())?;
            let report_path = out.with_extension("json");
            write(&report_path, serde_json::to_string_pretty(&report)?.as_bytes())?;
            println!(
                "expert: {} env steps, mean score {:.2} over {} episodes -> {}",
                report.env_steps,
                report.eval_mean,
                report.eval_scores.len(),
                out.display()
            );
        }
        Command::Expert(ExpertCommand::Sample { overrides: o, policy }) => {
            let cfg = o.load()?;
            let env = make_env(&cfg.env)?;
            let bytes = std::fs::read(&policy).with_context(|| format!("reading {}", policy.display()))?;
            let expert = Policy::decode(&bytes, &env.spec().action_space)?;
            let n = o.demos.unwrap_or(cfg.expert.n_trajectories);
            let out = o
                .out
                .clone()
                .or_else(|| cfg.dataset.clone())
                .context("no --out given and no dataset path configured")?;
            let ds = sample_expert_dataset(&cfg, &expert, n)?;
            save_dataset(&ds, &out)?;
            // read back through the checking loader
            let back = load_dataset(&out, Some(&cfg.env.id))?;
            println!("{} demonstrations, mean score {:.2} -> {}", back.trajectories.len(), back.mean_score, out.display());
        }
        Command::Run(o) => {
            let mut cfg = o.load()?;
            if let Some(out) = &o.out {
                cfg.out_dir = out.clone();
            }
            for r in run_experiment(&cfg)? {
                println!(
                    "{} {} n={} seed {}: score {:.2} -> {}",
                    r.record.env,
                    r.record.method,
                    r.record.n_demonstrations,
                    r.record.seed,
                    r.record.final_score,
                    r.dir.display()
                );
            }
        }
        Command::Sweep(o) => {
            let mut cfg = o.load()?;
            if let Some(out) = &o.out {
                cfg.out_dir = out.clone();
            }
            if let Some(m) = o.method {
                cfg.sweep.methods = vec![m];
            }
            if let Some(n) = o.demos {
                cfg.sweep.demonstrations = vec![n];
            }
            let table = compare_methods(&cfg)?;
            print!("{}", table.render());
            return Ok(table.all_ok());
        }
        Command::Plot { runs, out } => {
            let stored = find_runs(&runs)?;
            if stored.is_empty() {
                bail!("no runs under {}", runs.display());
            }
            for p in emit_plots(&stored, out.as_ref().unwrap_or(&runs))? {
                println!("{}", p.display());
            }
        }
        Command::Verify { runs } => {
            let report = trgail_core::harness::verify(&runs)?;
            for f in &report.failures {
                eprintln!("FAIL {f}");
            }
            println!(
                "{} runs, {} tables checked, {} failures",
                report.runs,
                report.tables,
                report.failures.len()
            );
            return Ok(report.ok());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
