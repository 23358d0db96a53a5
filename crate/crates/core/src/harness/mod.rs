//! Experiment orchestration: per-run training and evaluation, method
//! sweeps into result tables, plots, and audits of persisted runs.
//!
//! Layout of an output directory:
//!
//! ```text
//! <out>/<env>/<method>/n<demos>/seed<seed>/
//!     metrics.jsonl   one IterationMetrics per PPO iteration
//!     rollout.jsonl   the last rollout, one RolloutRecord per step
//!     best.policy     checkpoint with the best evaluation score
//!     final.policy    parameters at the end of training
//!     result.json     RunRecord (final evaluation of best.policy)
//!     timing.json     wall time, kept apart so result.json is reproducible
//! <out>/table.json, table.txt, table.timings.json
//! ```

mod audit;
mod config;
mod plot;
mod run;
mod table;

pub use audit::{audit_elbo, audit_rewards, recompute_elbo, ELBO_TOLERANCE};
pub use config::{ExperimentConfig, ExpertConfig, Method, SweepConfig};
pub use plot::{aggregate, emit_plots, find_runs, line_chart, Series, StoredRun, X_LABEL, Y_LABEL};
pub use run::{
    load_demonstrations, read_jsonl, rollout_records, run_dir, run_experiment, run_single, write_jsonl, RolloutRecord,
    RunOutput, RunRecord, BEST_CHECKPOINT, FINAL_CHECKPOINT, METRICS_FILE, RESULT_FILE, ROLLOUT_FILE,
};
pub use table::{cell_from_records, compare_methods, write_table, Cell, CellStatus, ResultTable, TABLE_JSON, TABLE_TEXT};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::make_env;
use crate::error::{Error, Result};
use crate::expert::{sample_demonstrations, train_expert};
use crate::gail::DemoDataset;
use crate::rl::{evaluate_policy, mean, stream, Policy, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertReport {
    pub env_steps: usize,
    pub best_eval_score: Option<f64>,
    /// Scores of `eval_episodes` fresh episodes of the returned checkpoint.
    pub eval_scores: Vec<usize>,
    pub eval_mean: f64,
}

/// Trains the expert of `cfg.expert` and evaluates its best checkpoint over
/// `cfg.eval_episodes` episodes.
pub fn train_expert_fixture(cfg: &ExperimentConfig) -> Result<(Policy, ExpertReport)> {
    let ex = &cfg.expert;
    let out = train_expert(&cfg.env, &ex.shaped, &cfg.expert_train_config(), ex.seed)?;
    let mut env = make_env(&cfg.env)?;
    let scores = evaluate_policy(
        &out.best_policy,
        env.as_mut(),
        cfg.eval_episodes,
        &mut stream(ex.seed, Stream::FinalEval),
    )?;
    let report = ExpertReport {
        env_steps: out.env_steps,
        best_eval_score: out.best_eval_score,
        eval_mean: mean(&scores),
        eval_scores: scores,
    };
    Ok((out.best_policy, report))
}

/// `n` demonstrations of `policy`, sampled from the expert seed.
pub fn sample_expert_dataset(cfg: &ExperimentConfig, policy: &Policy, n: usize) -> Result<DemoDataset> {
    sample_demonstrations(policy, &cfg.env, n, cfg.expert.seed)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub runs: usize,
    pub tables: usize,
    pub failures: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

fn verify_run(run: &StoredRun) -> Result<()> {
    let rec = &run.record;
    let rollout: Vec<RolloutRecord> = read_jsonl(&run.dir.join(ROLLOUT_FILE))?;
    audit_rewards(rec.method, &rollout)?;
    audit_elbo(&run.metrics, &rollout)?;
    if rec.final_scores.is_empty() || mean(&rec.final_scores) != rec.final_score {
        return Err(Error::protocol("final score is not the mean of the episode scores"));
    }
    if let Some(last) = run.metrics.last() {
        if last.env_steps != rec.env_steps {
            return Err(Error::protocol("env_steps disagrees with the metrics stream"));
        }
    }
    let env = make_env(&crate::env::EnvConfig::new(rec.env.clone()))?;
    let space = &env.spec().action_space;
    Policy::decode(&fs::read(run.dir.join(BEST_CHECKPOINT))?, space)?;
    Ok(())
}

fn verify_table(path: &Path, runs: &[StoredRun]) -> Result<()> {
    let table: ResultTable = serde_json::from_str(&fs::read_to_string(path)?)?;
    for cell in &table.cells {
        let CellStatus::Ok { mean_score, per_seed, .. } = &cell.status else {
            continue;
        };
        let n = if cell.method.uses_demonstrations() { cell.n_demonstrations } else { 0 };
        let mut records = Vec::new();
        for &seed in &table.seeds {
            let r = runs
                .iter()
                .map(|r| &r.record)
                .find(|r| r.env == table.env && r.method == cell.method && r.n_demonstrations == n && r.seed == seed)
                .ok_or_else(|| {
                    Error::protocol(format!("no stored run for {} n={n} seed {seed}", cell.method))
                })?;
            records.push(r.clone());
        }
        let again = cell_from_records(cell.method, cell.n_demonstrations, &records);
        match &again.status {
            CellStatus::Ok { mean_score: m, per_seed: p, .. } if m == mean_score && p == per_seed => {}
            _ => {
                return Err(Error::protocol(format!(
                    "{} n={} does not match its stored runs",
                    cell.method, cell.n_demonstrations
                )))
            }
        }
    }
    Ok(())
}

/// Re-checks every stored run under `root` (reward isolation, ELBO
/// bookkeeping, score arithmetic, loadable checkpoint) and every table
/// against the runs it summarizes.
pub fn verify(root: &Path) -> Result<VerifyReport> {
    let runs = find_runs(root)?;
    let mut report = VerifyReport {
        runs: runs.len(),
        ..Default::default()
    };
    for run in &runs {
        if let Err(e) = verify_run(run) {
            report.failures.push(format!("{}: {e}", run.dir.display()));
        }
    }
    let table = root.join(TABLE_JSON);
    if table.is_file() {
        report.tables = 1;
        if let Err(e) = verify_table(&table, &runs) {
            report.failures.push(format!("{}: {e}", table.display()));
        }
    }
    Ok(report)
}
