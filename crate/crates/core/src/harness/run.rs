use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::audit::{audit_elbo, audit_rewards};
use super::config::{ExperimentConfig, Method};
use crate::bc::{bc_plus_rl, bc_train};
use crate::env::make_env;
use crate::error::{Error, Result};
use crate::expert::{load_dataset, write_atomic};
use crate::gail::DemoDataset;
use crate::pgm::ChannelSet;
use crate::rl::{
    evaluate_policy, init_networks, mean, stream, train, IterationMetrics, Policy, RolloutBuffer, Stream, TrainSetup,
};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const ROLLOUT_FILE: &str = "rollout.jsonl";
pub const RESULT_FILE: &str = "result.json";
pub const TIMING_FILE: &str = "timing.json";
pub const BEST_CHECKPOINT: &str = "best.policy";
pub const FINAL_CHECKPOINT: &str = "final.policy";
pub const BC_FILE: &str = "bc.jsonl";

/// One step of the last rollout of a run, as persisted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub env: usize,
    pub t: usize,
    pub task_reward: f64,
    pub achieved: bool,
    /// Log-emission of every channel, by channel name.
    pub emissions: BTreeMap<String, f64>,
    pub composite: f64,
    pub log_prob: f64,
    pub done: bool,
}

pub fn rollout_records(buf: &RolloutBuffer) -> Vec<RolloutRecord> {
    (0..buf.len())
        .map(|i| RolloutRecord {
            env: buf.env_index[i],
            t: buf.times[i],
            task_reward: buf.task_rewards[i],
            achieved: buf.achieved[i],
            emissions: buf.channel_names.iter().cloned().zip(buf.emissions[i].iter().copied()).collect(),
            composite: buf.rewards[i],
            log_prob: buf.log_probs[i],
            done: buf.dones[i],
        })
        .collect()
}

/// Summary of one seed of one experiment. Contains nothing that depends on
/// wall-clock time, so reruns reproduce it byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub env: String,
    pub method: Method,
    pub n_demonstrations: usize,
    pub seed: u64,
    pub env_steps: usize,
    pub best_eval_score: Option<f64>,
    /// Final evaluation of the best checkpoint, one entry per episode.
    pub final_scores: Vec<usize>,
    pub final_score: f64,
    /// Mean score of the demonstrations the run learned from.
    pub demo_mean_score: Option<f64>,
}

pub struct RunOutput {
    pub record: RunRecord,
    pub dir: PathBuf,
    pub metrics: Vec<IterationMetrics>,
    pub rollout: Vec<RolloutRecord>,
    pub wall_seconds: f64,
}

pub fn run_dir(out_dir: &Path, env: &str, method: Method, n_demonstrations: usize, seed: u64) -> PathBuf {
    let n = if method.uses_demonstrations() { n_demonstrations } else { 0 };
    out_dir
        .join(env)
        .join(method.dir_name())
        .join(format!("n{n}"))
        .join(format!("seed{seed}"))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Loads the configured dataset cut to `n` trajectories, or `None` for
/// methods that ignore demonstrations.
pub fn load_demonstrations(cfg: &ExperimentConfig, method: Method, n: usize) -> Result<Option<DemoDataset>> {
    cfg.check_method(method, n)?;
    if !method.uses_demonstrations() {
        return Ok(None);
    }
    let path = cfg.dataset.as_ref().expect("checked above");
    let full = load_dataset(path, Some(&cfg.env.id))?;
    if full.trajectories.len() < n {
        return Err(Error::config(format!(
            "{} holds {} trajectories, {n} requested",
            path.display(),
            full.trajectories.len()
        )));
    }
    Ok(Some(full.truncated(n)?))
}

/// Trains and evaluates one seed, writing its files under [`run_dir`].
pub fn run_single(
    cfg: &ExperimentConfig,
    method: Method,
    n_demonstrations: usize,
    demos: Option<&DemoDataset>,
    seed: u64,
) -> Result<RunOutput> {
    cfg.check_method(method, n_demonstrations)?;
    if method.uses_demonstrations() && demos.is_none() {
        return Err(Error::config(format!("{method} needs a demonstration dataset")));
    }
    let started = Instant::now();
    let env_cfg = &cfg.env;
    let train_cfg = cfg.train_config();
    let dir = run_dir(&cfg.out_dir, &env_cfg.id, method, n_demonstrations, seed);
    fs::create_dir_all(&dir)?;

    let mut bc_log = None;
    let (best, last, metrics, rollout, env_steps, best_eval_score): (Policy, Policy, _, _, usize, _) = match method {
        Method::Bc => {
            let probe = make_env(env_cfg)?;
            let ds = demos.expect("checked above");
            ds.check_env(&probe.spec().id)?;
            let (initial, _) = init_networks(probe.as_ref(), &cfg.ppo, seed)?;
            let (cloned, report) = bc_train(ds, &initial, &cfg.bc, seed)?;
            bc_log = Some(report);
            (cloned.clone(), cloned, Vec::new(), RolloutBuffer::default(), 0, None)
        }
        Method::BcPpo => {
            let (out, _) = bc_plus_rl(demos.expect("checked above"), env_cfg, &cfg.bc, &train_cfg, seed)?;
            (out.best_policy, out.policy, out.metrics, out.last_rollout, out.env_steps, out.best_eval_score)
        }
        Method::Ppo | Method::Gail | Method::Trgail => {
            let channels = match method {
                Method::Ppo => ChannelSet::task_only(),
                Method::Gail => ChannelSet::imitation_only(),
                _ => ChannelSet::task_and_imitation(),
            };
            let out = train(
                TrainSetup {
                    env: env_cfg,
                    channels,
                    demos: if method == Method::Ppo { None } else { demos },
                    train_discriminator: method != Method::Ppo,
                    init_policy: None,
                    seed,
                },
                &train_cfg,
            )?;
            (out.best_policy, out.policy, out.metrics, out.last_rollout, out.env_steps, out.best_eval_score)
        }
    };

    let mut eval_env = make_env(env_cfg)?;
    let final_scores = evaluate_policy(&best, eval_env.as_mut(), cfg.eval_episodes, &mut stream(seed, Stream::FinalEval))?;
    let record = RunRecord {
        env: env_cfg.id.clone(),
        method,
        n_demonstrations: if method.uses_demonstrations() { n_demonstrations } else { 0 },
        seed,
        env_steps,
        best_eval_score,
        final_score: mean(&final_scores),
        final_scores,
        demo_mean_score: demos.filter(|_| method.uses_demonstrations()).map(|d| d.mean_score),
    };
    let rollout = rollout_records(&rollout);
    audit_rewards(method, &rollout)?;
    audit_elbo(&metrics, &rollout)?;

    write_jsonl(&dir.join(METRICS_FILE), &metrics)?;
    write_jsonl(&dir.join(ROLLOUT_FILE), &rollout)?;
    if let Some(report) = &bc_log {
        let rows: Vec<_> = report
            .validation_nll
            .iter()
            .enumerate()
            .map(|(epoch, nll)| serde_json::json!({ "epoch": epoch, "validation_nll": nll }))
            .collect();
        write_jsonl(&dir.join(BC_FILE), &rows)?;
    }
    write_atomic(&dir.join(BEST_CHECKPOINT), &best.encode())?;
    write_atomic(&dir.join(FINAL_CHECKPOINT), &last.encode())?;
    write_json(&dir.join(RESULT_FILE), &record)?;
    let wall_seconds = started.elapsed().as_secs_f64();
    write_json(&dir.join(TIMING_FILE), &serde_json::json!({ "wall_seconds": wall_seconds }))?;
    log::info!(
        "{} {} n={} seed={} score {:.2} ({:.1}s)",
        record.env,
        method,
        record.n_demonstrations,
        seed,
        record.final_score,
        wall_seconds
    );
    Ok(RunOutput {
        record,
        dir,
        metrics,
        rollout,
        wall_seconds,
    })
}

/// Runs `jobs` closures at a time on scoped threads; results keep the
/// order of `tasks`.
pub(crate) fn parallel_map<T: Sync, U: Send>(tasks: &[T], jobs: usize, f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    if jobs <= 1 || tasks.len() <= 1 {
        return tasks.iter().map(f).collect();
    }
    let next = Mutex::new(0usize);
    let slots: Vec<Mutex<Option<U>>> = tasks.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.min(tasks.len()) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= tasks.len() {
                    break;
                }
                let out = f(&tasks[i]);
                *slots[i].lock().unwrap() = Some(out);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().unwrap()).collect()
}

/// Every configured seed of `cfg.method` with `cfg.n_demonstrations`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    let demos = load_demonstrations(cfg, cfg.method, cfg.n_demonstrations)?;
    parallel_map(&cfg.seeds, cfg.jobs(), |&seed| {
        run_single(cfg, cfg.method, cfg.n_demonstrations, demos.as_ref(), seed)
    })
    .into_iter()
    .collect()
}
