use rand::Rng;

use super::policy::{Policy, ValueNet};
use crate::env::{Action, ActionSpace, EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::gail::Discriminator;
use crate::pgm::{sum_emissions, ChannelSet, EmissionContext};

/// Environments stepped round by round, each keeping its own episode.
pub struct EnvPool {
    envs: Vec<Box<dyn Environment>>,
    obs: Vec<Option<Vec<f64>>>,
    running: Vec<Episode>,
}

#[derive(Clone, Debug, Default)]
struct Episode {
    score: usize,
    elbo: f64,
    /// Whether the episode began inside the rollout being collected.
    started_here: bool,
}

impl EnvPool {
    pub fn new(envs: Vec<Box<dyn Environment>>) -> Result<Self> {
        if envs.is_empty() {
            return Err(Error::config("an environment pool needs at least one environment"));
        }
        let n = envs.len();
        Ok(Self {
            envs,
            obs: vec![None; n],
            running: vec![Episode::default(); n],
        })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn spec(&self) -> &EnvSpec {
        self.envs[0].spec()
    }
}

/// Contiguous steps of one environment inside a buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub env: usize,
    pub start: usize,
    pub end: usize,
    /// `V(s_end)` when the segment stops mid-episode, else 0.
    pub bootstrap: f64,
}

/// One on-policy batch. Steps of each environment are stored contiguously,
/// environments in index order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub obs_dim: usize,
    pub action_storage: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    /// Network encoding of the actions (one-hot when discrete).
    pub encoded_actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Channel names, in the order of each step's `emissions`.
    pub channel_names: Vec<String>,
    pub emissions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub task_rewards: Vec<f64>,
    pub achieved: Vec<bool>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// Step index within the episode, starting at 0.
    pub times: Vec<usize>,
    pub env_index: Vec<usize>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub segments: Vec<Segment>,
    /// Scores of episodes that ended during collection.
    pub episode_scores: Vec<usize>,
    /// `Σ_t (composite reward − log π)` of episodes that both began and
    /// ended during collection.
    pub episode_elbos: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn obs_row(&self, i: usize) -> &[f64] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn action_row(&self, i: usize) -> &[f64] {
        &self.actions[i * self.action_storage..(i + 1) * self.action_storage]
    }

    pub fn encoded_action_row(&self, i: usize) -> &[f64] {
        let w = self.encoded_actions.len() / self.len().max(1);
        &self.encoded_actions[i * w..(i + 1) * w]
    }

    /// Mean over complete episodes of `Σ_t (r + Σ log-emissions − log π)`.
    pub fn elbo_estimate(&self) -> Option<f64> {
        (!self.episode_elbos.is_empty())
            .then(|| self.episode_elbos.iter().sum::<f64>() / self.episode_elbos.len() as f64)
    }

    pub fn mean_episode_score(&self) -> Option<f64> {
        (!self.episode_scores.is_empty())
            .then(|| self.episode_scores.iter().sum::<usize>() as f64 / self.episode_scores.len() as f64)
    }

    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.len() as f64
    }
}

/// Collects exactly `n_steps` transitions, split evenly over the pool.
///
/// Rewards are the composite of `channels`, with imitation channels reading
/// `discriminator` as it was when collection started. Environments that
/// need a new episode are reset with a seed drawn from `rng`, which also
/// drives action sampling.
pub fn collect_rollout<R: Rng + ?Sized>(
    policy: &Policy,
    value_fn: &ValueNet,
    pool: &mut EnvPool,
    channels: &ChannelSet,
    discriminator: Option<&Discriminator>,
    n_steps: usize,
    rng: &mut R,
) -> Result<RolloutBuffer> {
    let n_envs = pool.len();
    if n_steps == 0 || n_steps % n_envs != 0 {
        return Err(Error::config(format!(
            "rollout length {n_steps} must be a positive multiple of the pool size {n_envs}"
        )));
    }
    if channels.needs_discriminator() && discriminator.is_none() {
        return Err(Error::protocol("imitation channels need a discriminator snapshot"));
    }
    let spec = pool.spec().clone();
    let space: &ActionSpace = &spec.action_space;
    let mut buf = RolloutBuffer {
        obs_dim: spec.obs_dim,
        action_storage: space.storage_dim(),
        channel_names: channels.names().into_iter().map(String::from).collect(),
        ..Default::default()
    };
    let per_env = n_steps / n_envs;
    let mut encoded = Vec::new();
    for e in 0..n_envs {
        let start = buf.len();
        pool.running[e].started_here = false;
        for _ in 0..per_env {
            let obs = match pool.obs[e].take() {
                Some(o) => o,
                None => {
                    let seed = rng.next_u64();
                    pool.running[e] = Episode {
                        started_here: true,
                        ..Episode::default()
                    };
                    pool.envs[e].reset_seeded(seed)
                }
            };
            let t = pool.envs[e].elapsed();
            let (action, log_prob) = policy.act(&obs, rng)?;
            let value = value_fn.value(&obs)?;
            let result = pool.envs[e].step(&action)?;
            encoded.clear();
            space.encode_into(&action, &mut encoded);
            let ctx = EmissionContext {
                obs: &obs,
                action: &action,
                encoded_action: &encoded,
                task_reward: result.task_reward,
                info: Some(&result.info),
                discriminator,
            };
            let emissions = channels.emissions(&ctx)?;
            let reward = sum_emissions(&emissions);
            let ep = &mut pool.running[e];
            ep.score += result.achieved as usize;
            ep.elbo += reward - log_prob;
            if result.done {
                buf.episode_scores.push(ep.score);
                if ep.started_here {
                    buf.episode_elbos.push(ep.elbo);
                }
            } else {
                pool.obs[e] = Some(result.next_obs);
            }
            buf.obs.extend_from_slice(&obs);
            match &action {
                Action::Discrete(k) => buf.actions.push(*k as f64),
                Action::Continuous(a) => buf.actions.extend_from_slice(a),
            }
            buf.encoded_actions.extend_from_slice(&encoded);
            buf.log_probs.push(log_prob);
            buf.emissions.push(emissions);
            buf.rewards.push(reward);
            buf.task_rewards.push(result.task_reward);
            buf.achieved.push(result.achieved);
            buf.values.push(value);
            buf.dones.push(result.done);
            buf.times.push(t);
            buf.env_index.push(e);
        }
        let bootstrap = match &pool.obs[e] {
            Some(next) => value_fn.value(next)?,
            None => 0.0,
        };
        buf.segments.push(Segment {
            env: e,
            start,
            end: buf.len(),
            bootstrap,
        });
    }
    Ok(buf)
}

/// Generalized advantage estimation over every segment of `buf`:
/// `δ_t = r_t + γ V(s_{t+1})(1 − done_t) − V(s_t)`,
/// `A_t = δ_t + γλ (1 − done_t) A_{t+1}`, `R_t = A_t + V(s_t)`.
///
/// With `normalize`, advantages are then standardized across the buffer
/// unless their standard deviation is below `1e-8`.
pub fn compute_gae(buf: &mut RolloutBuffer, gamma: f64, lambda: f64, normalize: bool) {
    let n = buf.len();
    buf.advantages = vec![0.0; n];
    buf.returns = vec![0.0; n];
    for seg in &buf.segments {
        let mut next_adv = 0.0;
        let mut next_value = seg.bootstrap;
        for t in (seg.start..seg.end).rev() {
            let live = if buf.dones[t] { 0.0 } else { 1.0 };
            let delta = buf.rewards[t] + gamma * next_value * live - buf.values[t];
            let adv = delta + gamma * lambda * live * next_adv;
            buf.advantages[t] = adv;
            buf.returns[t] = adv + buf.values[t];
            next_adv = adv;
            next_value = buf.values[t];
        }
    }
    if normalize && n > 1 {
        let mean = buf.advantages.iter().sum::<f64>() / n as f64;
        let var = buf.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd >= 1e-8 {
            buf.advantages.iter_mut().for_each(|a| *a = (*a - mean) / sd);
        }
    }
}
