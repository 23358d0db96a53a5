//! Expert policies trained on dense shaping, and their demonstrations.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::env::{make_env, EnvConfig, Step, Trajectory};
use crate::error::{Error, Result};
use crate::gail::DemoDataset;
use crate::pgm::{ChannelSet, OptimalityChannel};
use crate::rl::{stream, train, Policy, Stream, TrainConfig, TrainOutcome, TrainSetup};

/// Dense shaping added to the task reward while training experts only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapedRewardConfig {
    pub object_goal: f64,
    pub agent_object: f64,
    pub control: f64,
    /// Extra reward on achieved steps, on top of the task reward.
    pub achievement_bonus: f64,
}

impl Default for ShapedRewardConfig {
    fn default() -> Self {
        Self {
            object_goal: 1.0,
            agent_object: 0.5,
            control: 0.01,
            achievement_bonus: 0.0,
        }
    }
}

impl ShapedRewardConfig {
    pub fn zero() -> Self {
        Self {
            object_goal: 0.0,
            agent_object: 0.0,
            control: 0.0,
            achievement_bonus: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.object_goal, self.agent_object, self.control, self.achievement_bonus];
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("shaping weights must be finite"));
        }
        Ok(())
    }

    /// The task channel plus a `shaping` channel built from these weights.
    pub fn channels(&self) -> Result<ChannelSet> {
        self.validate()?;
        let c = *self;
        let shaping = OptimalityChannel::custom("shaping", move |ctx| {
            let Some(info) = ctx.info else { return 0.0 };
            c.achievement_bonus * ctx.task_reward
                - c.object_goal * info.object_goal_dist
                - c.agent_object * info.agent_object_dist
                - c.control * info.control_cost
        });
        ChannelSet::new(vec![OptimalityChannel::task(), shaping])
    }
}

/// Max-ent PPO on the shaped reward; the outcome's `best_policy` is the
/// checkpoint with the best evaluation score.
pub fn train_expert(env: &EnvConfig, shaped: &ShapedRewardConfig, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    train(
        TrainSetup {
            env,
            channels: shaped.channels()?,
            demos: None,
            train_discriminator: false,
            init_policy: None,
            seed,
        },
        cfg,
    )
}

/// `n_traj` full stochastic episodes of `policy`, each recording the reset
/// seed that reproduces it.
pub fn sample_demonstrations(policy: &Policy, env: &EnvConfig, n_traj: usize, seed: u64) -> Result<DemoDataset> {
    if n_traj == 0 {
        return Err(Error::config("at least one demonstration is required"));
    }
    let mut e = make_env(env)?;
    let mut rng = stream(seed, Stream::Demos);
    let mut trajectories = Vec::with_capacity(n_traj);
    for _ in 0..n_traj {
        let reset_seed = rng.next_u64();
        let mut obs = e.reset_seeded(reset_seed);
        let mut steps = Vec::with_capacity(e.spec().horizon);
        loop {
            let (action, log_prob) = policy.act(&obs, &mut rng)?;
            let r = e.step(&action)?;
            steps.push(Step {
                obs,
                action,
                task_reward: r.task_reward,
                achieved: r.achieved,
                log_prob,
            });
            if r.done {
                break;
            }
            obs = r.next_obs;
        }
        trajectories.push(Trajectory {
            steps,
            seed: Some(reset_seed),
        });
    }
    let spec = e.spec();
    DemoDataset::new(&spec.id, spec.obs_dim, spec.action_space.clone(), spec.horizon, trajectories)
}

/// Writes to a temporary sibling and renames it into place.
pub fn save_dataset(dataset: &DemoDataset, path: &Path) -> Result<()> {
    write_atomic(path, &dataset.encode())
}

/// Loads a dataset, refusing one recorded on a different environment.
pub fn load_dataset(path: &Path, env_id: Option<&str>) -> Result<DemoDataset> {
    let ds = DemoDataset::decode(&fs::read(path)?)?;
    if let Some(id) = env_id {
        ds.check_env(id)?;
    }
    Ok(ds)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{replay, Action};
    use crate::rl::init_networks;

    #[test]
    fn demonstrations_replay_exactly() {
        let cfg = EnvConfig::new("grid-push");
        let env = make_env(&cfg).unwrap();
        let (policy, _) = init_networks(env.as_ref(), &Default::default(), 4).unwrap();
        let ds = sample_demonstrations(&policy, &cfg, 3, 9).unwrap();
        assert_eq!(ds.trajectories[0].len(), 100);
        let mut e = make_env(&cfg).unwrap();
        for t in &ds.trajectories {
            let actions: Vec<Action> = t.steps.iter().map(|s| s.action.clone()).collect();
            let rewards = replay(e.as_mut(), t.seed.unwrap(), &actions).unwrap();
            let recorded: Vec<f64> = t.steps.iter().map(|s| s.task_reward).collect();
            assert_eq!(rewards, recorded);
        }
    }

    #[test]
    fn zero_shaping_adds_nothing() {
        let set = ShapedRewardConfig::zero().channels().unwrap();
        assert_eq!(set.names(), vec!["shaping", "task"]);
    }
}
