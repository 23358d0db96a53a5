//! Environments with binary task-achievement rewards.
//!
//! Every environment is a deterministic state machine once reset with a
//! seed: the same seed and action sequence always yield the same steps.
//! Episodes run for exactly `horizon` steps; achieving the task does not end
//! an episode.

mod grid_push;
mod point_pusher;
mod tabular;

pub use grid_push::GridPush;
pub use point_pusher::PointPusher;
pub use tabular::TabularEnv;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ActionSpace {
    Continuous { low: Vec<f64>, high: Vec<f64> },
    Discrete { n: usize },
}

impl ActionSpace {
    /// Width of the action as fed to networks (one-hot for discrete).
    pub fn encoded_dim(&self) -> usize {
        match self {
            ActionSpace::Continuous { low, .. } => low.len(),
            ActionSpace::Discrete { n } => *n,
        }
    }

    /// Number of floats used to store one action.
    pub fn storage_dim(&self) -> usize {
        match self {
            ActionSpace::Continuous { low, .. } => low.len(),
            ActionSpace::Discrete { .. } => 1,
        }
    }

    pub fn encode_into(&self, action: &Action, out: &mut Vec<f64>) {
        match (self, action) {
            (ActionSpace::Discrete { n }, Action::Discrete(k)) => {
                out.extend((0..*n).map(|i| if i == *k { 1.0 } else { 0.0 }))
            }
            (ActionSpace::Continuous { .. }, Action::Continuous(a)) => out.extend_from_slice(a),
            _ => panic!("action does not belong to this action space"),
        }
    }

    pub fn check(&self, action: &Action) -> Result<()> {
        match (self, action) {
            (ActionSpace::Discrete { n }, Action::Discrete(k)) if k < n => Ok(()),
            (ActionSpace::Continuous { low, .. }, Action::Continuous(a)) if a.len() == low.len() => Ok(()),
            _ => Err(Error::protocol(format!("action {action:?} is outside {self:?}"))),
        }
    }

    pub fn decode(&self, stored: &[f64]) -> Action {
        match self {
            ActionSpace::Discrete { .. } => Action::Discrete(stored[0] as usize),
            ActionSpace::Continuous { .. } => Action::Continuous(stored.to_vec()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    /// Flat storage form: the index for discrete actions, the vector otherwise.
    pub fn to_storage(&self) -> Vec<f64> {
        match self {
            Action::Discrete(k) => vec![*k as f64],
            Action::Continuous(a) => a.clone(),
        }
    }
}

/// Which entities are drawn at random on reset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Randomization {
    #[serde(default)]
    pub agent: bool,
    #[serde(default)]
    pub object: bool,
    #[serde(default)]
    pub goal: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: String,
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub horizon: usize,
    pub goal_radius: Option<f64>,
    pub randomization: Randomization,
}

/// Distances used by dense shaping; never part of the sparse task signal.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepInfo {
    pub object_goal_dist: f64,
    pub agent_object_dist: f64,
    pub control_cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_obs: Vec<f64>,
    pub task_reward: f64,
    pub achieved: bool,
    pub done: bool,
    pub info: StepInfo,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts an episode; randomized entities are drawn from a generator
    /// seeded with `seed`.
    fn reset_seeded(&mut self, seed: u64) -> Vec<f64>;

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        let seed = rng.next_u64();
        self.reset_seeded(seed)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult>;

    /// Goal condition on the current state.
    fn task_achieved(&self) -> bool;

    fn observe(&self) -> Vec<f64>;

    /// Steps taken in the current episode.
    fn elapsed(&self) -> usize;
}

/// One recorded step of an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub action: Action,
    pub task_reward: f64,
    pub achieved: bool,
    pub log_prob: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// Reset seed that reproduces the episode's initial state.
    pub seed: Option<u64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Number of steps on which the task was achieved.
pub fn episode_score(traj: &Trajectory) -> usize {
    traj.steps.iter().filter(|s| s.achieved).count()
}

/// Environment selection as written in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub id: String,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub randomization: Option<Randomization>,
}

impl EnvConfig {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            horizon: None,
            randomization: None,
        }
    }
}

/// Builds an environment from its id: `point-pusher`, `grid-push`,
/// `chain-<k>` or `bandit`.
pub fn make_env(cfg: &EnvConfig) -> Result<Box<dyn Environment>> {
    let id = cfg.id.as_str();
    let env: Box<dyn Environment> = match id {
        "point-pusher" => {
            let mut e = PointPusher::new(cfg.horizon.unwrap_or(100));
            if let Some(r) = cfg.randomization {
                e.set_randomization(r);
            }
            Box::new(e)
        }
        "grid-push" => {
            let mut e = GridPush::new(5, cfg.horizon.unwrap_or(100));
            if let Some(r) = cfg.randomization {
                e.set_randomization(r);
            }
            Box::new(e)
        }
        "bandit" => Box::new(TabularEnv::bandit()),
        _ => {
            let k = id
                .strip_prefix("chain-")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 2)
                .ok_or_else(|| Error::config(format!("unknown environment id {id:?}")))?;
            Box::new(TabularEnv::chain(k, cfg.horizon.unwrap_or(2 * k)))
        }
    };
    Ok(env)
}

/// Replays `actions` from `seed`, returning the task reward of every step.
pub fn replay(env: &mut dyn Environment, seed: u64, actions: &[Action]) -> Result<Vec<f64>> {
    env.reset_seeded(seed);
    actions
        .iter()
        .map(|a| env.step(a).map(|r| r.task_reward))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(achieved: bool) -> Step {
        Step {
            obs: vec![],
            action: Action::Discrete(0),
            task_reward: achieved as u8 as f64,
            achieved,
            log_prob: 0.0,
        }
    }

    #[test]
    fn score_counts_achieved_steps() {
        let never = Trajectory {
            steps: (0..100).map(|_| step(false)).collect(),
            seed: None,
        };
        assert_eq!(episode_score(&never), 0);
        // achieved from step k (1-based) through 100
        let k = 37;
        let late = Trajectory {
            steps: (1..=100).map(|t| step(t >= k)).collect(),
            seed: None,
        };
        assert_eq!(episode_score(&late), 100 - k + 1);
    }

    #[test]
    fn env_ids() {
        for id in ["point-pusher", "grid-push", "chain-4", "bandit"] {
            let env = make_env(&EnvConfig::new(id)).unwrap();
            assert_eq!(env.spec().id, id);
        }
        assert!(make_env(&EnvConfig::new("pusher-3d")).is_err());
        assert!(make_env(&EnvConfig::new("chain-1")).is_err());
    }
}
