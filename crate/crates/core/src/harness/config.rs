use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bc::BcConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::expert::ShapedRewardConfig;
use crate::gail::DiscriminatorConfig;
use crate::rl::{PpoConfig, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ppo")]
    Ppo,
    #[serde(rename = "bc")]
    Bc,
    #[serde(rename = "bc+ppo")]
    BcPpo,
    #[serde(rename = "gail")]
    Gail,
    #[serde(rename = "trgail")]
    Trgail,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ppo, Method::Bc, Method::BcPpo, Method::Gail, Method::Trgail];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ppo => "ppo",
            Method::Bc => "bc",
            Method::BcPpo => "bc+ppo",
            Method::Gail => "gail",
            Method::Trgail => "trgail",
        }
    }

    pub fn uses_demonstrations(self) -> bool {
        self != Method::Ppo
    }

    /// Name usable as a path component.
    pub fn dir_name(self) -> &'static str {
        match self {
            Method::BcPpo => "bc-ppo",
            m => m.name(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}; expected ppo, bc, bc+ppo, gail or trgail")))
    }
}

/// How the expert fixture is trained and sampled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    pub shaped: ShapedRewardConfig,
    pub ppo: PpoConfig,
    pub budget: usize,
    /// Training stops once a checkpoint evaluation reaches this score.
    pub stop_at_score: Option<f64>,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub n_trajectories: usize,
    pub seed: u64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            shaped: ShapedRewardConfig::default(),
            ppo: PpoConfig {
                rollout_len: 1000,
                minibatch_size: 250,
                epochs: 4,
                policy_lr: 1e-3,
                value_lr: 1e-3,
                ..PpoConfig::tabular()
            },
            budget: 200_000,
            stop_at_score: Some(64.0),
            eval_every: 2,
            eval_episodes: 20,
            n_trajectories: 15,
            seed: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    pub demonstrations: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            demonstrations: vec![1, 5, 10, 15],
        }
    }
}

/// One experiment: a method, a demonstration count and a list of seeds.
/// The `sweep` table only matters to `compare_methods`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub method: Method,
    #[serde(default)]
    pub n_demonstrations: usize,
    pub seeds: Vec<u64>,
    /// Environment steps per run.
    pub budget: usize,
    /// Episodes of the final evaluation of the best checkpoint.
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Demonstration dataset; required by every method but `ppo`.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Checkpoint evaluation period in PPO iterations.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Episodes per checkpoint evaluation.
    #[serde(default = "default_checkpoint_episodes")]
    pub checkpoint_episodes: usize,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub discriminator: DiscriminatorConfig,
    #[serde(default)]
    pub bc: BcConfig,
    #[serde(default)]
    pub expert: ExpertConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    /// Worker threads for independent runs; 0 means one per core.
    #[serde(default)]
    pub jobs: usize,
}

fn default_eval_episodes() -> usize {
    100
}

fn default_eval_every() -> usize {
    5
}

fn default_checkpoint_episodes() -> usize {
    20
}

impl ExperimentConfig {
    pub fn new(env: &str, method: Method, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            env: EnvConfig::new(env),
            method,
            n_demonstrations: 0,
            seeds: vec![0],
            budget: if env == "point-pusher" { 1_000_000 } else { 200_000 },
            eval_episodes: default_eval_episodes(),
            dataset: None,
            out_dir: out_dir.into(),
            eval_every: default_eval_every(),
            checkpoint_episodes: default_checkpoint_episodes(),
            ppo: PpoConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            bc: BcConfig::default(),
            expert: ExpertConfig::default(),
            sweep: SweepConfig::default(),
            jobs: 1,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative `dataset` or `out_dir` is resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        if let Some(base) = path.parent() {
            if let Some(d) = cfg.dataset.take() {
                cfg.dataset = Some(base.join(d));
            }
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.budget == 0 {
            return Err(Error::config("budget must be positive"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes must be positive"));
        }
        self.ppo.validate()?;
        self.expert.ppo.validate()?;
        self.expert.shaped.validate()?;
        if self.sweep.methods.is_empty() || self.sweep.demonstrations.is_empty() {
            return Err(Error::config("a sweep needs at least one method and one demonstration count"));
        }
        Ok(())
    }

    /// Checks that `method` can run with `n_demonstrations`, before any
    /// compute is spent.
    pub fn check_method(&self, method: Method, n_demonstrations: usize) -> Result<()> {
        if !method.uses_demonstrations() {
            return Ok(());
        }
        if n_demonstrations == 0 {
            return Err(Error::config(format!("{method} needs at least one demonstration")));
        }
        if self.dataset.is_none() {
            return Err(Error::config(format!("{method} needs a demonstration dataset")));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            ppo: self.ppo.clone(),
            discriminator: self.discriminator.clone(),
            total_steps: self.budget,
            eval_every: self.eval_every,
            eval_episodes: self.checkpoint_episodes,
            stop_at_score: None,
        }
    }

    pub fn expert_train_config(&self) -> TrainConfig {
        TrainConfig {
            ppo: self.expert.ppo.clone(),
            discriminator: DiscriminatorConfig::default(),
            total_steps: self.expert.budget,
            eval_every: self.expert.eval_every,
            eval_episodes: self.expert.eval_episodes,
            stop_at_score: self.expert.stop_at_score,
        }
    }

    pub fn jobs(&self) -> usize {
        match self.jobs {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            n => n,
        }
    }
}
