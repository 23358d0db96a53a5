//! Behavior cloning, and PPO initialized from a cloned policy.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::env::{make_env, EnvConfig};
use crate::error::{Error, Result};
use crate::gail::DemoDataset;
use crate::math::{value_and_grad, AdamState};
use crate::pgm::ChannelSet;
use crate::rl::{init_networks, stream, train, Policy, Stream, TrainConfig, TrainOutcome, TrainSetup};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcConfig {
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            minibatch_size: 64,
            learning_rate: 1e-3,
            validation_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BcReport {
    /// Held-out NLL after each epoch, starting with the untrained policy.
    pub validation_nll: Vec<f64>,
    pub best_epoch: usize,
}

struct Pairs {
    obs: Vec<f64>,
    actions: Vec<f64>,
    obs_dim: usize,
    act_dim: usize,
}

impl Pairs {
    fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut o = Vec::with_capacity(idx.len() * self.obs_dim);
        let mut a = Vec::with_capacity(idx.len() * self.act_dim);
        for &i in idx {
            o.extend_from_slice(&self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]);
            a.extend_from_slice(&self.actions[i * self.act_dim..(i + 1) * self.act_dim]);
        }
        (o, a)
    }
}

/// Mean negative log-likelihood of `actions` at `obs`.
fn nll(policy: &Policy, obs: &[f64], actions: &[f64]) -> Result<f64> {
    let (v, _) = value_and_grad(&policy.flat_params(), |tape, p| {
        let terms = policy.terms_on_tape(tape, p, obs, actions);
        let m = tape.mean(terms.log_probs);
        Ok(tape.scale(m, -1.0))
    })?;
    Ok(v)
}

/// Minimizes the expert actions' mean NLL with minibatch Adam. A random
/// `validation_fraction` of pairs is held out; the parameters with the best
/// held-out NLL (the untrained policy included) are returned.
pub fn bc_train(dataset: &DemoDataset, policy: &Policy, cfg: &BcConfig, seed: u64) -> Result<(Policy, BcReport)> {
    if !(0.0..0.5).contains(&cfg.validation_fraction) {
        return Err(Error::config("validation_fraction must lie in [0, 0.5)"));
    }
    if cfg.minibatch_size == 0 {
        return Err(Error::config("minibatch_size must be positive"));
    }
    let act_dim = dataset.action_space.storage_dim();
    let mut pairs = Pairs {
        obs: Vec::new(),
        actions: Vec::new(),
        obs_dim: dataset.obs_dim,
        act_dim,
    };
    for step in dataset.trajectories.iter().flat_map(|t| &t.steps) {
        pairs.obs.extend_from_slice(&step.obs);
        pairs.actions.extend(step.action.to_storage());
    }
    let n = pairs.obs.len() / pairs.obs_dim;
    if n == 0 {
        return Err(Error::protocol("behavior cloning needs at least one expert step"));
    }
    let mut rng = stream(seed, Stream::Clone);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let n_val = ((n as f64) * cfg.validation_fraction).floor() as usize;
    let (val_idx, train_idx) = idx.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let (val_obs, val_act) = if n_val > 0 {
        pairs.gather(val_idx)
    } else {
        pairs.gather(&train_idx)
    };

    let mut current = policy.clone();
    let mut best = policy.clone();
    let mut best_nll = nll(policy, &val_obs, &val_act)?;
    let mut report = BcReport {
        validation_nll: vec![best_nll],
        best_epoch: 0,
    };
    let mut opt = AdamState::new(policy.n_params(), cfg.learning_rate);
    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        for chunk in train_idx.chunks(cfg.minibatch_size) {
            let (o, a) = pairs.gather(chunk);
            let pol = &current;
            let (_, g) = value_and_grad(&pol.flat_params(), |tape, p| {
                let terms = pol.terms_on_tape(tape, p, &o, &a);
                let m = tape.mean(terms.log_probs);
                Ok(tape.scale(m, -1.0))
            })?;
            let mut flat = current.flat_params();
            opt.step(&mut flat, &g)?;
            current.set_flat_params(&flat)?;
        }
        let v = nll(&current, &val_obs, &val_act)?;
        report.validation_nll.push(v);
        if v < best_nll {
            best_nll = v;
            best = current.clone();
            report.best_epoch = epoch;
        }
    }
    Ok((best, report))
}

/// Behavior cloning from the run's initial policy, then PPO on the task
/// channel alone from the cloned parameters. `log_std` is reset to its PPO
/// initial value and the value network is freshly initialized.
pub fn bc_plus_rl(
    dataset: &DemoDataset,
    env: &EnvConfig,
    bc_cfg: &BcConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(TrainOutcome, Policy)> {
    let probe = make_env(env)?;
    dataset.check_env(&probe.spec().id)?;
    let (initial, _) = init_networks(probe.as_ref(), &cfg.ppo, seed)?;
    let (mut cloned, _) = bc_train(dataset, &initial, bc_cfg, seed)?;
    let bc_artifact = cloned.clone();
    cloned.set_log_std(cfg.ppo.log_std_init);
    let out = train(
        TrainSetup {
            env,
            channels: ChannelSet::task_only(),
            demos: None,
            train_discriminator: false,
            init_policy: Some(cloned),
            seed,
        },
        cfg,
    )?;
    Ok((out, bc_artifact))
}
