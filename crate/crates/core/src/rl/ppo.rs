use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::buffer::RolloutBuffer;
use super::policy::{column, Policy, ValueNet};
use crate::error::{Error, Result};
use crate::math::{clip_grad_norm, value_and_grad, Activation, AdamState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_ratio: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub rollout_len: usize,
    pub policy_lr: f64,
    pub value_lr: f64,
    /// Number of environments sharing each rollout.
    pub n_envs: usize,
    pub max_grad_norm: Option<f64>,
    pub normalize_advantages: bool,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub log_std_init: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            epochs: 10,
            minibatch_size: 256,
            rollout_len: 2048,
            policy_lr: 3e-4,
            value_lr: 3e-4,
            n_envs: 1,
            max_grad_norm: Some(0.5),
            normalize_advantages: true,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            log_std_init: -0.5,
        }
    }
}

impl PpoConfig {
    /// Defaults for discrete tabular problems.
    pub fn tabular() -> Self {
        Self {
            entropy_coef: 0.05,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_ratio > 0.0) || !(self.entropy_coef >= 0.0) || !(self.value_coef >= 0.0) {
            return bad("clip_ratio must be positive and coefficients non-negative");
        }
        if self.minibatch_size == 0 || self.rollout_len % self.minibatch_size != 0 {
            return bad("rollout_len must be a positive multiple of minibatch_size");
        }
        if self.n_envs == 0 || self.rollout_len % self.n_envs != 0 {
            return bad("rollout_len must be a multiple of n_envs");
        }
        if !(self.policy_lr > 0.0 && self.value_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Optimizer state of both networks.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoOptimizers {
    pub policy: AdamState,
    pub value: AdamState,
}

impl PpoOptimizers {
    pub fn new(policy: &Policy, value: &ValueNet, cfg: &PpoConfig) -> Self {
        Self {
            policy: AdamState::new(policy.n_params(), cfg.policy_lr),
            value: AdamState::new(value.params().len(), cfg.value_lr),
        }
    }
}

/// Clipped-surrogate policy steps and squared-error value steps over
/// shuffled minibatches. `buf` must already carry advantages and returns.
/// Stats are means over the minibatches of the final epoch.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut Policy,
    value_fn: &mut ValueNet,
    opt: &mut PpoOptimizers,
    buf: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    let n = buf.len();
    if buf.advantages.len() != n || buf.returns.len() != n {
        return Err(Error::protocol("advantages must be computed before an update"));
    }
    let mb = cfg.minibatch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    let eps = cfg.clip_ratio;
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut acc = UpdateStats::default();
        let mut count = 0.0;
        for (k, idx) in order.chunks(mb).enumerate() {
            let m = idx.len();
            let mut obs = Vec::with_capacity(m * buf.obs_dim);
            let mut acts = Vec::with_capacity(m * buf.action_storage);
            let (mut old, mut adv, mut ret) = (Vec::with_capacity(m), Vec::with_capacity(m), Vec::with_capacity(m));
            for &i in idx {
                obs.extend_from_slice(buf.obs_row(i));
                acts.extend_from_slice(buf.action_row(i));
                old.push(buf.log_probs[i]);
                adv.push(buf.advantages[i]);
                ret.push(buf.returns[i]);
            }
            let (old_c, adv_c, ret_c) = (column(&old), column(&adv), column(&ret));

            let mut new_lp = Vec::new();
            let mut entropy = 0.0;
            let mut surrogate = Vec::new();
            let pol: &Policy = policy;
            let (ploss, mut pgrad) = value_and_grad(&pol.flat_params(), |tape, p| {
                let terms = pol.terms_on_tape(tape, p, &obs, &acts);
                let old_v = tape.constant(old_c.clone());
                let diff = tape.sub(terms.log_probs, old_v);
                let ratio = tape.exp(diff);
                let adv_v = tape.constant(adv_c.clone());
                let surr1 = tape.mul(ratio, adv_v);
                let clipped = tape.clamp(ratio, 1.0 - eps, 1.0 + eps);
                let surr2 = tape.mul(clipped, adv_v);
                let obj = tape.min(surr1, surr2);
                let mean_obj = tape.mean(obj);
                let ent = tape.scale(terms.entropy, cfg.entropy_coef);
                let gain = tape.add(mean_obj, ent);
                new_lp = tape.value(terms.log_probs).data.clone();
                entropy = tape.scalar_value(terms.entropy);
                surrogate = tape.value(obj).data.clone();
                Ok(tape.scale(gain, -1.0))
            })?;

            let ratios: Vec<f64> = new_lp.iter().zip(&old).map(|(a, b)| (a - b).exp()).collect();
            if epoch == 0 && k == 0 {
                if let Some(r) = ratios.iter().find(|r| (**r - 1.0).abs() > 1e-12) {
                    return Err(Error::protocol(format!(
                        "buffer was not produced by the current policy (ratio {r})"
                    )));
                }
            }
            for ((s, r), a) in surrogate.iter().zip(&ratios).zip(&adv) {
                let bound = r.clamp(1.0 - eps, 1.0 + eps) * a;
                if *s > bound {
                    return Err(Error::protocol(format!("surrogate {s} exceeds its clipped bound {bound}")));
                }
            }

            let vnet: &ValueNet = value_fn;
            let (vloss, mut vgrad) = value_and_grad(vnet.params(), |tape, p| {
                let v = vnet.values_on_tape(tape, p, &obs);
                let target = tape.constant(ret_c.clone());
                let err = tape.sub(v, target);
                let sq = tape.mul(err, err);
                let mse = tape.mean(sq);
                Ok(tape.scale(mse, cfg.value_coef))
            })?;

            if let Some(max) = cfg.max_grad_norm {
                clip_grad_norm(&mut pgrad, max);
                clip_grad_norm(&mut vgrad, max);
            }
            let mut flat = policy.flat_params();
            opt.policy.step(&mut flat, &pgrad)?;
            policy.set_flat_params(&flat)?;
            opt.value.step(value_fn.params_mut(), &vgrad)?;

            acc.policy_loss += ploss;
            acc.value_loss += vloss;
            acc.entropy += entropy;
            acc.approx_kl += old.iter().zip(&new_lp).map(|(o, n)| o - n).sum::<f64>() / m as f64;
            acc.clip_fraction += ratios.iter().filter(|r| (**r - 1.0).abs() > eps).count() as f64 / m as f64;
            count += 1.0;
        }
        if epoch + 1 == cfg.epochs {
            stats = UpdateStats {
                policy_loss: acc.policy_loss / count,
                value_loss: acc.value_loss / count,
                entropy: acc.entropy / count,
                approx_kl: acc.approx_kl / count,
                clip_fraction: acc.clip_fraction / count,
            };
        }
    }
    Ok(stats)
}
