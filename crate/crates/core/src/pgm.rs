//! Optimality emission channels and their composition.
//!
//! Each channel contributes a per-step log-emission `log p(Oⁿ = 1 | s, a)`.
//! Channels are independent, so the composite reward is the sum of their
//! log-emissions and the lower bound on `log p(O¹..ᴺ)` is the expectation of
//! `Σ_t [Σ_n log p(Oⁿ_t | s_t, a_t) − log q(a_t | s_t)]`.
//!
//! Emissions are unnormalized potentials: the task channel returns the
//! binary reward itself, so its "probability" for an achieved step is `e`.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{Action, ActionSpace, StepInfo, Trajectory};
use crate::error::{Error, Result};
use crate::gail::Discriminator;

/// Everything a channel may look at for one step.
#[derive(Clone, Copy, Debug)]
pub struct EmissionContext<'a> {
    /// Observation the action was taken in.
    pub obs: &'a [f64],
    pub action: &'a Action,
    /// Network encoding of `action` (one-hot for discrete spaces).
    pub encoded_action: &'a [f64],
    pub task_reward: f64,
    /// Shaping distances, when the step came straight from an environment.
    pub info: Option<&'a StepInfo>,
    /// Parameter snapshot read by imitation channels.
    pub discriminator: Option<&'a Discriminator>,
}

pub type CustomEmission = Arc<dyn Fn(&EmissionContext) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ChannelKind {
    /// `log p(O|s,a) = r(s,a)`.
    Task,
    /// `log p(O|s,a) = log clip(D(s,a))`.
    Imitation,
    Custom(CustomEmission),
}

impl fmt::Debug for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelKind::Task => f.write_str("Task"),
            ChannelKind::Imitation => f.write_str("Imitation"),
            ChannelKind::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimalityChannel {
    pub name: String,
    pub kind: ChannelKind,
    /// Multiplies the log-emission.
    pub weight: f64,
}

impl OptimalityChannel {
    pub fn task() -> Self {
        Self {
            name: "task".into(),
            kind: ChannelKind::Task,
            weight: 1.0,
        }
    }

    pub fn imitation() -> Self {
        Self {
            name: "imitation".into(),
            kind: ChannelKind::Imitation,
            weight: 1.0,
        }
    }

    pub fn custom(name: impl Into<String>, f: impl Fn(&EmissionContext) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            kind: ChannelKind::Custom(Arc::new(f)),
            weight: 1.0,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn needs_discriminator(&self) -> bool {
        matches!(self.kind, ChannelKind::Imitation)
    }
}

/// A channel entry as written in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl ChannelSpec {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.into(),
            weight: 1.0,
        }
    }

    pub fn build(&self) -> Result<OptimalityChannel> {
        let ch = match self.kind.as_str() {
            "task" => OptimalityChannel::task(),
            "imitation" => OptimalityChannel::imitation(),
            other => return Err(Error::config(format!("unknown channel type {other:?}"))),
        };
        if !self.weight.is_finite() {
            return Err(Error::config(format!("channel {} has a non-finite weight", ch.name)));
        }
        Ok(ch.with_weight(self.weight))
    }
}

/// A non-empty set of uniquely named channels.
///
/// Channels are evaluated and summed in name order regardless of the order
/// they were given in, so permuting a set never changes a computed value.
#[derive(Clone, Debug)]
pub struct ChannelSet {
    channels: Vec<OptimalityChannel>,
}

impl ChannelSet {
    pub fn new(mut channels: Vec<OptimalityChannel>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::config("a channel set needs at least one channel"));
        }
        let mut seen = BTreeSet::new();
        for ch in &channels {
            if !seen.insert(ch.name.as_str()) {
                return Err(Error::config(format!("duplicate channel name {:?}", ch.name)));
            }
        }
        channels.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(Self { channels })
    }

    pub fn from_specs(specs: &[ChannelSpec]) -> Result<Self> {
        Self::new(specs.iter().map(ChannelSpec::build).collect::<Result<_>>()?)
    }

    pub fn task_only() -> Self {
        Self::new(vec![OptimalityChannel::task()]).unwrap()
    }

    /// The task and imitation channels of the combined method.
    pub fn task_and_imitation() -> Self {
        Self::new(vec![OptimalityChannel::task(), OptimalityChannel::imitation()]).unwrap()
    }

    pub fn imitation_only() -> Self {
        Self::new(vec![OptimalityChannel::imitation()]).unwrap()
    }

    /// Channels in evaluation (name) order.
    pub fn channels(&self) -> &[OptimalityChannel] {
        &self.channels
    }

    pub fn names(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn needs_discriminator(&self) -> bool {
        self.channels.iter().any(OptimalityChannel::needs_discriminator)
    }

    /// Every channel's weighted log-emission, in evaluation order.
    pub fn emissions(&self, ctx: &EmissionContext) -> Result<Vec<f64>> {
        self.channels.iter().map(|c| channel_log_emission(c, ctx)).collect()
    }
}

/// Weighted `log p(Oⁿ = 1 | s, a)` for one channel.
pub fn channel_log_emission(channel: &OptimalityChannel, ctx: &EmissionContext) -> Result<f64> {
    let raw = match &channel.kind {
        ChannelKind::Task => ctx.task_reward,
        ChannelKind::Imitation => {
            let d = ctx.discriminator.ok_or_else(|| {
                Error::protocol(format!("channel {:?} needs a discriminator snapshot", channel.name))
            })?;
            d.log_reward(ctx.obs, ctx.encoded_action)?
        }
        ChannelKind::Custom(f) => f(ctx),
    };
    let value = if channel.weight == 1.0 { raw } else { channel.weight * raw };
    if !value.is_finite() {
        return Err(Error::Numeric {
            what: format!("channel {}", channel.name),
            index: 0,
            value,
        });
    }
    Ok(value)
}

/// Sum of all channel log-emissions.
pub fn composite_reward(channels: &ChannelSet, ctx: &EmissionContext) -> Result<f64> {
    Ok(sum_emissions(&channels.emissions(ctx)?))
}

/// Left-to-right sum starting from the first term.
pub fn sum_emissions(values: &[f64]) -> f64 {
    values[1..].iter().fold(values[0], |acc, v| acc + v)
}

/// Inputs shared by every step when re-evaluating stored trajectories.
#[derive(Clone, Copy, Debug)]
pub struct ReplayContext<'a> {
    pub action_space: &'a ActionSpace,
    pub discriminator: Option<&'a Discriminator>,
}

/// Mean over trajectories of `Σ_t [Σ_n log p(Oⁿ_t|s_t,a_t) − log q(a_t|s_t)]`.
///
/// `log_probs[i][t]` is `log q` of step `t` of trajectory `i`. With
/// `weights`, the mean is weighted (weights are normalized here), which
/// turns an enumeration of trajectories into an exact expectation.
pub fn elbo(
    trajectories: &[Trajectory],
    channels: &ChannelSet,
    log_probs: &[Vec<f64>],
    ctx: &ReplayContext,
    weights: Option<&[f64]>,
) -> Result<f64> {
    if trajectories.is_empty() {
        return Err(Error::protocol("elbo needs at least one trajectory"));
    }
    if log_probs.len() != trajectories.len() {
        return Err(Error::protocol(format!(
            "{} log-prob sequences for {} trajectories",
            log_probs.len(),
            trajectories.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != trajectories.len() {
            return Err(Error::protocol("one weight per trajectory is required"));
        }
    }
    let mut encoded = Vec::new();
    let mut total = 0.0;
    let mut weight_sum = 0.0;
    for (i, (traj, lp)) in trajectories.iter().zip(log_probs).enumerate() {
        if lp.len() != traj.len() {
            return Err(Error::protocol(format!(
                "trajectory {i} has {} steps but {} log-probs",
                traj.len(),
                lp.len()
            )));
        }
        let mut ret = 0.0;
        for (step, &logq) in traj.steps.iter().zip(lp) {
            encoded.clear();
            ctx.action_space.encode_into(&step.action, &mut encoded);
            let ectx = EmissionContext {
                obs: &step.obs,
                action: &step.action,
                encoded_action: &encoded,
                task_reward: step.task_reward,
                info: None,
                discriminator: ctx.discriminator,
            };
            ret += composite_reward(channels, &ectx)? - logq;
        }
        let w = weights.map_or(1.0, |w| w[i]);
        total += w * ret;
        weight_sum += w;
    }
    Ok(total / weight_sum)
}
