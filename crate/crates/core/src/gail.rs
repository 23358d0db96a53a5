//! Adversarial imitation: the discriminator, its training, the imitation
//! log-reward and the demonstration dataset format.
//!
//! Convention: `D → 1` on expert pairs and `D → 0` on agent pairs, so that
//! `log D` is a reward the agent maximizes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{episode_score, ActionSpace, Step, Trajectory};
use crate::error::{check_finite, Error, Result};
use crate::math::{sigmoid, value_and_grad, Activation, AdamState, ByteReader, MlpParams, Tensor};

/// Clip applied to `D` before every logarithm used as a reward.
pub const D_CLIP: f64 = 1e-4;
/// Normalized discriminator inputs are clamped to `±INPUT_CLIP`.
pub const INPUT_CLIP: f64 = 5.0;

/// How `(obs, action)` is presented to the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscriminatorInput {
    /// `concat(obs, encoded action)`, normalized with frozen expert statistics.
    #[default]
    Concat,
    /// One-hot of the joint index `argmax(obs) · |A| + argmax(action)`, for
    /// tabular environments with one-hot observations.
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    /// Gradient steps per training iteration.
    pub steps: usize,
    pub input: DiscriminatorInput,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            activation: Activation::Tanh,
            learning_rate: 3e-4,
            steps: 5,
            input: DiscriminatorInput::Concat,
        }
    }
}

/// Weighted `(obs, encoded action)` pairs, packed row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    obs_dim: usize,
    act_dim: usize,
    rows: Vec<f64>,
    weights: Vec<f64>,
}

impl PairBatch {
    pub fn new(obs_dim: usize, act_dim: usize) -> Self {
        Self {
            obs_dim,
            act_dim,
            rows: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn push(&mut self, obs: &[f64], encoded_action: &[f64], weight: f64) {
        assert_eq!(obs.len(), self.obs_dim, "pair observation width");
        assert_eq!(encoded_action.len(), self.act_dim, "pair action width");
        self.rows.extend_from_slice(obs);
        self.rows.extend_from_slice(encoded_action);
        self.weights.push(weight);
    }

    /// Every step of every trajectory, with unit weight.
    pub fn from_trajectories(trajs: &[Trajectory], obs_dim: usize, space: &ActionSpace) -> Self {
        let mut batch = Self::new(obs_dim, space.encoded_dim());
        let mut enc = Vec::new();
        for step in trajs.iter().flat_map(|t| &t.steps) {
            enc.clear();
            space.encode_into(&step.action, &mut enc);
            batch.push(&step.obs, &enc, 1.0);
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn width(&self) -> usize {
        self.obs_dim + self.act_dim
    }

    pub fn row(&self, i: usize) -> (&[f64], &[f64]) {
        let w = self.width();
        let r = &self.rows[i * w..(i + 1) * w];
        r.split_at(self.obs_dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `n` rows drawn uniformly with replacement, unit weights.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Self {
        let mut out = Self::new(self.obs_dim, self.act_dim);
        for _ in 0..n {
            let (o, a) = self.row(rng.random_range(0..self.len()));
            out.push(o, a, 1.0);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    net: MlpParams,
    input: DiscriminatorInput,
    obs_dim: usize,
    act_dim: usize,
    shift: Vec<f64>,
    scale: Vec<f64>,
    opt: AdamState,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        cfg: &DiscriminatorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let in_dim = match cfg.input {
            DiscriminatorInput::Concat => obs_dim + act_dim,
            DiscriminatorInput::Joint => obs_dim * act_dim,
        };
        let mut sizes = vec![in_dim];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(1);
        let net = MlpParams::uniform_activation(&sizes, cfg.activation)?.init(rng, 1.0);
        let width = obs_dim + act_dim;
        Ok(Self {
            opt: AdamState::new(net.n_params(), cfg.learning_rate),
            net,
            input: cfg.input,
            obs_dim,
            act_dim,
            shift: vec![0.0; width],
            scale: vec![1.0; width],
        })
    }

    /// Wraps existing network parameters with identity normalization.
    pub fn from_net(net: MlpParams, input: DiscriminatorInput, obs_dim: usize, act_dim: usize, lr: f64) -> Result<Self> {
        let in_dim = match input {
            DiscriminatorInput::Concat => obs_dim + act_dim,
            DiscriminatorInput::Joint => obs_dim * act_dim,
        };
        if net.input_dim() != in_dim || net.output_dim() != 1 {
            return Err(Error::Dimension {
                what: "discriminator network",
                expected: in_dim,
                got: net.input_dim(),
            });
        }
        let width = obs_dim + act_dim;
        Ok(Self {
            opt: AdamState::new(net.n_params(), lr),
            net,
            input,
            obs_dim,
            act_dim,
            shift: vec![0.0; width],
            scale: vec![1.0; width],
        })
    }

    /// Freezes per-dimension input normalization at the statistics of
    /// `expert`. Dimensions that are constant on expert data keep unit scale.
    pub fn fit_normalization(&mut self, expert: &PairBatch) {
        if self.input != DiscriminatorInput::Concat || expert.is_empty() {
            return;
        }
        let w = expert.width();
        let n = expert.len() as f64;
        let mut mean = vec![0.0; w];
        for row in expert.rows.chunks(w) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; w];
        for row in expert.rows.chunks(w) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        self.shift = mean;
        self.scale = var
            .iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-6 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
    }

    pub fn net(&self) -> &MlpParams {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    pub fn input(&self) -> DiscriminatorInput {
        self.input
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.opt
    }

    fn push_features(&self, obs: &[f64], act: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if obs.len() != self.obs_dim || act.len() != self.act_dim {
            return Err(Error::Dimension {
                what: "discriminator input",
                expected: self.obs_dim + self.act_dim,
                got: obs.len() + act.len(),
            });
        }
        match self.input {
            DiscriminatorInput::Concat => {
                for (i, x) in obs.iter().chain(act).enumerate() {
                    out.push(((x - self.shift[i]) * self.scale[i]).clamp(-INPUT_CLIP, INPUT_CLIP));
                }
            }
            DiscriminatorInput::Joint => {
                let s = argmax(obs);
                let a = argmax(act);
                let base = out.len();
                out.resize(base + self.obs_dim * self.act_dim, 0.0);
                out[base + s * self.act_dim + a] = 1.0;
            }
        }
        Ok(())
    }

    fn features(&self, batch: &PairBatch) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(batch.len() * self.net.input_dim());
        for i in 0..batch.len() {
            let (o, a) = batch.row(i);
            self.push_features(o, a, &mut x)?;
        }
        Ok(x)
    }

    pub fn logit(&self, obs: &[f64], encoded_action: &[f64]) -> Result<f64> {
        let mut x = Vec::with_capacity(self.net.input_dim());
        self.push_features(obs, encoded_action, &mut x)?;
        let z = self.net.forward(&x)?[0];
        check_finite("discriminator logit", &[z])?;
        Ok(z)
    }

    pub fn logits(&self, batch: &PairBatch) -> Result<Vec<f64>> {
        let z = self.net.forward_batch(&self.features(batch)?)?;
        check_finite("discriminator logit", &z)?;
        Ok(z)
    }

    /// `D(s, a) ∈ (0, 1)`, unclipped.
    pub fn prob(&self, obs: &[f64], encoded_action: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(obs, encoded_action)?))
    }

    /// `log clip(D(s, a), D_CLIP, 1 − D_CLIP)`.
    pub fn log_reward(&self, obs: &[f64], encoded_action: &[f64]) -> Result<f64> {
        Ok(imitation_log_reward(self.logit(obs, encoded_action)?))
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Imitation log-emission of a discriminator logit.
pub fn imitation_log_reward(logit: f64) -> f64 {
    sigmoid(logit).clamp(D_CLIP, 1.0 - D_CLIP).ln()
}

fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let w: f64 = weights.iter().sum();
    values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / w
}

/// `Ê_agent[log D] + Ê_expert[log(1 − D)]`, unclipped.
///
/// The expert's term is minimized by `D → 1` only if the first term is
/// pushed down at the same time; see [`discriminator_update`] for the
/// objective that is actually descended.
pub fn discriminator_loss(d: &Discriminator, agent: &PairBatch, expert: &PairBatch) -> Result<f64> {
    if agent.is_empty() || expert.is_empty() {
        return Err(Error::protocol("discriminator batches must be non-empty"));
    }
    let za = d.logits(agent)?;
    let ze = d.logits(expert)?;
    let la: Vec<f64> = za.iter().map(|&z| crate::math::log_sigmoid(z)).collect();
    let le: Vec<f64> = ze.iter().map(|&z| crate::math::log_sigmoid(-z)).collect();
    Ok(weighted_mean(&la, agent.weights()) + weighted_mean(&le, expert.weights()))
}

/// Binary cross-entropy with expert label 1 and agent label 0, as weighted
/// means over each batch.
pub fn discriminator_cross_entropy(d: &Discriminator, agent: &PairBatch, expert: &PairBatch) -> Result<f64> {
    let za = d.logits(agent)?;
    let ze = d.logits(expert)?;
    let la: Vec<f64> = za.iter().map(|&z| -crate::math::log_sigmoid(-z)).collect();
    let le: Vec<f64> = ze.iter().map(|&z| -crate::math::log_sigmoid(z)).collect();
    Ok(weighted_mean(&la, agent.weights()) + weighted_mean(&le, expert.weights()))
}

struct CrossEntropyBatch {
    x: Tensor,
    sign: Tensor,
    coef: Tensor,
}

impl CrossEntropyBatch {
    /// Expert rows then agent rows; the sign column flips agent logits and
    /// the coefficient column carries the normalized negative weights.
    fn new(d: &Discriminator, agent: &PairBatch, expert: &PairBatch) -> Result<Self> {
        if agent.is_empty() || expert.is_empty() {
            return Err(Error::protocol("discriminator batches must be non-empty"));
        }
        let mut x = d.features(expert)?;
        x.extend(d.features(agent)?);
        let n = expert.len() + agent.len();
        let we: f64 = expert.weights().iter().sum();
        let wa: f64 = agent.weights().iter().sum();
        let mut sign = Vec::with_capacity(n);
        let mut coef = Vec::with_capacity(n);
        for &w in expert.weights() {
            sign.push(1.0);
            coef.push(-w / we);
        }
        for &w in agent.weights() {
            sign.push(-1.0);
            coef.push(-w / wa);
        }
        Ok(Self {
            x: Tensor::new(n, d.net.input_dim(), x),
            sign: Tensor::column(sign),
            coef: Tensor::column(coef),
        })
    }

    fn value_and_grad(&self, net: &MlpParams) -> Result<(f64, Vec<f64>)> {
        value_and_grad(net.params(), |tape, p| {
            let xv = tape.constant(self.x.clone());
            let z = net.forward_tape(tape, p, 0, xv);
            let s = tape.constant(self.sign.clone());
            let signed = tape.mul(z, s);
            let ls = tape.log_sigmoid(signed);
            let c = tape.constant(self.coef.clone());
            let weighted = tape.mul(ls, c);
            Ok(tape.sum(weighted))
        })
    }
}

/// Value and parameter gradient of [`discriminator_cross_entropy`], as
/// descended by [`discriminator_update`].
pub fn discriminator_gradient(d: &Discriminator, agent: &PairBatch, expert: &PairBatch) -> Result<(f64, Vec<f64>)> {
    CrossEntropyBatch::new(d, agent, expert)?.value_and_grad(&d.net)
}

/// `n_steps` full-batch Adam steps on
/// `−Ê_expert[log D] − Ê_agent[log(1 − D)]`, whose pointwise minimizer is
/// `D = p_E / (p_E + p_π)`. Returns the loss before each step.
pub fn discriminator_update(
    d: &mut Discriminator,
    agent: &PairBatch,
    expert: &PairBatch,
    n_steps: usize,
) -> Result<Vec<f64>> {
    let batch = CrossEntropyBatch::new(d, agent, expert)?;
    let mut losses = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let (loss, grad) = batch.value_and_grad(&d.net)?;
        losses.push(loss);
        d.opt.step(d.net.params_mut(), &grad)?;
    }
    Ok(losses)
}

/// Expert demonstrations for one environment.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoDataset {
    pub env_id: String,
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub horizon: usize,
    pub trajectories: Vec<Trajectory>,
    /// Mean episode score of the trajectories.
    pub mean_score: f64,
}

pub const DATASET_MAGIC: &[u8; 4] = b"TGDS";
pub const DATASET_VERSION: u32 = 1;

impl DemoDataset {
    pub fn new(
        env_id: impl Into<String>,
        obs_dim: usize,
        action_space: ActionSpace,
        horizon: usize,
        trajectories: Vec<Trajectory>,
    ) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::protocol("a demonstration dataset needs at least one trajectory"));
        }
        let mean_score = mean_episode_score(&trajectories);
        Ok(Self {
            env_id: env_id.into(),
            obs_dim,
            action_space,
            horizon,
            trajectories,
            mean_score,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// The first `n` trajectories.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        Self::new(
            self.env_id.clone(),
            self.obs_dim,
            self.action_space.clone(),
            self.horizon,
            self.trajectories.iter().take(n).cloned().collect(),
        )
    }

    pub fn pairs(&self) -> PairBatch {
        PairBatch::from_trajectories(&self.trajectories, self.obs_dim, &self.action_space)
    }

    pub fn check_env(&self, env_id: &str) -> Result<()> {
        if self.env_id != env_id {
            return Err(Error::protocol(format!(
                "dataset was recorded on {:?} but {:?} was requested",
                self.env_id, env_id
            )));
        }
        Ok(())
    }

    /// Binary container, all integers and floats little-endian:
    ///
    /// ```text
    /// "TGDS"  version:u32
    /// id_len:u32  env id (utf-8)
    /// obs_dim:u32
    /// action kind:u8 (0 discrete, 1 continuous)  action dim:u32
    ///   continuous only: low[dim]:f64  high[dim]:f64
    /// horizon:u32  n_trajectories:u32  mean_score:f64
    /// per trajectory:
    ///   has_seed:u8  seed:u64  n_steps:u32
    ///   per step: obs[obs_dim]:f64  action[storage dim]:f64  task_reward:f64  achieved:u8
    /// ```
    ///
    /// Discrete actions are stored as their index in one f64.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        let id = self.env_id.as_bytes();
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&(self.obs_dim as u32).to_le_bytes());
        match &self.action_space {
            ActionSpace::Discrete { n } => {
                out.push(0);
                out.extend_from_slice(&(*n as u32).to_le_bytes());
            }
            ActionSpace::Continuous { low, high } => {
                out.push(1);
                out.extend_from_slice(&(low.len() as u32).to_le_bytes());
                for v in low.iter().chain(high) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out.extend_from_slice(&(self.horizon as u32).to_le_bytes());
        out.extend_from_slice(&(self.trajectories.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.mean_score.to_le_bytes());
        for traj in &self.trajectories {
            out.push(traj.seed.is_some() as u8);
            out.extend_from_slice(&traj.seed.unwrap_or(0).to_le_bytes());
            out.extend_from_slice(&(traj.len() as u32).to_le_bytes());
            for step in &traj.steps {
                for v in step.obs.iter().chain(&step.action.to_storage()) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&step.task_reward.to_le_bytes());
                out.push(step.achieved as u8);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != DATASET_MAGIC {
            return Err(r.error_at(0, "not a demonstration dataset"));
        }
        let at = r.offset();
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(r.error_at(at, format!("unsupported dataset version {version}")));
        }
        let id_len = r.u32()? as usize;
        let at = r.offset();
        let env_id = std::str::from_utf8(r.take(id_len)?)
            .map_err(|_| r.error_at(at, "environment id is not utf-8"))?
            .to_string();
        let obs_dim = r.u32()? as usize;
        let at = r.offset();
        let kind = r.u8()?;
        let dim = r.u32()? as usize;
        let action_space = match kind {
            0 => ActionSpace::Discrete { n: dim },
            1 => {
                let mut low = Vec::with_capacity(dim);
                let mut high = Vec::with_capacity(dim);
                for _ in 0..dim {
                    low.push(r.f64()?);
                }
                for _ in 0..dim {
                    high.push(r.f64()?);
                }
                ActionSpace::Continuous { low, high }
            }
            k => return Err(r.error_at(at, format!("unknown action kind {k}"))),
        };
        let horizon = r.u32()? as usize;
        let at = r.offset();
        let n_traj = r.u32()? as usize;
        if n_traj == 0 {
            return Err(r.error_at(at, "dataset has no trajectories"));
        }
        let mean_at = r.offset();
        let mean_score = r.f64()?;
        let act_storage = action_space.storage_dim();
        let mut trajectories = Vec::with_capacity(n_traj.min(1 << 16));
        for _ in 0..n_traj {
            let has_seed = r.u8()? != 0;
            let seed = r.u64()?;
            let at = r.offset();
            let len = r.u32()? as usize;
            if len > horizon {
                return Err(r.error_at(at, format!("trajectory of {len} steps exceeds horizon {horizon}")));
            }
            let mut steps = Vec::with_capacity(len);
            for _ in 0..len {
                let mut obs = Vec::with_capacity(obs_dim);
                for _ in 0..obs_dim {
                    obs.push(r.f64()?);
                }
                let at = r.offset();
                let mut act = Vec::with_capacity(act_storage);
                for _ in 0..act_storage {
                    act.push(r.f64()?);
                }
                let action = action_space.decode(&act);
                if action_space.check(&action).is_err() || act.iter().any(|v| !v.is_finite()) {
                    return Err(r.error_at(at, "action outside the recorded action space"));
                }
                let task_reward = r.f64()?;
                let achieved = r.u8()? != 0;
                steps.push(Step {
                    obs,
                    action,
                    task_reward,
                    achieved,
                    log_prob: 0.0,
                });
            }
            trajectories.push(Trajectory {
                steps,
                seed: has_seed.then_some(seed),
            });
        }
        r.finish()?;
        let recomputed = mean_episode_score(&trajectories);
        if (recomputed - mean_score).abs() > 1e-9 {
            return Err(r.error_at(
                mean_at,
                format!("stored mean score {mean_score} but trajectories average {recomputed}"),
            ));
        }
        Ok(Self {
            env_id,
            obs_dim,
            action_space,
            horizon,
            trajectories,
            mean_score,
        })
    }
}

pub fn mean_episode_score(trajs: &[Trajectory]) -> f64 {
    trajs.iter().map(|t| episode_score(t) as f64).sum::<f64>() / trajs.len() as f64
}
