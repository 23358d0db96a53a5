use rand::Rng;

use crate::env::{Action, ActionSpace};
use crate::error::{check_dim, Error, Result};
use crate::math::{
    categorical_entropy, categorical_log_prob, categorical_sample, decode_params, encode_params, log_softmax,
    Activation, DiagGaussianHead, MlpParams, Tape, Tensor, Var, LOG_STD_MAX, LOG_STD_MIN,
};

/// Stochastic policy: an MLP producing logits (discrete) or the mean of a
/// diagonal Gaussian with a learned, state-independent `log_std`.
///
/// The flat parameter vector is the network's parameters followed by
/// `log_std` (empty for discrete spaces).
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    net: MlpParams,
    log_std: Vec<f64>,
    space: ActionSpace,
}

/// Per-row log-probabilities and the mean entropy, recorded on a tape.
pub struct PolicyTerms {
    pub log_probs: Var,
    pub entropy: Var,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        space: &ActionSpace,
        hidden: &[usize],
        activation: Activation,
        log_std_init: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(space.encoded_dim());
        let net = MlpParams::uniform_activation(&sizes, activation)?.init(rng, 0.01);
        let log_std = match space {
            ActionSpace::Discrete { .. } => Vec::new(),
            ActionSpace::Continuous { low, .. } => vec![log_std_init; low.len()],
        };
        Ok(Self {
            net,
            log_std,
            space: space.clone(),
        })
    }

    pub fn net(&self) -> &MlpParams {
        &self.net
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn set_log_std(&mut self, value: f64) {
        self.log_std.iter_mut().for_each(|s| *s = value);
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params() + self.log_std.len()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.net.params().to_vec();
        p.extend_from_slice(&self.log_std);
        p
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("policy parameters", self.n_params(), flat.len())?;
        let n = self.net.n_params();
        self.net.params_mut().copy_from_slice(&flat[..n]);
        self.log_std.copy_from_slice(&flat[n..]);
        Ok(())
    }

    fn gaussian(&self, obs: &[f64]) -> Result<DiagGaussianHead> {
        DiagGaussianHead::new(self.net.forward(obs)?, &self.log_std)
    }

    /// Samples an action and returns it with its log-probability.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(Action, f64)> {
        match self.space {
            ActionSpace::Discrete { .. } => {
                let logits = self.net.forward(obs)?;
                let k = categorical_sample(&logits, rng);
                Ok((Action::Discrete(k), categorical_log_prob(&logits, k)))
            }
            ActionSpace::Continuous { .. } => {
                let head = self.gaussian(obs)?;
                let a = head.sample(rng);
                let lp = head.log_prob(&a)?;
                Ok((Action::Continuous(a), lp))
            }
        }
    }

    /// The most likely action.
    pub fn mode(&self, obs: &[f64]) -> Result<Action> {
        let out = self.net.forward(obs)?;
        Ok(match self.space {
            ActionSpace::Discrete { .. } => {
                let mut best = 0;
                for (i, &v) in out.iter().enumerate() {
                    if v > out[best] {
                        best = i;
                    }
                }
                Action::Discrete(best)
            }
            ActionSpace::Continuous { .. } => Action::Continuous(out),
        })
    }

    pub fn log_prob(&self, obs: &[f64], action: &Action) -> Result<f64> {
        self.space.check(action)?;
        match action {
            Action::Discrete(k) => Ok(categorical_log_prob(&self.net.forward(obs)?, *k)),
            Action::Continuous(a) => self.gaussian(obs)?.log_prob(a),
        }
    }

    /// Action probabilities of a discrete policy.
    pub fn probs(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let ActionSpace::Discrete { .. } = self.space else {
            return Err(Error::protocol("probabilities are only defined for discrete policies"));
        };
        Ok(log_softmax(&self.net.forward(obs)?).into_iter().map(f64::exp).collect())
    }

    pub fn entropy(&self, obs: &[f64]) -> Result<f64> {
        match self.space {
            ActionSpace::Discrete { .. } => Ok(categorical_entropy(&self.net.forward(obs)?)),
            ActionSpace::Continuous { .. } => Ok(self.gaussian(obs)?.entropy()),
        }
    }

    /// Records log-probabilities of `actions` (storage form, row-packed) at
    /// `obs` and the batch-mean entropy, reading parameters from `p`.
    pub fn terms_on_tape(&self, tape: &mut Tape, p: Var, obs: &[f64], actions: &[f64]) -> PolicyTerms {
        let n = obs.len() / self.net.input_dim();
        let x = self.net.input_on_tape(tape, obs);
        let out = self.net.forward_tape(tape, p, 0, x);
        match self.space {
            ActionSpace::Discrete { .. } => {
                let ls = tape.log_softmax(out);
                let idx = actions.iter().map(|&a| a as usize).collect();
                let log_probs = tape.gather(ls, idx);
                let probs = tape.exp(ls);
                let plogp = tape.mul(probs, ls);
                let total = tape.sum(plogp);
                let entropy = tape.scale(total, -1.0 / n as f64);
                PolicyTerms { log_probs, entropy }
            }
            ActionSpace::Continuous { .. } => {
                let d = self.log_std.len();
                let raw = tape.slice(p, self.net.n_params(), 1, d);
                let ls = tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
                let log_probs = tape.gaussian_log_prob(out, ls, actions.to_vec());
                let entropy = tape.gaussian_entropy(ls);
                PolicyTerms { log_probs, entropy }
            }
        }
    }

    /// Parameter container bytes; `log_std` rides in the trailing block.
    pub fn encode(&self) -> Vec<u8> {
        encode_params(&self.net, &self.log_std)
    }

    pub fn decode(bytes: &[u8], space: &ActionSpace) -> Result<Self> {
        let (net, log_std) = decode_params(bytes)?;
        check_dim("policy output", space.encoded_dim(), net.output_dim())?;
        let expected_std = match space {
            ActionSpace::Discrete { .. } => 0,
            ActionSpace::Continuous { low, .. } => low.len(),
        };
        check_dim("policy log_std", expected_std, log_std.len())?;
        Ok(Self {
            net,
            log_std,
            space: space.clone(),
        })
    }
}

/// State-value network `V(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueNet {
    net: MlpParams,
}

impl ValueNet {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(Self {
            net: MlpParams::uniform_activation(&sizes, activation)?.init(rng, 1.0),
        })
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

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.net.forward(obs)?[0])
    }

    /// Records `V` for row-packed `obs`, as a column.
    pub fn values_on_tape(&self, tape: &mut Tape, p: Var, obs: &[f64]) -> Var {
        let x = self.net.input_on_tape(tape, obs);
        self.net.forward_tape(tape, p, 0, x)
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_params(&self.net, &[])
    }
}

/// Packs a constant column for tape arithmetic.
pub(crate) fn column(values: &[f64]) -> Tensor {
    Tensor::column(values.to_vec())
}
