use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Action, ActionSpace, EnvSpec, Environment, Randomization, StepInfo, StepResult};
use crate::error::{Error, Result};
use crate::oracle::TabularMdp;

/// Samples episodes from a [`TabularMdp`] whose rewards are all 0 or 1.
///
/// The reward table is the task signal: a step achieves the task exactly
/// when `R[s][a] = 1`. Observations are one-hot states.
#[derive(Clone, Debug)]
pub struct TabularEnv {
    spec: EnvSpec,
    mdp: TabularMdp,
    state: usize,
    t: usize,
    rng: ChaCha8Rng,
}

impl TabularEnv {
    pub fn new(id: impl Into<String>, mdp: TabularMdp) -> Result<Self> {
        if mdp.rewards().iter().any(|&r| r != 0.0 && r != 1.0) {
            return Err(Error::config("tabular environments need binary rewards"));
        }
        let spec = EnvSpec {
            id: id.into(),
            obs_dim: mdp.n_states(),
            action_space: ActionSpace::Discrete { n: mdp.n_actions() },
            horizon: mdp.horizon(),
            goal_radius: None,
            randomization: Randomization::default(),
        };
        Ok(Self {
            spec,
            mdp,
            state: 0,
            t: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn chain(k: usize, horizon: usize) -> Self {
        Self::new(format!("chain-{k}"), TabularMdp::chain(k, horizon)).expect("chain rewards are binary")
    }

    pub fn bandit() -> Self {
        Self::new("bandit", TabularMdp::bandit()).expect("bandit rewards are binary")
    }

    /// The exact tables this environment samples from.
    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn state(&self) -> usize {
        self.state
    }

    fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

impl Environment for TabularEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset_seeded(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = Self::draw(&mut self.rng, self.mdp.initial());
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.t >= self.spec.horizon {
            return Err(Error::protocol("step called after the episode finished"));
        }
        self.spec.action_space.check(action)?;
        let Action::Discrete(a) = *action else { unreachable!() };
        let reward = self.mdp.r(self.state, a);
        self.state = Self::draw(&mut self.rng, self.mdp.next_row(self.state, a));
        self.t += 1;
        Ok(StepResult {
            next_obs: self.observe(),
            task_reward: reward,
            achieved: reward == 1.0,
            done: self.t == self.spec.horizon,
            info: StepInfo::default(),
        })
    }

    fn task_achieved(&self) -> bool {
        (0..self.mdp.n_actions()).any(|a| self.mdp.r(self.state, a) == 1.0)
    }

    fn observe(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.mdp.n_states()];
        obs[self.state] = 1.0;
        obs
    }

    fn elapsed(&self) -> usize {
        self.t
    }
}
