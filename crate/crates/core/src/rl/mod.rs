//! Maximum-entropy PPO driven by a set of optimality channels, with an
//! optional adversarially trained discriminator.
//!
//! Each iteration collects one on-policy rollout (imitation rewards read
//! the discriminator as of rollout start), takes discriminator steps on that
//! rollout against resampled expert pairs, then runs the PPO update.

mod buffer;
mod policy;
mod ppo;

pub use buffer::{collect_rollout, compute_gae, EnvPool, RolloutBuffer, Segment};
pub use policy::{Policy, PolicyTerms, ValueNet};
pub use ppo::{ppo_update, PpoConfig, PpoOptimizers, UpdateStats};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{make_env, EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::gail::{discriminator_update, DemoDataset, Discriminator, DiscriminatorConfig, PairBatch};
use crate::math::sigmoid;
use crate::pgm::ChannelSet;

/// Independent random streams derived from one run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Rollout = 2,
    Update = 3,
    Discriminator = 4,
    Eval = 5,
    Clone = 6,
    Demos = 7,
    FinalEval = 8,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub ppo: PpoConfig,
    pub discriminator: DiscriminatorConfig,
    /// Environment-step budget; rounded up to whole rollouts.
    pub total_steps: usize,
    /// Evaluate every this many iterations (0 disables checkpoint selection).
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Stop as soon as an evaluation reaches this mean score.
    pub stop_at_score: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ppo: PpoConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            total_steps: 200_000,
            eval_every: 5,
            eval_episodes: 20,
            stop_at_score: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub policy: f64,
    pub value: f64,
    pub discriminator: Option<f64>,
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub env_steps: usize,
    pub mean_episode_score: Option<f64>,
    pub mean_composite_reward: f64,
    pub elbo_estimate: Option<f64>,
    pub d_expert_mean: Option<f64>,
    pub d_agent_mean: Option<f64>,
    pub policy_entropy: f64,
    pub eval_score: Option<f64>,
    pub losses: Losses,
}

pub struct TrainSetup<'a> {
    pub env: &'a EnvConfig,
    pub channels: ChannelSet,
    pub demos: Option<&'a DemoDataset>,
    pub train_discriminator: bool,
    /// Replaces the freshly initialized policy (value net stays fresh).
    pub init_policy: Option<Policy>,
    pub seed: u64,
}

pub struct TrainOutcome {
    pub policy: Policy,
    /// Checkpoint with the best evaluation score (the final policy when no
    /// evaluation ran).
    pub best_policy: Policy,
    pub best_eval_score: Option<f64>,
    pub value_fn: ValueNet,
    pub discriminator: Option<Discriminator>,
    pub metrics: Vec<IterationMetrics>,
    pub last_rollout: RolloutBuffer,
    pub env_steps: usize,
}

/// Fresh policy and value networks from the `Init` stream of `seed`.
pub fn init_networks(env: &dyn Environment, cfg: &PpoConfig, seed: u64) -> Result<(Policy, ValueNet)> {
    let spec = env.spec();
    let mut rng = stream(seed, Stream::Init);
    let policy = Policy::new(
        spec.obs_dim,
        &spec.action_space,
        &cfg.hidden,
        cfg.activation,
        cfg.log_std_init,
        &mut rng,
    )?;
    let value = ValueNet::new(spec.obs_dim, &cfg.hidden, cfg.activation, &mut rng)?;
    Ok((policy, value))
}

/// Scores of `episodes` stochastic episodes, reset seeds drawn from `rng`.
pub fn evaluate_policy(
    policy: &Policy,
    env: &mut dyn Environment,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    use rand::RngCore;
    let mut scores = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset_seeded(rng.next_u64());
        let mut score = 0;
        loop {
            let (a, _) = policy.act(&obs, rng)?;
            let r = env.step(&a)?;
            score += r.achieved as usize;
            if r.done {
                break;
            }
            obs = r.next_obs;
        }
        scores.push(score);
    }
    Ok(scores)
}

pub fn mean(xs: &[usize]) -> f64 {
    xs.iter().sum::<usize>() as f64 / xs.len() as f64
}

/// The training loop shared by every RL-based method.
pub fn train(setup: TrainSetup, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.ppo.validate()?;
    let ppo = &cfg.ppo;
    let envs: Vec<Box<dyn Environment>> = (0..ppo.n_envs).map(|_| make_env(setup.env)).collect::<Result<_>>()?;
    let mut eval_env = make_env(setup.env)?;
    let spec = envs[0].spec().clone();
    let (mut policy, mut value_fn) = init_networks(eval_env.as_ref(), ppo, setup.seed)?;
    if let Some(init) = setup.init_policy {
        if init.n_params() != policy.n_params() || init.action_space() != policy.action_space() {
            return Err(Error::config("initial policy does not match the configured network"));
        }
        policy = init;
    }
    let mut pool = EnvPool::new(envs)?;
    let mut opt = PpoOptimizers::new(&policy, &value_fn, ppo);

    let mut disc_rng = stream(setup.seed, Stream::Discriminator);
    let needs_disc = setup.train_discriminator || setup.channels.needs_discriminator();
    let (mut disc, expert_pairs) = if needs_disc {
        let demos = setup
            .demos
            .ok_or_else(|| Error::config("imitation needs a demonstration dataset"))?;
        demos.check_env(&spec.id)?;
        let pairs = demos.pairs();
        let mut d = Discriminator::new(spec.obs_dim, spec.action_space.encoded_dim(), &cfg.discriminator, &mut disc_rng)?;
        d.fit_normalization(&pairs);
        (Some(d), Some(pairs))
    } else {
        (None, None)
    };

    let mut rollout_rng = stream(setup.seed, Stream::Rollout);
    let mut update_rng = stream(setup.seed, Stream::Update);
    let mut eval_rng = stream(setup.seed, Stream::Eval);
    let iterations = cfg.total_steps.div_ceil(ppo.rollout_len).max(1);
    let mut metrics = Vec::with_capacity(iterations);
    let mut best: Option<(f64, Policy)> = None;
    let mut last = RolloutBuffer::default();
    let mut env_steps = 0;

    for iteration in 0..iterations {
        let snapshot = disc.clone();
        let mut buf = collect_rollout(
            &policy,
            &value_fn,
            &mut pool,
            &setup.channels,
            snapshot.as_ref(),
            ppo.rollout_len,
            &mut rollout_rng,
        )?;
        env_steps += buf.len();

        let (mut d_expert_mean, mut d_agent_mean, mut d_loss) = (None, None, None);
        if let (Some(d), Some(pairs)) = (disc.as_mut(), expert_pairs.as_ref()) {
            let mut agent = PairBatch::new(spec.obs_dim, spec.action_space.encoded_dim());
            for i in 0..buf.len() {
                agent.push(buf.obs_row(i), buf.encoded_action_row(i), 1.0);
            }
            let expert = pairs.sample(agent.len(), &mut disc_rng);
            let mean_d = |z: Vec<f64>| z.iter().map(|&v| sigmoid(v)).sum::<f64>() / z.len() as f64;
            d_expert_mean = Some(mean_d(d.logits(&expert)?));
            d_agent_mean = Some(mean_d(d.logits(&agent)?));
            if setup.train_discriminator {
                let losses = discriminator_update(d, &agent, &expert, cfg.discriminator.steps)?;
                d_loss = losses.first().copied();
            }
        }

        compute_gae(&mut buf, ppo.gamma, ppo.gae_lambda, ppo.normalize_advantages);
        let stats = ppo_update(&mut policy, &mut value_fn, &mut opt, &buf, ppo, &mut update_rng)?;

        let mut eval_score = None;
        let due = cfg.eval_every > 0 && ((iteration + 1) % cfg.eval_every == 0 || iteration + 1 == iterations);
        if due {
            let s = mean(&evaluate_policy(&policy, eval_env.as_mut(), cfg.eval_episodes, &mut eval_rng)?);
            eval_score = Some(s);
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, policy.clone()));
            }
        }
        let m = IterationMetrics {
            iteration,
            env_steps,
            mean_episode_score: buf.mean_episode_score(),
            mean_composite_reward: buf.mean_reward(),
            elbo_estimate: buf.elbo_estimate(),
            d_expert_mean,
            d_agent_mean,
            policy_entropy: stats.entropy,
            eval_score,
            losses: Losses {
                policy: stats.policy_loss,
                value: stats.value_loss,
                discriminator: d_loss,
            },
        };
        log::debug!(
            "iter {iteration} steps {env_steps} score {:?} eval {:?}",
            m.mean_episode_score,
            m.eval_score
        );
        metrics.push(m);
        last = buf;
        if let (Some(bar), Some(s)) = (cfg.stop_at_score, eval_score) {
            if s >= bar {
                break;
            }
        }
    }

    let (best_eval_score, best_policy) = match best {
        Some((s, p)) => (Some(s), p),
        None => (None, policy.clone()),
    };
    Ok(TrainOutcome {
        policy,
        best_policy,
        best_eval_score,
        value_fn,
        discriminator: disc,
        metrics,
        last_rollout: last,
        env_steps,
    })
}

/// Task plus imitation channels with an adversarially trained discriminator.
pub fn train_trgail(env: &EnvConfig, demos: &DemoDataset, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    train(
        TrainSetup {
            env,
            channels: ChannelSet::task_and_imitation(),
            demos: Some(demos),
            train_discriminator: true,
            init_policy: None,
            seed,
        },
        cfg,
    )
}
