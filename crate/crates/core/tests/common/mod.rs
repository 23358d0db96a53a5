#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trgail_core::env::{ActionSpace, GridPush};
use trgail_core::gail::{
    discriminator_cross_entropy, discriminator_gradient, Discriminator, DiscriminatorConfig, DiscriminatorInput,
    PairBatch,
};
use trgail_core::math::{value_and_grad, Activation, MlpParams};
use trgail_core::oracle::TabularMdp;
use trgail_core::rl::{Policy, ValueNet};

pub const FD_STEP: f64 = 1e-5;

/// `‖a − n‖ / max(‖a‖, ‖n‖)` between an analytic gradient and central
/// differences of `f`, on a random direction plus `coords` random
/// coordinates.
pub fn fd_error(f: &dyn Fn(&[f64]) -> f64, params: &[f64], grad: &[f64], coords: usize, rng: &mut ChaCha8Rng) -> f64 {
    let central = |dir: &dyn Fn(usize) -> f64| {
        let plus: Vec<f64> = params.iter().enumerate().map(|(i, p)| p + FD_STEP * dir(i)).collect();
        let minus: Vec<f64> = params.iter().enumerate().map(|(i, p)| p - FD_STEP * dir(i)).collect();
        (f(&plus) - f(&minus)) / (2.0 * FD_STEP)
    };
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let v: Vec<f64> = (0..params.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    analytic.push(grad.iter().zip(&v).map(|(g, d)| g * d).sum::<f64>());
    numeric.push(central(&|i| v[i]));
    for _ in 0..coords {
        let k = rng.random_range(0..params.len());
        analytic.push(grad[k]);
        numeric.push(central(&|i| if i == k { 1.0 } else { 0.0 }));
    }
    let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-12)
}

fn randomize(params: &mut [f64], rng: &mut ChaCha8Rng, scale: f64) {
    params.iter_mut().for_each(|p| *p = rng.random_range(-scale..scale));
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f64> {
    (0..n * dim).map(|_| rng.random_range(-1.5..1.5)).collect()
}

fn one_hot_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f64> {
    let mut rows = vec![0.0; n * dim];
    for r in 0..n {
        rows[r * dim + rng.random_range(0..dim)] = 1.0;
    }
    rows
}

/// Worst relative error per network shape over `draws` random draws.
pub fn gradient_suite(draws: usize, seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // raw MLPs of every depth and activation the repo builds
    let shapes: [(&[usize], Activation); 5] = [
        (&[3, 1], Activation::Tanh),
        (&[4, 8, 2], Activation::Tanh),
        (&[75, 64, 64, 4], Activation::Tanh),
        (&[8, 64, 64, 2], Activation::Relu),
        (&[5, 16, 16, 16, 3], Activation::Relu),
    ];
    for (sizes, act) in shapes {
        let mut worst: f64 = 0.0;
        let mut net = MlpParams::uniform_activation(sizes, act).unwrap();
        let (inp, outd) = (sizes[0], *sizes.last().unwrap());
        for _ in 0..draws {
            randomize(net.params_mut(), &mut rng, 0.5);
            let x = random_rows(&mut rng, 6, inp);
            let w: Vec<f64> = (0..6 * outd).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |n: &MlpParams| -> f64 {
                let y = n.forward_batch(&x).unwrap();
                y.iter().zip(&w).map(|(a, b)| (a * b).tanh()).sum()
            };
            let (_, g) = value_and_grad(net.params(), |tape, p| {
                let xv = net.input_on_tape(tape, &x);
                let y = net.forward_tape(tape, p, 0, xv);
                let wv = tape.constant(trgail_core::math::Tensor::new(6, outd, w.clone()));
                let prod = tape.mul(y, wv);
                let t = tape.tanh(prod);
                Ok(tape.sum(t))
            })
            .unwrap();
            let base = net.clone();
            let f = move |p: &[f64]| {
                let mut n = base.clone();
                n.params_mut().copy_from_slice(p);
                loss(&n)
            };
            worst = worst.max(fd_error(&f, net.params(), &g, 20, &mut rng));
        }
        let name = format!("mlp {:?} {:?}", sizes, act);
        out.push((name, worst));
    }

    // policies: log-likelihood plus entropy, against the non-tape evaluators
    let spaces = [
        ("categorical policy 75-64-64-4", 75, ActionSpace::Discrete { n: 4 }, vec![64, 64]),
        ("categorical policy 1-2 (tabular)", 1, ActionSpace::Discrete { n: 2 }, vec![]),
        (
            "gaussian policy 8-64-64-2",
            8,
            ActionSpace::Continuous {
                low: vec![-1.0; 2],
                high: vec![1.0; 2],
            },
            vec![64, 64],
        ),
    ];
    for (name, obs_dim, space, hidden) in spaces {
        let mut worst: f64 = 0.0;
        for _ in 0..draws {
            let mut pol = Policy::new(obs_dim, &space, &hidden, Activation::Tanh, -0.5, &mut rng).unwrap();
            let mut flat = pol.flat_params();
            let n_net = pol.net().n_params();
            randomize(&mut flat[..n_net], &mut rng, 0.4);
            for v in &mut flat[n_net..] {
                *v = rng.random_range(-1.0..0.5);
            }
            pol.set_flat_params(&flat).unwrap();
            let m = 5;
            let obs = if obs_dim == 75 {
                one_hot_rows(&mut rng, m, obs_dim)
            } else {
                random_rows(&mut rng, m, obs_dim)
            };
            let (acts, actions): (Vec<f64>, Vec<trgail_core::env::Action>) = match &space {
                ActionSpace::Discrete { n } => {
                    let a: Vec<usize> = (0..m).map(|_| rng.random_range(0..*n)).collect();
                    (
                        a.iter().map(|&k| k as f64).collect(),
                        a.into_iter().map(trgail_core::env::Action::Discrete).collect(),
                    )
                }
                ActionSpace::Continuous { low, .. } => {
                    let d = low.len();
                    let raw = random_rows(&mut rng, m, d);
                    let acts = raw.chunks(d).map(|c| trgail_core::env::Action::Continuous(c.to_vec())).collect();
                    (raw, acts)
                }
            };
            let coef = 0.3;
            let (_, g) = value_and_grad(&flat, |tape, p| {
                let t = pol.terms_on_tape(tape, p, &obs, &acts);
                let lp = tape.mean(t.log_probs);
                let e = tape.scale(t.entropy, coef);
                Ok(tape.add(lp, e))
            })
            .unwrap();
            let base = pol.clone();
            let (obs_c, actions_c, dim) = (obs.clone(), actions.clone(), obs_dim);
            let f = move |p: &[f64]| {
                let mut q = base.clone();
                q.set_flat_params(p).unwrap();
                let mut lp = 0.0;
                let mut ent = 0.0;
                for (o, a) in obs_c.chunks(dim).zip(&actions_c) {
                    lp += q.log_prob(o, a).unwrap();
                    ent += q.entropy(o).unwrap();
                }
                lp / m as f64 + coef * ent / m as f64
            };
            worst = worst.max(fd_error(&f, &flat, &g, 20, &mut rng));
        }
        out.push((name.to_string(), worst));
    }

    // value network: squared error to random targets
    {
        let mut worst: f64 = 0.0;
        for _ in 0..draws {
            let mut v = ValueNet::new(8, &[64, 64], Activation::Tanh, &mut rng).unwrap();
            randomize(v.params_mut(), &mut rng, 0.4);
            let obs = random_rows(&mut rng, 7, 8);
            let targets: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (_, g) = value_and_grad(v.params(), |tape, p| {
                let y = v.values_on_tape(tape, p, &obs);
                let t = tape.constant(trgail_core::math::Tensor::column(targets.clone()));
                let e = tape.sub(y, t);
                let sq = tape.mul(e, e);
                Ok(tape.mean(sq))
            })
            .unwrap();
            let base_params = v.params().to_vec();
            let base = v;
            let (obs_c, t_c) = (obs.clone(), targets.clone());
            let f = move |p: &[f64]| {
                let mut q = ValueNet::new(8, &[64, 64], Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
                q.params_mut().copy_from_slice(p);
                obs_c
                    .chunks(8)
                    .zip(&t_c)
                    .map(|(o, t)| (q.value(o).unwrap() - t).powi(2))
                    .sum::<f64>()
                    / 7.0
            };
            worst = worst.max(fd_error(&f, &base_params, &g, 20, &mut rng));
            drop(base);
        }
        out.push(("value net 8-64-64-1".to_string(), worst));
    }

    // discriminators: cross-entropy against the non-tape loss
    let discs = [
        ("concat discriminator 79-64-1", 75, 4, DiscriminatorInput::Concat, vec![64]),
        ("concat discriminator 10-64-1 (continuous)", 8, 2, DiscriminatorInput::Concat, vec![64]),
        ("joint discriminator 24-1", 6, 4, DiscriminatorInput::Joint, vec![]),
        ("joint discriminator 24-16-1", 6, 4, DiscriminatorInput::Joint, vec![16]),
    ];
    for (name, obs_dim, act_dim, input, hidden) in discs {
        let mut worst: f64 = 0.0;
        for _ in 0..draws {
            let cfg = DiscriminatorConfig {
                hidden: hidden.clone(),
                input,
                ..Default::default()
            };
            let mut d = Discriminator::new(obs_dim, act_dim, &cfg, &mut rng).unwrap();
            let onehot = obs_dim != 8;
            let batch = |rng: &mut ChaCha8Rng, n: usize| {
                let mut b = PairBatch::new(obs_dim, act_dim);
                for _ in 0..n {
                    let o = if onehot { one_hot_rows(rng, 1, obs_dim) } else { random_rows(rng, 1, obs_dim) };
                    let a = if onehot || input == DiscriminatorInput::Joint {
                        one_hot_rows(rng, 1, act_dim)
                    } else {
                        random_rows(rng, 1, act_dim)
                    };
                    b.push(&o, &a, rng.random_range(0.2..2.0));
                }
                b
            };
            let expert = batch(&mut rng, 9);
            let agent = batch(&mut rng, 7);
            d.fit_normalization(&expert);
            randomize(d.params_mut(), &mut rng, 0.4);
            let (_, g) = discriminator_gradient(&d, &agent, &expert).unwrap();
            let params = d.params().to_vec();
            let base = d.clone();
            let f = move |p: &[f64]| {
                let mut q = base.clone();
                q.params_mut().copy_from_slice(p);
                discriminator_cross_entropy(&q, &agent, &expert).unwrap()
            };
            worst = worst.max(fd_error(&f, &params, &g, 20, &mut rng));
        }
        out.push((name.to_string(), worst));
    }
    out
}

/// A random MDP with `n_s ≤ 4`, `n_a ≤ 3`, `T ≤ 4`, deterministic
/// successors and a single start state, the setting in which the soft
/// policy reproduces the posterior exactly.
pub fn random_mdp(rng: &mut ChaCha8Rng) -> TabularMdp {
    random_mdp_with(rng, true)
}

/// Same sizes with full-support stochastic transitions and initial state.
pub fn random_stochastic_mdp(rng: &mut ChaCha8Rng) -> TabularMdp {
    random_mdp_with(rng, false)
}

fn random_mdp_with(rng: &mut ChaCha8Rng, deterministic: bool) -> TabularMdp {
    let n_s = rng.random_range(if deterministic { 1 } else { 2 }..=4);
    let n_a = rng.random_range(if deterministic { 1 } else { 2 }..=3);
    let horizon = rng.random_range(if deterministic { 1 } else { 2 }..=4);
    let simplex = |rng: &mut ChaCha8Rng, n: usize| {
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let point = |k: usize| {
        let mut v = vec![0.0; n_s];
        v[k] = 1.0;
        v
    };
    let mut transitions = Vec::new();
    for _ in 0..n_s * n_a {
        if deterministic {
            let k = rng.random_range(0..n_s);
            transitions.extend(point(k));
        } else {
            transitions.extend(simplex(rng, n_s));
        }
    }
    let rewards = (0..n_s * n_a).map(|_| rng.random_range(-2.0..2.0)).collect();
    let initial = if deterministic { point(rng.random_range(0..n_s)) } else { simplex(rng, n_s) };
    TabularMdp::new(n_s, n_a, horizon, transitions, rewards, initial).unwrap()
}

/// Trajectory weights `p(s₁) Π P · exp(Σ R)` computed as plain products by
/// nested iteration, independent of the library's log-space enumeration.
pub fn literal_weights(mdp: &TabularMdp) -> Vec<(Vec<(usize, usize)>, f64)> {
    let (n_s, n_a, horizon) = (mdp.n_states(), mdp.n_actions(), mdp.horizon());
    let mut out = Vec::new();
    let total = (n_s * n_a).pow(horizon as u32);
    for code in 0..total {
        let mut c = code;
        let mut path = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            path.push(((c / n_a) % n_s, c % n_a));
            c /= n_s * n_a;
        }
        let mut w = mdp.initial()[path[0].0];
        for t in 0..horizon {
            let (s, a) = path[t];
            w *= mdp.r(s, a).exp();
            if t + 1 < horizon {
                w *= mdp.p(s, a, path[t + 1].0);
            }
        }
        if w > 0.0 {
            out.push((path, w));
        }
    }
    out
}

/// Posterior `(t, s, a)` marginals from [`literal_weights`].
pub fn literal_marginals(mdp: &TabularMdp) -> (Vec<Vec<Vec<f64>>>, f64) {
    let weights = literal_weights(mdp);
    let z: f64 = weights.iter().map(|(_, w)| w).sum();
    let mut m = vec![vec![vec![0.0; mdp.n_actions()]; mdp.n_states()]; mdp.horizon()];
    for (path, w) in &weights {
        for (t, &(s, a)) in path.iter().enumerate() {
            m[t][s][a] += w / z;
        }
    }
    (m, z)
}

/// Reachable `(agent, object)` states of a GridPush with fixed start, and
/// the exact time-averaged state-action occupancies of two stationary
/// policies over `horizon` steps.
pub struct GridOccupancy {
    pub states: Vec<((usize, usize), (usize, usize))>,
    pub expert: BTreeMap<(usize, usize), f64>,
    pub agent: BTreeMap<(usize, usize), f64>,
}

pub fn grid_occupancy(horizon: usize, expert_pi: [f64; 4], agent_pi: [f64; 4]) -> GridOccupancy {
    let env = GridPush::new(5, horizon);
    let start = ((0, 0), (1, 1));
    let mut index: BTreeMap<((usize, usize), (usize, usize)), usize> = BTreeMap::new();
    let mut states = vec![start];
    index.insert(start, 0);
    let mut frontier = vec![start];
    for _ in 0..horizon {
        let mut next = Vec::new();
        for &(ag, ob) in &frontier {
            for a in 0..4 {
                let s2 = env.transition(ag, ob, a);
                if !index.contains_key(&s2) {
                    index.insert(s2, states.len());
                    states.push(s2);
                    next.push(s2);
                }
            }
        }
        frontier = next;
    }
    let occ = |pi: [f64; 4]| {
        let mut mu = vec![0.0; states.len()];
        mu[0] = 1.0;
        let mut rho = BTreeMap::new();
        for _ in 0..horizon {
            let mut nxt = vec![0.0; states.len()];
            for (i, &(ag, ob)) in states.iter().enumerate() {
                if mu[i] == 0.0 {
                    continue;
                }
                for (a, &p) in pi.iter().enumerate() {
                    *rho.entry((i, a)).or_insert(0.0) += mu[i] * p / horizon as f64;
                    nxt[index[&env.transition(ag, ob, a)]] += mu[i] * p;
                }
            }
            mu = nxt;
        }
        rho
    };
    GridOccupancy {
        expert: occ(expert_pi),
        agent: occ(agent_pi),
        states,
    }
}

/// Total-variation distance between the learned bandit policy and
/// `softmax(r / α)` after max-ent PPO with `α = 1`.
pub fn bandit_tv(seed: u64) -> f64 {
    use trgail_core::env::EnvConfig;
    use trgail_core::pgm::ChannelSet;
    use trgail_core::rl::{train, PpoConfig, TrainConfig, TrainSetup};
    let env = EnvConfig::new("bandit");
    let cfg = TrainConfig {
        ppo: PpoConfig {
            gamma: 1.0,
            gae_lambda: 1.0,
            entropy_coef: 1.0,
            epochs: 1,
            minibatch_size: 64,
            rollout_len: 64,
            policy_lr: 1e-2,
            value_lr: 1e-2,
            normalize_advantages: false,
            hidden: vec![],
            ..PpoConfig::default()
        },
        total_steps: 64 * 2000,
        eval_every: 0,
        ..TrainConfig::default()
    };
    let out = train(
        TrainSetup {
            env: &env,
            channels: ChannelSet::task_only(),
            demos: None,
            train_discriminator: false,
            init_policy: None,
            seed,
        },
        &cfg,
    )
    .unwrap();
    let p = out.policy.probs(&[1.0]).unwrap();
    let z = 1.0 + 1f64.exp();
    let target = [1.0 / z, 1f64.exp() / z];
    0.5 * p.iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Two short trainings: channels `{a, b}` against one channel computing
/// `a + b`. True when metrics and final parameters agree bit for bit.
pub fn additivity_holds(env_id: &str, seed: u64) -> bool {
    use trgail_core::env::EnvConfig;
    use trgail_core::pgm::{ChannelSet, EmissionContext, OptimalityChannel};
    use trgail_core::rl::{train, PpoConfig, TrainConfig, TrainSetup};
    fn a(ctx: &EmissionContext) -> f64 {
        ctx.task_reward
    }
    fn b(ctx: &EmissionContext) -> f64 {
        -0.1 * ctx.info.map_or(0.0, |i| i.object_goal_dist + 0.5 * i.agent_object_dist)
    }
    let env = EnvConfig::new(env_id);
    let cfg = TrainConfig {
        ppo: PpoConfig {
            rollout_len: 400,
            minibatch_size: 100,
            epochs: 3,
            hidden: vec![32, 32],
            ..PpoConfig::default()
        },
        total_steps: 1200,
        eval_every: 2,
        eval_episodes: 2,
        ..TrainConfig::default()
    };
    let run = |channels: ChannelSet| {
        train(
            TrainSetup {
                env: &env,
                channels,
                demos: None,
                train_discriminator: false,
                init_policy: None,
                seed,
            },
            &cfg,
        )
        .unwrap()
    };
    let split = run(ChannelSet::new(vec![OptimalityChannel::custom("a", a), OptimalityChannel::custom("b", b)]).unwrap());
    let summed = run(ChannelSet::new(vec![OptimalityChannel::custom("a+b", |c: &EmissionContext| a(c) + b(c))]).unwrap());
    let bits = |xs: Vec<f64>| xs.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    serde_json::to_string(&split.metrics).unwrap() == serde_json::to_string(&summed.metrics).unwrap()
        && bits(split.policy.flat_params()) == bits(summed.policy.flat_params())
        && bits(split.value_fn.params().to_vec()) == bits(summed.value_fn.params().to_vec())
        && split.last_rollout.mean_reward().to_bits() == summed.last_rollout.mean_reward().to_bits()
}

/// Trains a tabular (joint one-hot, no hidden layer) discriminator on the
/// exact occupancies of a frozen agent and expert on GridPush. Returns the
/// largest `|D − ρ_E / (ρ_E + ρ_A)|` over pairs with occupancy above 0.01
/// and how many pairs were checked.
pub fn discriminator_optimum_error() -> (f64, usize) {
    let occ = grid_occupancy(6, [0.4, 0.1, 0.4, 0.1], [0.25; 4]);
    let n = occ.states.len();
    let one_hot = |k: usize, d: usize| {
        let mut v = vec![0.0; d];
        v[k] = 1.0;
        v
    };
    let batch = |rho: &BTreeMap<(usize, usize), f64>| {
        let mut b = PairBatch::new(n, 4);
        for (&(s, a), &w) in rho {
            if w > 0.0 {
                b.push(&one_hot(s, n), &one_hot(a, 4), w);
            }
        }
        b
    };
    let expert = batch(&occ.expert);
    let agent = batch(&occ.agent);
    let cfg = DiscriminatorConfig {
        hidden: vec![],
        learning_rate: 0.05,
        input: DiscriminatorInput::Joint,
        ..Default::default()
    };
    let mut d = Discriminator::new(n, 4, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    trgail_core::gail::discriminator_update(&mut d, &agent, &expert, 3000).unwrap();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (&(s, a), &pe) in &occ.expert {
        let pa = occ.agent.get(&(s, a)).copied().unwrap_or(0.0);
        if pe.max(pa) <= 0.01 {
            continue;
        }
        checked += 1;
        let target = pe / (pe + pa);
        let got = d.prob(&one_hot(s, n), &one_hot(a, 4)).unwrap();
        worst = worst.max((got - target).abs());
    }
    (worst, checked)
}

/// A seconds-scale GridPush experiment under `dir`, with a dataset of five
/// demonstrations from a briefly trained expert already written.
pub fn small_experiment(dir: &std::path::Path, method: trgail_core::harness::Method) -> trgail_core::harness::ExperimentConfig {
    use trgail_core::expert::save_dataset;
    use trgail_core::harness::{sample_expert_dataset, train_expert_fixture, ExperimentConfig};
    use trgail_core::rl::PpoConfig;
    let mut cfg = ExperimentConfig::new("grid-push", method, dir.join("runs"));
    let ppo = PpoConfig {
        rollout_len: 500,
        minibatch_size: 125,
        epochs: 2,
        hidden: vec![32, 32],
        ..PpoConfig::tabular()
    };
    cfg.seeds = vec![0, 1];
    cfg.budget = 1500;
    cfg.eval_episodes = 5;
    cfg.eval_every = 2;
    cfg.checkpoint_episodes = 3;
    cfg.ppo = ppo.clone();
    cfg.discriminator.steps = 3;
    cfg.bc.epochs = 3;
    cfg.expert.ppo = ppo;
    cfg.expert.budget = 1500;
    cfg.expert.stop_at_score = None;
    cfg.expert.eval_episodes = 3;
    cfg.expert.n_trajectories = 5;
    cfg.n_demonstrations = 3;
    cfg.sweep.demonstrations = vec![1, 3];
    cfg.jobs = 1;
    let path = dir.join("demos.tgds");
    let (expert, _) = train_expert_fixture(&cfg).unwrap();
    save_dataset(&sample_expert_dataset(&cfg, &expert, 5).unwrap(), &path).unwrap();
    cfg.dataset = Some(path);
    cfg
}
