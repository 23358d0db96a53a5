//! Exact inference on small finite-horizon MDPs.
//!
//! Trajectory weights are `p(s₁) Π P(s_{t+1}|s_t,a_t) · exp(Σ_t R(s_t,a_t))`
//! with no action prior, so the normalizer is `log p(O₁:T)` and the soft
//! Bellman recursion below (`V = logsumexp_a Q`, no discount) computes it
//! exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{check_dim, Error, Result};

/// Enumeration guard: trajectories visited by [`enumerate_posterior`].
pub const MAX_ENUMERATED: u128 = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    /// `P[s][a][s']`, flattened.
    transitions: Vec<f64>,
    /// `R[s][a]`, flattened.
    rewards: Vec<f64>,
    initial: Vec<f64>,
}

/// Time-indexed stochastic policy `π[t][s][a]`.
pub type TabularPolicy = Vec<Vec<Vec<f64>>>;

#[derive(Clone, Debug, PartialEq)]
pub struct SoftSolution {
    pub q: Vec<Vec<Vec<f64>>>,
    pub v: Vec<Vec<f64>>,
    pub policy: TabularPolicy,
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || horizon == 0 {
            return Err(Error::config("tabular MDP sizes and horizon must be positive"));
        }
        check_dim("transition table", n_states * n_actions * n_states, transitions.len())?;
        check_dim("reward table", n_states * n_actions, rewards.len())?;
        check_dim("initial distribution", n_states, initial.len())?;
        let is_dist = |p: &[f64]| {
            p.iter().all(|&x| (0.0..=1.0).contains(&x)) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-12
        };
        if !is_dist(&initial) {
            return Err(Error::config("initial distribution must sum to 1"));
        }
        for (k, row) in transitions.chunks(n_states).enumerate() {
            if !is_dist(row) {
                return Err(Error::config(format!(
                    "transition row (s={}, a={}) must sum to 1",
                    k / n_actions,
                    k % n_actions
                )));
            }
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::config("rewards must be finite"));
        }
        Ok(Self {
            n_states,
            n_actions,
            horizon,
            transitions,
            rewards,
            initial,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn next_row(&self, s: usize, a: usize) -> &[f64] {
        let k = (s * self.n_actions + a) * self.n_states;
        &self.transitions[k..k + self.n_states]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Same dynamics with a different reward table.
    pub fn with_rewards(&self, rewards: Vec<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.horizon,
            self.transitions.clone(),
            rewards,
            self.initial.clone(),
        )
    }

    /// Same dynamics with the rewards of several emission channels added.
    pub fn with_summed_rewards(&self, tables: &[Vec<f64>]) -> Result<Self> {
        let mut total = vec![0.0; self.rewards.len()];
        for table in tables {
            check_dim("channel reward table", total.len(), table.len())?;
            for (t, r) in total.iter_mut().zip(table) {
                *t += r;
            }
        }
        self.with_rewards(total)
    }

    /// Deterministic chain: `0 = left`, `1 = right`, starting in state 0.
    /// Reward 1 exactly when the step lands in the last state.
    pub fn chain(k: usize, horizon: usize) -> Self {
        let (n_s, n_a) = (k, 2);
        let mut transitions = vec![0.0; n_s * n_a * n_s];
        let mut rewards = vec![0.0; n_s * n_a];
        for s in 0..k {
            for a in 0..2 {
                let next = if a == 0 { s.saturating_sub(1) } else { (s + 1).min(k - 1) };
                transitions[(s * n_a + a) * n_s + next] = 1.0;
                if next == k - 1 {
                    rewards[s * n_a + a] = 1.0;
                }
            }
        }
        let mut initial = vec![0.0; n_s];
        initial[0] = 1.0;
        Self::new(n_s, n_a, horizon, transitions, rewards, initial).expect("chain tables are valid")
    }

    /// One state, two arms with rewards 0 and 1, one step.
    pub fn bandit() -> Self {
        Self::new(1, 2, 1, vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0]).expect("bandit tables are valid")
    }

    /// Parses the plain-text table format:
    ///
    /// ```text
    /// # comments and blank lines are ignored
    /// states 2
    /// actions 2
    /// horizon 3
    /// initial 1 0
    /// reward 0  0.0 1.0          # reward <s> then one value per action
    /// reward 1  0.5 0.0
    /// transition 0 0  1 0        # transition <s> <a> then P(s'|s,a) per s'
    /// transition 0 1  0 1
    /// transition 1 0  1 0
    /// transition 1 1  0 1
    /// ```
    pub fn from_text(text: &str) -> Result<Self> {
        let mut dims: BTreeMap<&str, usize> = BTreeMap::new();
        let mut initial = None;
        let mut reward_rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut trans_rows: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        let bad = |line: usize, msg: &str| Error::config(format!("line {line}: {msg}"));
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            let key = words.next().unwrap();
            let nums: Vec<f64> = words
                .map(|w| w.parse::<f64>().map_err(|_| bad(line_no, &format!("bad number {w:?}"))))
                .collect::<Result<_>>()?;
            let idx = |x: f64| -> Result<usize> {
                if x >= 0.0 && x.fract() == 0.0 {
                    Ok(x as usize)
                } else {
                    Err(bad(line_no, "index must be a non-negative integer"))
                }
            };
            match key {
                "states" | "actions" | "horizon" => {
                    let [v] = nums[..] else {
                        return Err(bad(line_no, "expected one value"));
                    };
                    dims.insert(key, idx(v)?);
                }
                "initial" => initial = Some(nums),
                "reward" if !nums.is_empty() => {
                    reward_rows.insert(idx(nums[0])?, nums[1..].to_vec());
                }
                "transition" if nums.len() >= 2 => {
                    trans_rows.insert((idx(nums[0])?, idx(nums[1])?), nums[2..].to_vec());
                }
                _ => return Err(bad(line_no, &format!("unrecognized row {key:?}"))),
            }
        }
        let get = |k: &str| dims.get(k).copied().ok_or_else(|| Error::config(format!("missing `{k}` row")));
        let (n_s, n_a, horizon) = (get("states")?, get("actions")?, get("horizon")?);
        let mut rewards = Vec::with_capacity(n_s * n_a);
        let mut transitions = Vec::with_capacity(n_s * n_a * n_s);
        for s in 0..n_s {
            let row = reward_rows
                .get(&s)
                .ok_or_else(|| Error::config(format!("missing reward row for state {s}")))?;
            check_dim("reward row", n_a, row.len())?;
            rewards.extend_from_slice(row);
            for a in 0..n_a {
                let row = trans_rows
                    .get(&(s, a))
                    .ok_or_else(|| Error::config(format!("missing transition row ({s}, {a})")))?;
                check_dim("transition row", n_s, row.len())?;
                transitions.extend_from_slice(row);
            }
        }
        let initial = initial.ok_or_else(|| Error::config("missing `initial` row"))?;
        Self::new(n_s, n_a, horizon, transitions, rewards, initial)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let join = |xs: &[f64]| xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "states {}", self.n_states);
        let _ = writeln!(out, "actions {}", self.n_actions);
        let _ = writeln!(out, "horizon {}", self.horizon);
        let _ = writeln!(out, "initial {}", join(&self.initial));
        for s in 0..self.n_states {
            let row = &self.rewards[s * self.n_actions..(s + 1) * self.n_actions];
            let _ = writeln!(out, "reward {s} {}", join(row));
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let _ = writeln!(out, "transition {s} {a} {}", join(self.next_row(s, a)));
            }
        }
        out
    }
}

/// A trajectory as the sequence of `(state, action)` pairs for `t = 1..T`.
pub type TrajectoryKey = Vec<(usize, usize)>;

/// Exact posterior `p(τ | O₁:T)` over all trajectories of positive weight.
pub fn enumerate_posterior(mdp: &TabularMdp) -> Result<BTreeMap<TrajectoryKey, f64>> {
    let log_weights = enumerate_log_weights(mdp)?;
    let values: Vec<f64> = log_weights.values().copied().collect();
    let log_z = logsumexp(&values);
    Ok(log_weights
        .into_iter()
        .map(|(k, lw)| (k, (lw - log_z).exp()))
        .collect())
}

/// `log p(O₁:T)`: logsumexp of all enumerated trajectory log-weights.
pub fn log_evidence(mdp: &TabularMdp) -> Result<f64> {
    let values: Vec<f64> = enumerate_log_weights(mdp)?.into_values().collect();
    Ok(logsumexp(&values))
}

/// Unnormalized log-weight of every trajectory with non-zero dynamics
/// probability.
pub fn enumerate_log_weights(mdp: &TabularMdp) -> Result<BTreeMap<TrajectoryKey, f64>> {
    let per_step = (mdp.n_states * mdp.n_actions) as u128;
    let count = per_step.checked_pow(mdp.horizon as u32).unwrap_or(u128::MAX);
    if count > MAX_ENUMERATED {
        return Err(Error::Capacity {
            count,
            limit: MAX_ENUMERATED,
        });
    }
    let mut out = BTreeMap::new();
    let mut path = Vec::with_capacity(mdp.horizon);
    for s in 0..mdp.n_states {
        if mdp.initial[s] > 0.0 {
            extend(mdp, s, mdp.initial[s].ln(), &mut path, &mut out);
        }
    }
    Ok(out)
}

fn extend(
    mdp: &TabularMdp,
    s: usize,
    log_w: f64,
    path: &mut TrajectoryKey,
    out: &mut BTreeMap<TrajectoryKey, f64>,
) {
    for a in 0..mdp.n_actions {
        let lw = log_w + mdp.r(s, a);
        path.push((s, a));
        if path.len() == mdp.horizon {
            out.insert(path.clone(), lw);
        } else {
            for next in 0..mdp.n_states {
                let p = mdp.p(s, a, next);
                if p > 0.0 {
                    extend(mdp, next, lw + p.ln(), path, out);
                }
            }
        }
        path.pop();
    }
}

/// Per-`(t, s, a)` marginals of a trajectory distribution.
pub fn trajectory_marginals(
    mdp: &TabularMdp,
    dist: &BTreeMap<TrajectoryKey, f64>,
) -> Vec<Vec<Vec<f64>>> {
    let mut m = vec![vec![vec![0.0; mdp.n_actions]; mdp.n_states]; mdp.horizon];
    for (key, p) in dist {
        for (t, &(s, a)) in key.iter().enumerate() {
            m[t][s][a] += p;
        }
    }
    m
}

/// Backward soft Bellman recursion with `V[T+1] ≡ 0`.
pub fn soft_value_iteration(mdp: &TabularMdp) -> SoftSolution {
    let (n_s, n_a, horizon) = (mdp.n_states, mdp.n_actions, mdp.horizon);
    let mut q = vec![vec![vec![0.0; n_a]; n_s]; horizon];
    let mut v = vec![vec![0.0; n_s]; horizon];
    let mut policy = vec![vec![vec![0.0; n_a]; n_s]; horizon];
    for t in (0..horizon).rev() {
        for s in 0..n_s {
            for a in 0..n_a {
                let future = if t + 1 < horizon {
                    mdp.next_row(s, a).iter().zip(&v[t + 1]).map(|(p, vn)| p * vn).sum()
                } else {
                    0.0
                };
                q[t][s][a] = mdp.r(s, a) + future;
            }
            v[t][s] = logsumexp(&q[t][s]);
            for a in 0..n_a {
                policy[t][s][a] = (q[t][s][a] - v[t][s]).exp();
            }
        }
    }
    SoftSolution { q, v, policy }
}

/// State marginals `μ_t(s)` under `policy`, by forward propagation.
pub fn state_marginals(mdp: &TabularMdp, policy: &TabularPolicy) -> Vec<Vec<f64>> {
    let mut mu = Vec::with_capacity(mdp.horizon);
    mu.push(mdp.initial.clone());
    for t in 0..mdp.horizon - 1 {
        let mut next = vec![0.0; mdp.n_states];
        for s in 0..mdp.n_states {
            let ms = mu[t][s];
            if ms == 0.0 {
                continue;
            }
            for a in 0..mdp.n_actions {
                let w = ms * policy[t][s][a];
                for (n, p) in next.iter_mut().zip(mdp.next_row(s, a)) {
                    *n += w * p;
                }
            }
        }
        mu.push(next);
    }
    mu
}

/// State-action occupancy `μ_t(s)·π_t(a|s)`.
pub fn occupancy(mdp: &TabularMdp, policy: &TabularPolicy) -> Vec<Vec<Vec<f64>>> {
    state_marginals(mdp, policy)
        .iter()
        .zip(policy)
        .map(|(mu, pi)| {
            mu.iter()
                .zip(pi)
                .map(|(m, row)| row.iter().map(|p| m * p).collect())
                .collect()
        })
        .collect()
}

/// `E_π[Σ_t R(s_t,a_t) − log π_t(a_t|s_t)]`, computed exactly.
pub fn maxent_objective(mdp: &TabularMdp, policy: &TabularPolicy) -> f64 {
    let mu = state_marginals(mdp, policy);
    let mut total = 0.0;
    for t in 0..mdp.horizon {
        for s in 0..mdp.n_states {
            if mu[t][s] == 0.0 {
                continue;
            }
            let inner: f64 = (0..mdp.n_actions)
                .filter(|&a| policy[t][s][a] > 0.0)
                .map(|a| policy[t][s][a] * (mdp.r(s, a) - policy[t][s][a].ln()))
                .sum();
            total += mu[t][s] * inner;
        }
    }
    total
}

/// The same per-state distribution at every time step.
pub fn stationary_policy(rows: Vec<Vec<f64>>, horizon: usize) -> TabularPolicy {
    vec![rows; horizon]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_softmax() {
        let sol = soft_value_iteration(&TabularMdp::bandit());
        let p = &sol.policy[0][0];
        assert!((p[0] - 0.268_941_421_369_995).abs() < 1e-12);
        assert!((p[1] - 0.731_058_578_630_005).abs() < 1e-12);
    }

    #[test]
    fn zero_rewards_give_uniform_policy() {
        let mdp = TabularMdp::chain(4, 3).with_rewards(vec![0.0; 8]).unwrap();
        let sol = soft_value_iteration(&mdp);
        for t in 0..3 {
            for s in 0..4 {
                for a in 0..2 {
                    assert!((sol.policy[t][s][a] - 0.5).abs() < 1e-15);
                }
            }
        }
        let uniform = stationary_policy(vec![vec![0.5; 2]; 4], 3);
        assert!((maxent_objective(&mdp, &uniform) - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn equal_rewards_give_dynamics_prior() {
        let mdp = TabularMdp::chain(3, 3).with_rewards(vec![0.7; 6]).unwrap();
        let post = enumerate_posterior(&mdp).unwrap();
        // deterministic dynamics: every action sequence is one trajectory
        assert_eq!(post.len(), 8);
        for p in post.values() {
            assert!((p - 0.125).abs() < 1e-12);
        }
    }

    #[test]
    fn two_trajectory_odds_ratio() {
        // two states, each action deterministically moves to its own state;
        // reward 1 only for action 1 in state 0
        let mdp = TabularMdp::new(
            2,
            2,
            2,
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![1.0, 0.0],
        )
        .unwrap();
        let post = enumerate_posterior(&mdp).unwrap();
        let rewarded = post[&vec![(0, 1), (1, 0)]];
        let plain = post[&vec![(0, 0), (0, 0)]];
        assert!((rewarded / plain - 1f64.exp()).abs() < 1e-12);
        assert!((post.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_policy_objective_is_path_return() {
        let mdp = TabularMdp::chain(3, 4);
        // always right: 0 -> 1 -> 2 -> 2 -> 2, rewards 0, 1, 1, 1
        let right = stationary_policy(vec![vec![0.0, 1.0]; 3], 4);
        assert!((maxent_objective(&mdp, &right) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn capacity_guard() {
        let mdp = TabularMdp::chain(10, 8);
        assert!(matches!(enumerate_posterior(&mdp), Err(Error::Capacity { .. })));
    }

    #[test]
    fn text_round_trip() {
        let mdp = TabularMdp::chain(3, 4).with_rewards(vec![0.1, -0.25, 3.0, 0.0, 1.5, 2.0]).unwrap();
        assert_eq!(TabularMdp::from_text(&mdp.to_text()).unwrap(), mdp);
    }

    #[test]
    fn text_rejects_bad_rows() {
        let text = "states 1\nactions 1\nhorizon 1\ninitial 1\nreward 0 0\ntransition 0 0 0.5\n";
        assert!(TabularMdp::from_text(text).is_err());
        assert!(TabularMdp::from_text("states 1\n").is_err());
    }
}
