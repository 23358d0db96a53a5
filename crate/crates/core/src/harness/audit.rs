use super::config::Method;
use super::run::RolloutRecord;
use crate::error::{Error, Result};
use crate::gail::D_CLIP;
use crate::rl::IterationMetrics;

/// Tolerance of the ELBO recomputation.
pub const ELBO_TOLERANCE: f64 = 1e-9;

fn channels_of(method: Method) -> &'static [&'static str] {
    match method {
        Method::Ppo | Method::BcPpo => &["task"],
        Method::Gail => &["imitation"],
        Method::Trgail => &["imitation", "task"],
        Method::Bc => &[],
    }
}

/// Checks that every persisted reward is built only from the channels the
/// method is allowed to see: a binary task reward and a clipped `log D`.
/// Shaping or any other channel fails the audit.
pub fn audit_rewards(method: Method, rollout: &[RolloutRecord]) -> Result<()> {
    let allowed = channels_of(method);
    let (lo, hi) = (D_CLIP.ln(), (1.0 - D_CLIP).ln());
    for (i, r) in rollout.iter().enumerate() {
        let names: Vec<&str> = r.emissions.keys().map(String::as_str).collect();
        if names != allowed {
            return Err(Error::protocol(format!(
                "step {i}: {method} rewards built from {names:?}, expected {allowed:?}"
            )));
        }
        let mut total: Option<f64> = None;
        for (name, &v) in &r.emissions {
            let ok = match name.as_str() {
                "task" => (v == 0.0 || v == 1.0) && v == r.task_reward,
                _ => (lo..=hi).contains(&v),
            };
            if !ok {
                return Err(Error::protocol(format!("step {i}: {name} emission {v} is out of range")));
            }
            total = Some(total.map_or(v, |t| t + v));
        }
        if total != Some(r.composite) {
            return Err(Error::protocol(format!(
                "step {i}: composite {} is not the sum of its emissions",
                r.composite
            )));
        }
    }
    Ok(())
}

/// Mean over the rollout's complete episodes of `Σ_t (Σ emissions − log π)`,
/// or `None` when no episode both started and ended inside it.
pub fn recompute_elbo(rollout: &[RolloutRecord]) -> Option<f64> {
    let mut open: Vec<Option<f64>> = Vec::new();
    let mut episodes = Vec::new();
    for r in rollout {
        if open.len() <= r.env {
            open.resize(r.env + 1, None);
        }
        if r.t == 0 {
            open[r.env] = Some(0.0);
        }
        let reward: f64 = r.emissions.values().sum();
        if let Some(acc) = open[r.env].as_mut() {
            *acc += reward - r.log_prob;
        }
        if r.done {
            if let Some(acc) = open[r.env].take() {
                episodes.push(acc);
            }
        }
    }
    (!episodes.is_empty()).then(|| episodes.iter().sum::<f64>() / episodes.len() as f64)
}

/// The last metrics line's ELBO estimate must equal the one recomputed
/// from the persisted final rollout.
pub fn audit_elbo(metrics: &[IterationMetrics], rollout: &[RolloutRecord]) -> Result<()> {
    let Some(last) = metrics.last() else {
        return Ok(());
    };
    match (last.elbo_estimate, recompute_elbo(rollout)) {
        (None, None) => Ok(()),
        (Some(a), Some(b)) if (a - b).abs() <= ELBO_TOLERANCE => Ok(()),
        (a, b) => Err(Error::protocol(format!(
            "reported ELBO {a:?} differs from the persisted rollout's {b:?}"
        ))),
    }
}
