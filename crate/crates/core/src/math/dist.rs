//! Action distributions: diagonal Gaussian and categorical.

use rand::Rng;
use rand_distr::StandardNormal;

use super::tape::{gaussian_entropy, gaussian_log_density, log_softmax_row};
use crate::error::{check_dim, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Gaussian with per-dimension standard deviation; `log_std` is clamped to
/// `[LOG_STD_MIN, LOG_STD_MAX]` on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussianHead {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl DiagGaussianHead {
    pub fn new(mean: Vec<f64>, log_std: &[f64]) -> Result<Self> {
        check_dim("gaussian log_std", mean.len(), log_std.len())?;
        Ok(Self {
            mean,
            log_std: log_std.iter().map(|s| s.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect(),
        })
    }

    pub fn log_prob(&self, action: &[f64]) -> Result<f64> {
        check_dim("gaussian action", self.mean.len(), action.len())?;
        Ok(gaussian_log_density(&self.mean, &self.log_std, action))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, s)| {
                let z: f64 = rng.sample(StandardNormal);
                m + s.exp() * z
            })
            .collect()
    }

    pub fn entropy(&self) -> f64 {
        gaussian_entropy(&self.log_std)
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    log_softmax_row(logits, &mut out);
    out
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

pub fn categorical_log_prob(logits: &[f64], action: usize) -> f64 {
    log_softmax(logits)[action]
}

/// Inverse-CDF draw from `softmax(logits)`.
pub fn categorical_sample<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> usize {
    let probs = softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

pub fn categorical_entropy(logits: &[f64]) -> f64 {
    log_softmax(logits)
        .iter()
        .map(|lp| if lp.is_finite() { -lp.exp() * lp } else { 0.0 })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn standard_normal_mode_and_entropy() {
        let h = DiagGaussianHead::new(vec![0.0], &[0.0]).unwrap();
        assert!((h.log_prob(&[0.0]).unwrap() + 0.918_938_533_204_672_8).abs() < 1e-15);
        assert!((h.entropy() - 1.418_938_533_204_672_7).abs() < 1e-15);
    }

    #[test]
    fn mode_is_maximal() {
        let h = DiagGaussianHead::new(vec![0.3, -1.0], &[0.1, -0.4]).unwrap();
        let at_mode = h.log_prob(&[0.3, -1.0]).unwrap();
        for d in [-0.5, -0.01, 0.01, 0.5] {
            assert!(h.log_prob(&[0.3 + d, -1.0 - d]).unwrap() < at_mode);
        }
    }

    #[test]
    fn two_dim_density_matches_direct_formula() {
        // N(1;0,1) * N(1;0,4)
        let h = DiagGaussianHead::new(vec![0.0, 0.0], &[0.0, 2f64.ln()]).unwrap();
        let direct = ((-0.5f64).exp() / (2.0 * PI).sqrt()) * ((-1.0f64 / 8.0).exp() / (2.0 * (2.0 * PI).sqrt()));
        assert!((h.log_prob(&[1.0, 1.0]).unwrap() - direct.ln()).abs() < 1e-14);
    }

    #[test]
    fn entropy_at_clamp_floor() {
        let h = DiagGaussianHead::new(vec![0.0; 2], &[-50.0, -9.0]).unwrap();
        let floor = 2.0 * (LOG_STD_MIN + 0.5 * (2.0 * PI * std::f64::consts::E).ln());
        assert!((h.entropy() - floor).abs() < 1e-12);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let h = DiagGaussianHead::new(vec![0.5, -0.5], &[0.0, -1.0]).unwrap();
        let a = h.sample(&mut ChaCha8Rng::seed_from_u64(11));
        let b = h.sample(&mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
        let k1 = categorical_sample(&[0.1, 0.2, 0.3], &mut ChaCha8Rng::seed_from_u64(5));
        let k2 = categorical_sample(&[0.1, 0.2, 0.3], &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(k1, k2);
    }

    #[test]
    fn uniform_categorical() {
        let l = [0.7; 4];
        for k in 0..4 {
            assert!((categorical_log_prob(&l, k) - 0.25f64.ln()).abs() < 1e-15);
        }
        assert!((categorical_entropy(&l) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn saturated_categorical() {
        let p = softmax(&[30.0, 0.0, 0.0]);
        assert!(p[0] > 1.0 - 1e-9);
        let h = categorical_entropy(&[30.0, 0.0, 0.0]);
        assert!((0.0..=3f64.ln()).contains(&h));
    }

    #[test]
    fn softmax_of_one_two_three() {
        let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let p = softmax(&[1.0, 2.0, 3.0]);
        for (k, pk) in p.iter().enumerate() {
            assert!((pk - ((k + 1) as f64).exp() / z).abs() < 1e-15);
        }
        assert!((p[2] - 0.665_240_955_774_821_9).abs() < 1e-12);
    }

    #[test]
    fn gaussian_density_integrates_to_one() {
        let h = DiagGaussianHead::new(vec![0.4], &[-0.3]).unwrap();
        let (lo, hi, n) = (-8.0, 8.0, 20_000);
        let dx = (hi - lo) / n as f64;
        let total: f64 = (0..n)
            .map(|i| h.log_prob(&[lo + (i as f64 + 0.5) * dx]).unwrap().exp() * dx)
            .sum();
        assert!((total - 1.0).abs() < 1e-3);
    }
}
