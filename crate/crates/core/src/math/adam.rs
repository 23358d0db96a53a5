use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Result};

/// Adam optimizer state for minimization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(dim: usize, learning_rate: f64) -> Self {
        Self {
            step_count: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            learning_rate,
        }
    }

    /// One bias-corrected descent step on `params`.
    ///
    /// An all-zero gradient only advances `step_count`; parameters and
    /// moments are left untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_dim("adam parameters", self.m.len(), params.len())?;
        check_dim("adam gradients", self.m.len(), grads.len())?;
        check_finite("adam gradients", grads)?;
        self.step_count += 1;
        if grads.iter().all(|&g| g == 0.0) {
            return Ok(());
        }
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn zero_gradient_leaves_params_and_moments() {
        let mut st = AdamState::new(3, 0.1);
        let mut p = vec![1.0, 2.0, 3.0];
        st.step(&mut p, &[0.5, -0.5, 1.0]).unwrap();
        let (p1, m1, v1) = (p.clone(), st.m.clone(), st.v.clone());
        st.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(st.step_count, 2);
        assert_eq!((p, st.m, st.v), (p1, m1, v1));
    }

    #[test]
    fn first_step_is_normalized_gradient() {
        let (lr, g) = (0.01, [0.3, -2.0, 1e-3]);
        let mut st = AdamState::new(3, lr);
        let mut p = vec![0.0; 3];
        st.step(&mut p, &g).unwrap();
        for i in 0..3 {
            let expected = -lr * g[i] / (g[i].abs() + st.eps);
            assert!((p[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn two_steps_constant_gradient_by_hand() {
        // m1 = 0.1g, v1 = 0.001g^2; m2 = 0.19g, v2 = 0.001999g^2
        // m2_hat = 0.19g/0.19 = g, v2_hat = 0.001999g^2/0.001999 = g^2
        let g = 0.5;
        let mut st = AdamState::new(1, 0.1);
        let mut p = vec![1.0];
        st.step(&mut p, &[g]).unwrap();
        st.step(&mut p, &[g]).unwrap();
        let one = 0.1 * g / (g + 1e-8);
        let m2_hat = (0.9 * 0.1 * g + 0.1 * g) / (1.0 - 0.81);
        let v2_hat = (0.999 * 0.001 * g * g + 0.001 * g * g) / (1.0 - 0.998_001);
        let two = 0.1 * m2_hat / (v2_hat.sqrt() + 1e-8);
        assert!((p[0] - (1.0 - one - two)).abs() < 1e-14);
        assert!((p[0] - 0.800_000_004).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_rejected() {
        let mut st = AdamState::new(2, 0.1);
        let mut p = vec![0.0; 2];
        let err = st.step(&mut p, &[0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::Numeric { index: 1, .. }));
    }
}
