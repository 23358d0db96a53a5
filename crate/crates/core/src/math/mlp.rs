//! Multilayer perceptrons stored as one flat parameter vector.
//!
//! Layer `l` occupies `W_l` (fan_in × fan_out, row-major) followed by `b_l`.
//! Hidden layers apply their activation; the output layer is the identity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{affine_forward, AffineLayout, Tape, Tensor, Var};
use crate::error::{check_dim, check_finite, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

impl MlpParams {
    /// Builds a network with all parameters zero.
    pub fn zeros(layer_sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::config(format!(
                "layer sizes must list at least two positive widths, got {layer_sizes:?}"
            )));
        }
        check_dim("hidden activations", layer_sizes.len() - 2, activations.len())?;
        let n = layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activations: activations.to_vec(),
            params: vec![0.0; n],
        })
    }

    /// Same activation on every hidden layer.
    pub fn uniform_activation(layer_sizes: &[usize], act: Activation) -> Result<Self> {
        let acts = vec![act; layer_sizes.len().saturating_sub(2)];
        Self::zeros(layer_sizes, &acts)
    }

    /// Scaled-uniform initialization with unit variance gain on hidden layers
    /// and `output_gain` on the last layer; biases start at zero.
    pub fn init<R: Rng + ?Sized>(mut self, rng: &mut R, output_gain: f64) -> Self {
        let n_layers = self.layer_sizes.len() - 1;
        for l in 0..n_layers {
            let layout = self.layout(l);
            let gain = if l + 1 == n_layers {
                output_gain
            } else {
                std::f64::consts::SQRT_2
            };
            let bound = gain * (3.0 / layout.fan_in as f64).sqrt();
            for w in &mut self.params[layout.w_off..layout.b_off] {
                *w = rng.random_range(-bound..=bound);
            }
            self.params[layout.b_off..layout.b_off + layout.fan_out].fill(0.0);
        }
        self
    }

    pub fn from_parts(
        layer_sizes: Vec<usize>,
        activations: Vec<Activation>,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut net = Self::zeros(&layer_sizes, &activations)?;
        check_dim("mlp parameters", net.params.len(), params.len())?;
        check_finite("mlp parameters", &params)?;
        net.params = params;
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn layout(&self, layer: usize) -> AffineLayout {
        let mut off = 0;
        for w in self.layer_sizes.windows(2).take(layer) {
            off += w[0] * w[1] + w[1];
        }
        let (fan_in, fan_out) = (self.layer_sizes[layer], self.layer_sizes[layer + 1]);
        AffineLayout {
            w_off: off,
            b_off: off + fan_in * fan_out,
            fan_in,
            fan_out,
        }
    }

    /// Forward pass on a batch of rows packed contiguously in `input`.
    pub fn forward_batch(&self, input: &[f64]) -> Result<Vec<f64>> {
        let fan_in = self.input_dim();
        if input.len() % fan_in != 0 {
            return Err(Error::Dimension {
                what: "mlp input",
                expected: fan_in,
                got: input.len(),
            });
        }
        let n = input.len() / fan_in;
        let mut x = input.to_vec();
        let n_layers = self.layer_sizes.len() - 1;
        for l in 0..n_layers {
            let layout = self.layout(l);
            let mut out = vec![0.0; n * layout.fan_out];
            affine_forward(&x, &self.params, layout, &mut out);
            if l + 1 < n_layers {
                let act = self.activations[l];
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            x = out;
        }
        Ok(x)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim("mlp input", self.input_dim(), input.len())?;
        self.forward_batch(input)
    }

    /// Records the forward pass on `tape`, reading parameters from `p`
    /// starting at `offset`.
    pub fn forward_tape(&self, tape: &mut Tape, p: Var, offset: usize, x: Var) -> Var {
        let n_layers = self.layer_sizes.len() - 1;
        let mut h = x;
        for l in 0..n_layers {
            let mut layout = self.layout(l);
            layout.w_off += offset;
            layout.b_off += offset;
            h = tape.affine(h, p, layout);
            if l + 1 < n_layers {
                h = match self.activations[l] {
                    Activation::Tanh => tape.tanh(h),
                    Activation::Relu => tape.relu(h),
                };
            }
        }
        h
    }

    /// Convenience wrapper placing a packed batch on the tape as a constant.
    pub fn input_on_tape(&self, tape: &mut Tape, rows: &[f64]) -> Var {
        let cols = self.input_dim();
        tape.constant(Tensor::new(rows.len() / cols, cols, rows.to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::tape::value_and_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = MlpParams::uniform_activation(&[3, 5, 2], Activation::Tanh).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let mut net = MlpParams::zeros(&[2, 2], &[]).unwrap();
        net.params_mut()[..4].copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(net.forward(&[0.3, -0.7]).unwrap(), vec![0.3, -0.7]);
    }

    #[test]
    fn hand_expanded_two_layer_net() {
        // W1 rows are inputs: x1 -> (0.1, -0.2, 0.3), x2 -> (0.4, 0.5, -0.6)
        let mut net = MlpParams::uniform_activation(&[2, 3, 1], Activation::Tanh).unwrap();
        let p = [
            0.1, -0.2, 0.3, 0.4, 0.5, -0.6, // W1
            0.01, 0.02, 0.03, // b1
            1.0, -1.0, 0.5, // W2
            0.2, // b2
        ];
        net.params_mut().copy_from_slice(&p);
        let h1 = (0.1f64 + 0.4 + 0.01).tanh();
        let h2 = (-0.2f64 + 0.5 + 0.02).tanh();
        let h3 = (0.3f64 - 0.6 + 0.03).tanh();
        let expected = h1 - h2 + 0.5 * h3 + 0.2;
        let out = net.forward(&[1.0, 1.0]).unwrap();
        assert!((out[0] - expected).abs() < 1e-15);
        assert!((out[0] - 0.228_625_859_984_297_46).abs() < 1e-12);
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let net = MlpParams::uniform_activation(&[3, 4, 1], Activation::Relu).unwrap();
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = MlpParams::uniform_activation(&[4, 8, 8, 3], Activation::Relu)
            .unwrap()
            .init(&mut rng, 1.0);
        let x: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let plain = net.forward_batch(&x).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(net.params());
        let xv = net.input_on_tape(&mut tape, &x);
        let y = net.forward_tape(&mut tape, p, 0, xv);
        assert_eq!(tape.value(y).data, plain);
    }

    #[test]
    fn half_square_norm_gradient_is_params() {
        let p = vec![0.5, -1.5, 2.0];
        let (v, g) = value_and_grad(&p, |t, p| {
            let sq = t.mul(p, p);
            let s = t.sum(sq);
            Ok(t.scale(s, 0.5))
        })
        .unwrap();
        assert!((v - 3.25).abs() < 1e-15);
        assert_eq!(g, p);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let (_, g) = value_and_grad(&[1.0, 2.0], |t, _| Ok(t.constant(Tensor::scalar(4.0)))).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn non_finite_loss_is_numeric_error() {
        let r = value_and_grad(&[0.0], |t, p| {
            let l = t.log(p);
            Ok(t.sum(l))
        });
        assert!(matches!(r, Err(Error::Numeric { .. })));
    }
}
