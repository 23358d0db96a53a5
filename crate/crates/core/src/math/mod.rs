//! Differentiable building blocks: tape, perceptrons, Adam, distributions,
//! and the binary parameter container.

pub mod adam;
pub mod dist;
pub mod mlp;
pub mod tape;

pub use adam::{clip_grad_norm, AdamState};
pub use dist::{
    categorical_entropy, categorical_log_prob, categorical_sample, log_softmax, softmax,
    DiagGaussianHead, LOG_STD_MAX, LOG_STD_MIN,
};
pub use mlp::{Activation, MlpParams};
pub use tape::{log_sigmoid, sigmoid, value_and_grad, Tape, Tensor, Var};

use crate::error::{Error, Result};

/// Magic bytes of the parameter container.
pub const PARAMS_MAGIC: &[u8; 4] = b"TGMP";
pub const PARAMS_VERSION: u32 = 1;

/// Serializes a network plus an optional trailing vector (e.g. `log_std`).
///
/// Layout, all integers and floats little-endian:
///
/// ```text
/// magic    [u8; 4]  "TGMP"
/// version  u32      1
/// n_sizes  u32      followed by n_sizes × u32 layer widths
/// n_acts   u32      followed by n_acts × u8 tags (0 = tanh, 1 = relu)
/// n_params u64      followed by n_params × f64 network parameters
/// n_extra  u64      followed by n_extra × f64 trailing values
/// ```
pub fn encode_params(net: &MlpParams, extra: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 8 * (net.n_params() + extra.len()));
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layer_sizes().len() as u32).to_le_bytes());
    for &s in net.layer_sizes() {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    out.extend_from_slice(&(net.activations().len() as u32).to_le_bytes());
    out.extend(net.activations().iter().map(|a| a.tag()));
    for block in [net.params(), extra] {
        out.extend_from_slice(&(block.len() as u64).to_le_bytes());
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<(MlpParams, Vec<f64>)> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != PARAMS_MAGIC {
        return Err(r.error_at(0, "bad magic"));
    }
    let version = r.u32()?;
    if version != PARAMS_VERSION {
        return Err(r.error_at(4, format!("unsupported version {version}")));
    }
    let n_sizes = r.u32()? as usize;
    let sizes = (0..n_sizes)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let n_acts = r.u32()? as usize;
    let tags_at = r.offset();
    let acts = r
        .take(n_acts)?
        .iter()
        .map(|&t| Activation::from_tag(t).ok_or_else(|| r.error_at(tags_at, format!("bad activation tag {t}"))))
        .collect::<Result<Vec<_>>>()?;
    let params = r.f64_block()?;
    let extra = r.f64_block()?;
    r.finish()?;
    let net = MlpParams::from_parts(sizes, acts, params).map_err(|e| r.error_at(0, e.to_string()))?;
    Ok((net, extra))
}

/// Cursor over a byte slice that reports failures with their offset.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn error_at(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error_at(self.pos, format!("unexpected end of data, wanted {n} bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64_block(&mut self) -> Result<Vec<f64>> {
        let at = self.pos;
        let n = self.u64()? as usize;
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(self.error_at(at, format!("block of {n} floats exceeds remaining data")));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(self.error_at(self.pos, "trailing bytes"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #[test]
        fn params_round_trip(seed in any::<u64>(), hidden in 1usize..9, extra in proptest::collection::vec(-5.0f64..5.0, 0..4)) {
            let net = MlpParams::zeros(&[3, hidden, 2], &[Activation::Relu]).unwrap()
                .init(&mut ChaCha8Rng::seed_from_u64(seed), 0.5);
            let bytes = encode_params(&net, &extra);
            let (back, back_extra) = decode_params(&bytes).unwrap();
            prop_assert_eq!(back, net);
            prop_assert_eq!(back_extra, extra);
        }
    }

    #[test]
    fn truncated_container_reports_offset() {
        let net = MlpParams::uniform_activation(&[2, 3, 1], Activation::Tanh).unwrap();
        let bytes = encode_params(&net, &[0.5]);
        let err = decode_params(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }
}
