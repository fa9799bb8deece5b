//! Self-describing binary checkpoint for an [`Mlp`].
//!
//! All integers and floats are little-endian.
//!
//! | offset | size  | field                                              |
//! |--------|-------|----------------------------------------------------|
//! | 0      | 8     | magic `PCTLMLP\0`                                  |
//! | 8      | 4     | format version, `u32` (currently 1)               |
//! | 12     | 1     | hidden activation tag                              |
//! | 13     | 1     | output activation tag                              |
//! | 14     | 2     | reserved, zero                                     |
//! | 16     | 8     | issued slot, `i64` (`-1` when not a broadcast)     |
//! | 24     | 4     | number of widths `W` (layers + 1), `u32`           |
//! | 28     | 4·W   | layer widths, `u32` each, input first              |
//! | ..     | 8     | parameter count `P`, `u64`                         |
//! | ..     | 8·P   | parameters, `f64`: per layer, weights row-major (`out × in`) then biases |
//!
//! Activation tags: 0 identity, 1 rectifier, 2 logistic, 3 tanh.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::mlp::{Activation, Mlp};
use crate::scalar::{lit, Scalar};

pub const MAGIC: &[u8; 8] = b"PCTLMLP\0";
pub const VERSION: u32 = 1;

/// A network plus the slot at which the trainer issued it, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: Mlp<T>,
    pub issued_slot: Option<i64>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(params: Mlp<T>, issued_slot: Option<i64>) -> Self {
        Self { params, issued_slot }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let net = &self.params;
        let dims = net.layer_dims();
        let mut out = Vec::with_capacity(40 + 4 * dims.len() + 8 * net.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(net.hidden_activation().tag());
        out.push(net.output_activation().tag());
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&self.issued_slot.unwrap_or(-1).to_le_bytes());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in &dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(net.num_params() as u64).to_le_bytes());
        for p in net.params_flat() {
            out.extend_from_slice(&p.as_f64().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::MalformedCheckpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION,
            });
        }
        let tags = r.take(4)?;
        let hidden = Activation::from_tag(tags[0])
            .ok_or_else(|| Error::MalformedCheckpoint(format!("unknown activation tag {}", tags[0])))?;
        let output = Activation::from_tag(tags[1])
            .ok_or_else(|| Error::MalformedCheckpoint(format!("unknown activation tag {}", tags[1])))?;
        let issued = i64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let n_dims = r.u32()? as usize;
        if !(2..=64).contains(&n_dims) {
            return Err(Error::MalformedCheckpoint(format!("implausible layer count {n_dims}")));
        }
        let dims = (0..n_dims).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let mut net = Mlp::zeros(&dims, hidden, output)
            .map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
        let count = r.u64()? as usize;
        if count != net.num_params() {
            return Err(Error::shape(
                format!("{} parameters for widths {dims:?}", net.num_params()),
                count,
            ));
        }
        let params = (0..count)
            .map(|_| r.take(8).map(|b| lit::<T>(f64::from_le_bytes(b.try_into().expect("8 bytes")))))
            .collect::<Result<Vec<T>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::MalformedCheckpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        net.set_params_flat(&params)?;
        Ok(Self {
            params: net,
            issued_slot: (issued >= 0).then_some(issued),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and checks the input width against what the caller will feed.
    pub fn load_for_input(path: impl AsRef<Path>, input_dim: usize) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.params.input_dim() != input_dim {
            return Err(Error::shape(
                format!("policy input width {input_dim}"),
                ck.params.input_dim(),
            ));
        }
        Ok(ck)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::MalformedCheckpoint(format!("truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
