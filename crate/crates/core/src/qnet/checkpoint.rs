//! Versioned binary checkpoint format for Q-networks.
//!
//! Layout (little-endian):
//!   magic "RQCK" | version u32 | scalar width u8 | n_actions u32 |
//!   tau_us u64 | n_layers u32 | per layer: out u32, in u32,
//!   weights (out*in scalars), biases (out scalars)
//!
//! Weights are stored as raw IEEE-754 bits, so a save/load roundtrip is
//! bit-exact.

use std::path::Path;

use crate::error::{Error, Result};
use crate::qnet::{Layer, QNetwork};
use crate::scalar::Scalar;
use crate::time::Micros;

const MAGIC: &[u8; 4] = b"RQCK";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode<S: Scalar>(net: &QNetwork<S>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(S::BYTE_WIDTH as u8);
    out.extend_from_slice(&(net.n_actions as u32).to_le_bytes());
    out.extend_from_slice(&net.tau.as_us().to_le_bytes());
    out.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    for layer in &net.layers {
        out.extend_from_slice(&(layer.out_dim as u32).to_le_bytes());
        out.extend_from_slice(&(layer.in_dim as u32).to_le_bytes());
        for &w in &layer.weights {
            w.write_le(&mut out);
        }
        for &b in &layer.biases {
            b.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint {
                offset: self.pos,
                msg: format!("unexpected end of file reading {what}"),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode<S: Scalar>(bytes: &[u8]) -> Result<QNetwork<S>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint {
            offset: 0,
            msg: format!("bad magic {magic:?}, expected {MAGIC:?}"),
        });
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let width = r.u8("scalar width")?;
    if width as usize != S::BYTE_WIDTH {
        return Err(Error::Checkpoint {
            offset: r.pos - 1,
            msg: format!(
                "scalar width {width} bytes, this build expects {}",
                S::BYTE_WIDTH
            ),
        });
    }
    let n_actions = r.u32("n_actions")? as usize;
    let tau = Micros(r.u64("tau_us")?);
    let n_layers = r.u32("n_layers")? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(Error::Checkpoint {
            offset: r.pos - 4,
            msg: format!("implausible layer count {n_layers}"),
        });
    }
    let mut layers = Vec::with_capacity(n_layers);
    let mut expected_in = 2 * n_actions + 1;
    for li in 0..n_layers {
        let out_dim = r.u32("layer out_dim")? as usize;
        let in_dim = r.u32("layer in_dim")? as usize;
        if in_dim != expected_in {
            return Err(Error::Checkpoint {
                offset: r.pos - 4,
                msg: format!("layer {li} input width {in_dim}, expected {expected_in}"),
            });
        }
        let mut weights = Vec::with_capacity(out_dim * in_dim);
        for _ in 0..out_dim * in_dim {
            weights.push(S::read_le(r.take(S::BYTE_WIDTH, "weight")?));
        }
        let mut biases = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            biases.push(S::read_le(r.take(S::BYTE_WIDTH, "bias")?));
        }
        layers.push(Layer {
            in_dim,
            out_dim,
            weights,
            biases,
        });
        expected_in = out_dim;
    }
    if let Some(last) = layers.last() {
        if last.out_dim != n_actions {
            return Err(Error::Checkpoint {
                offset: r.pos,
                msg: format!(
                    "output width {} does not match {} actions",
                    last.out_dim, n_actions
                ),
            });
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint {
            offset: r.pos,
            msg: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(QNetwork {
        layers,
        n_actions,
        tau,
    })
}

pub fn save<S: Scalar>(net: &QNetwork<S>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(net))?;
    Ok(())
}

pub fn load<S: Scalar>(path: &Path) -> Result<QNetwork<S>> {
    let bytes = std::fs::read(path)?;
    decode(&bytes)
}
