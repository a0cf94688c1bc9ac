//! Named parameter storage, initialization and the checkpoint file.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! "LRCK" | version u32 | meta_len u32 | meta JSON
//! | tensor_count u32 | per tensor: name_len u16, name, dims 4×u32, f64 data
//! | has_optimizer u8 | [step u64 | first moments | second moments]
//! ```

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::CodecConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub(crate) fn push(&mut self, name: String, t: Tensor) -> usize {
        debug_assert!(self.index_of(&name).is_none(), "duplicate {name}");
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }
}

/// Builds parameters in a fixed order with seeded initial values.
pub(crate) struct Init<'a> {
    pub store: ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    /// Conv weight `[co, ci, k, k]` scaled by `gain / sqrt(fan_in)`.
    pub fn conv_weight(&mut self, name: &str, co: usize, ci: usize, k: usize, gain: f64) -> usize {
        let std = gain / ((ci * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..co * ci * k * k)
            .map(|_| normal.sample(self.rng))
            .collect();
        self.store.push(
            format!("{name}.weight"),
            Tensor::from_vec([co, ci, k, k], data),
        )
    }

    pub fn vector(&mut self, name: &str, c: usize, value: f64) -> usize {
        self.store
            .push(name.to_string(), Tensor::full([1, c, 1, 1], value))
    }

    pub fn jittered(&mut self, name: &str, c: usize, value: f64, jitter: f64) -> usize {
        let data = (0..c)
            .map(|_| value + jitter * (self.rng.gen::<f64>() - 0.5))
            .collect();
        self.store
            .push(name.to_string(), Tensor::from_vec([1, c, 1, 1], data))
    }
}

/// Metadata stored next to the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: CodecConfig,
    /// Frames per clip of every completed training stage, in order.
    #[serde(default)]
    pub stage_frames: Vec<usize>,
    #[serde(default)]
    pub step: u64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore,
    pub optimizer: Option<OptimizerState>,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    for d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.b.len() - self.pos < n {
            return Err(Error::Truncated {
                offset: self.pos,
                what,
            });
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let n = self.u16("tensor name")? as usize;
        let name = String::from_utf8(self.take(n, "tensor name")?.to_vec()).map_err(|_| {
            Error::Corrupt {
                offset: self.pos,
                what: "tensor name is not UTF-8".into(),
            }
        })?;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = self.u32("tensor dims")? as usize;
        }
        let len = dims.iter().product::<usize>();
        let raw = self.take(len.checked_mul(8).unwrap_or(usize::MAX), "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((name, Tensor::from_vec(dims, data)))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)
            .map_err(|e| Error::InvalidInput(format!("checkpoint metadata: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.names.iter().zip(&self.params.tensors) {
            put_tensor(&mut out, name, t);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(o) => {
                out.push(1);
                out.extend_from_slice(&o.step.to_le_bytes());
                for t in o.m.iter().chain(&o.v) {
                    put_tensor(&mut out, "", t);
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { b: bytes, pos: 0 };
        if r.take(4, "checkpoint magic")? != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic { offset: 0 });
        }
        let version = r.u32("checkpoint version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let n = r.u32("metadata length")? as usize;
        let meta: CheckpointMeta =
            serde_json::from_slice(r.take(n, "metadata")?).map_err(|e| Error::Corrupt {
                offset: 12,
                what: format!("checkpoint metadata: {e}"),
            })?;
        let count = r.u32("tensor count")? as usize;
        let mut params = ParamStore::default();
        for _ in 0..count {
            let (name, t) = r.tensor()?;
            params.push(name, t);
        }
        let optimizer = match r.u8("optimizer flag")? {
            0 => None,
            1 => {
                let step = r.u64("optimizer step")?;
                let mut read = || -> Result<Vec<Tensor>> {
                    (0..count).map(|_| r.tensor().map(|(_, t)| t)).collect()
                };
                let m = read()?;
                let v = read()?;
                Some(OptimizerState { step, m, v })
            }
            f => {
                return Err(Error::Corrupt {
                    offset: r.pos - 1,
                    what: format!("optimizer flag {f}"),
                })
            }
        };
        if r.pos != bytes.len() {
            return Err(Error::Corrupt {
                offset: r.pos,
                what: "trailing bytes after checkpoint".into(),
            });
        }
        Ok(Checkpoint {
            meta,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
