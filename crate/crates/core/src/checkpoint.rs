//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        4 bytes   "DTSL"
//! version      u32       FORMAT_VERSION
//! max_len      u32
//! embed_dim    u32
//! classes      u32
//! filters      9 × u32   trunk block A, trunk block B, path
//! epoch        u64       completed epochs
//! lr, beta1, beta2, eps  4 × f64
//! adam step    u64
//! history      u64 count, then count × 4 f64 (supervised, unsupervised, weight, total)
//! count        u32       number of tensors that follow (3 × parameter tensors)
//! tensors      count × { ndim u32, dims ndim × u32, len u64, len × f64 }
//! ```
//!
//! Tensors appear as the parameters in [`NetworkParams::tensors`] order,
//! then the Adam first moments, then the second moments, in the same order.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::network::{Architecture, FilterPlan, NetworkParams};
use crate::objective::LossBreakdown;
use crate::optim::{AdamConfig, AdamState};

pub const MAGIC: &[u8; 4] = b"DTSL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub optimizer: AdamState,
    pub epoch: u64,
    /// One entry per completed epoch.
    pub history: Vec<LossBreakdown>,
}

impl Checkpoint {
    pub fn arch(&self) -> &Architecture {
        &self.params.arch
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        let arch = &self.params.arch;
        for v in [arch.max_len, arch.embed_dim, arch.classes] {
            w.u32(v as u32);
        }
        for v in arch.filters.as_array() {
            w.u32(v as u32);
        }
        w.u64(self.epoch);
        let c = &self.optimizer.config;
        for v in [c.lr, c.beta1, c.beta2, c.eps] {
            w.f64(v);
        }
        w.u64(self.optimizer.step);
        w.u64(self.history.len() as u64);
        for h in &self.history {
            for v in [h.supervised, h.unsupervised, h.weight, h.total] {
                w.f64(v);
            }
        }
        let tensors: Vec<&Tensor> = self
            .params
            .tensors()
            .into_iter()
            .chain(&self.optimizer.m)
            .chain(&self.optimizer.v)
            .collect();
        w.u32(tensors.len() as u32);
        for t in tensors {
            w.u32(t.shape().len() as u32);
            for &d in t.shape() {
                w.u32(d as u32);
            }
            w.u64(t.len() as u64);
            for &v in t.data() {
                w.f64(v);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::CorruptCheckpoint("missing DTSL magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let max_len = r.u32()? as usize;
        let embed_dim = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let mut plan = [0usize; 9];
        for p in &mut plan {
            *p = r.u32()? as usize;
        }
        let arch = Architecture::new(max_len, embed_dim, classes).with_filters(FilterPlan::from_array(plan));
        arch.validate()
            .map_err(|e| Error::CorruptCheckpoint(format!("architecture descriptor: {e}")))?;
        let epoch = r.u64()?;
        let config = AdamConfig {
            lr: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            eps: r.f64()?,
        };
        let step = r.u64()?;
        let entries = r.u64()?;
        if entries != epoch {
            return Err(Error::CorruptCheckpoint(format!(
                "{entries} history entries for {epoch} completed epochs"
            )));
        }
        let history = (0..entries)
            .map(|_| {
                Ok(LossBreakdown {
                    supervised: r.f64()?,
                    unsupervised: r.f64()?,
                    weight: r.f64()?,
                    total: r.f64()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let count = r.u32()? as usize;
        let per_set = NetworkParams::expected_shapes(&arch).len();
        if count != 3 * per_set {
            return Err(Error::CorruptCheckpoint(format!(
                "expected {} tensors, header says {count}",
                3 * per_set
            )));
        }
        let mut tensors = Vec::with_capacity(count);
        for i in 0..count {
            let ndim = r.u32()? as usize;
            let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = r.u64()? as usize;
            if dims.iter().product::<usize>() != len {
                return Err(Error::CorruptCheckpoint(format!(
                    "tensor {i}: dims {dims:?} disagree with length {len}"
                )));
            }
            let raw = r.take(len.checked_mul(8).ok_or_else(|| {
                Error::CorruptCheckpoint(format!("tensor {i}: length {len} overflows"))
            })?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push(
                Tensor::new(dims, data).map_err(|e| Error::CorruptCheckpoint(format!("tensor {i}: {e}")))?,
            );
        }
        if r.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }

        let v = tensors.split_off(2 * per_set);
        let m = tensors.split_off(per_set);
        let params = NetworkParams::from_tensors(arch, tensors)?;
        for (i, (p, (m, v))) in params.tensors().iter().zip(m.iter().zip(&v)).enumerate() {
            if m.shape() != p.shape() || v.shape() != p.shape() {
                return Err(Error::CorruptCheckpoint(format!(
                    "optimizer moments of tensor {i} do not match its shape"
                )));
            }
        }
        Ok(Checkpoint {
            params,
            optimizer: AdamState { config, step, m, v },
            epoch,
            history,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::CorruptCheckpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
