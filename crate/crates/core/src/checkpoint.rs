//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "NCAM1"
//! u32                       tensor count
//! per tensor:
//!   u32 + bytes             name (UTF-8)
//!   u8                      dtype tag (0 = f32)
//!   u32 + u64 * rank        shape
//!   payload                 numel * 4 bytes
//! u64 + bytes               JSON metadata (configs, step, rng position, dataset)
//! ```
//!
//! Optimizer moments are stored as tensors named `adam.m.<param>` and
//! `adam.v.<param>`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ncam_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::data::DatasetSpec;
use crate::error::{NcamError, Result};
use crate::model::{ModelConfig, Ncam};
use crate::optim::Adam;
use crate::params::ParamKind;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 5] = b"NCAM1";
const DTYPE_F32: u8 = 0;
const CONTEXT: &str = "checkpoint";

#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub adam: Adam,
    pub step: u64,
    /// Position of the training random stream (seeded by `config.seed`).
    pub rng_word_pos: u128,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Ncam,
    pub train: Option<TrainState>,
    pub dataset: Option<DatasetSpec>,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    kind: ParamKind,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct TrainMeta {
    config: TrainConfig,
    step: u64,
    adam_t: u64,
    rng_word_pos: u128,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    params: Vec<ParamMeta>,
    train: Option<TrainMeta>,
    dataset: Option<DatasetSpec>,
}

fn malformed(offset: usize, msg: impl Into<String>) -> NcamError {
    NcamError::Malformed {
        context: CONTEXT.into(),
        offset: offset as u64,
        msg: msg.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| malformed(self.pos, format!("truncated while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    /// Inference-only checkpoint.
    pub fn new(model: Ncam) -> Self {
        Self {
            model,
            train: None,
            dataset: None,
        }
    }

    pub fn with_training(
        model: Ncam,
        config: TrainConfig,
        adam: Adam,
        step: u64,
        rng_word_pos: u128,
        dataset: Option<DatasetSpec>,
    ) -> Self {
        Self {
            model,
            train: Some(TrainState {
                config,
                adam,
                step,
                rng_word_pos,
            }),
            dataset,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let store = &self.model.store;
        let mut tensors: Vec<(String, &Tensor<f32>)> = store.iter().map(|p| (p.name.clone(), &p.value)).collect();
        if let Some(t) = &self.train {
            for (p, (m, v)) in store.iter().zip(t.adam.m.iter().zip(&t.adam.v)) {
                tensors.push((format!("adam.m.{}", p.name), m));
                tensors.push((format!("adam.v.{}", p.name), v));
            }
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let meta = Meta {
            model: self.model.config.clone(),
            params: store
                .iter()
                .map(|p| ParamMeta {
                    name: p.name.clone(),
                    kind: p.kind,
                    trainable: p.trainable,
                })
                .collect(),
            train: self.train.as_ref().map(|t| TrainMeta {
                config: t.config.clone(),
                step: t.step,
                adam_t: t.adam.t,
                rng_word_pos: t.rng_word_pos,
            }),
            dataset: self.dataset.clone(),
        };
        let json = serde_json::to_vec_pretty(&meta).map_err(|e| NcamError::Config(e.to_string()))?;
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(malformed(0, "missing NCAM1 header"));
        }
        let count = r.u32("tensor count")?;
        let mut tensors: HashMap<String, (usize, Tensor<f32>)> = HashMap::new();
        for _ in 0..count {
            let start = r.pos;
            let len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| malformed(start + 4, "tensor name is not UTF-8"))?
                .to_string();
            let tag_pos = r.pos;
            if r.u8("dtype")? != DTYPE_F32 {
                return Err(malformed(tag_pos, format!("unsupported dtype for {name}")));
            }
            let rank = r.u32("rank")? as usize;
            let shape = (0..rank)
                .map(|_| r.u64("shape").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel
                .and_then(|n| n.checked_mul(4).map(|_| n))
                .ok_or_else(|| malformed(tag_pos, format!("shape {shape:?} of {name} is too large")))?;
            let payload = r.take(numel * 4, "payload")?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| malformed(tag_pos, format!("{name}: {e}")))?;
            if tensors.insert(name.clone(), (start, t)).is_some() {
                return Err(malformed(start, format!("duplicate tensor {name}")));
            }
        }
        let meta_pos = r.pos;
        let len = r.u64("metadata length")? as usize;
        let json = r.take(len, "metadata")?;
        let meta: Meta = serde_json::from_slice(json).map_err(|e| malformed(meta_pos + 8, e.to_string()))?;
        if r.pos != bytes.len() {
            return Err(malformed(r.pos, "trailing bytes after metadata"));
        }

        let mut model = Ncam::new(meta.model)?;
        if model.store.len() != meta.params.len() {
            return Err(malformed(
                meta_pos,
                format!("configuration builds {} parameters, file lists {}", model.store.len(), meta.params.len()),
            ));
        }
        let mut take = |name: &str, like: &[usize]| -> Result<Tensor<f32>> {
            let (pos, t) = tensors
                .remove(name)
                .ok_or_else(|| malformed(meta_pos, format!("missing tensor {name}")))?;
            if t.shape() != like {
                return Err(malformed(
                    pos,
                    format!("tensor {name} has shape {:?}, expected {like:?}", t.shape()),
                ));
            }
            Ok(t)
        };
        for (p, m) in model.store.iter_mut().zip(&meta.params) {
            if p.name != m.name || p.kind != m.kind {
                return Err(malformed(meta_pos, format!("parameter {} does not match {}", m.name, p.name)));
            }
            p.value = take(&m.name, p.value.shape())?;
            p.trainable = m.trainable;
        }
        let train = match meta.train {
            Some(t) => {
                let mut adam = Adam::new(t.config.adam.clone(), &model.store);
                adam.t = t.adam_t;
                for (i, p) in model.store.iter().enumerate() {
                    adam.m[i] = take(&format!("adam.m.{}", p.name), p.value.shape())?;
                    adam.v[i] = take(&format!("adam.v.{}", p.name), p.value.shape())?;
                }
                Some(TrainState {
                    config: t.config,
                    adam,
                    step: t.step,
                    rng_word_pos: t.rng_word_pos,
                })
            }
            None => None,
        };
        if let Some((name, (pos, _))) = tensors.into_iter().min_by_key(|(_, (p, _))| *p) {
            return Err(malformed(pos, format!("unexpected tensor {name}")));
        }
        Ok(Self {
            model,
            train,
            dataset: meta.dataset,
        })
    }

    /// Writes atomically through a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|e| NcamError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| NcamError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| NcamError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
