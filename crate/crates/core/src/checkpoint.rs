//! Versioned binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//! magic `JDCKPT01`, format version `u32`, config JSON (`u32` length +
//! bytes), stage `u8`, step `u64`, RNG seed `u64`, parameter count `u32`,
//! then per parameter: name (`u32` length + UTF-8), rank `u32`, dims
//! (`u64` each), Adam step count `u64`, values, first and second moments
//! (`f64` each).

use std::io::{Read, Write};
use std::path::Path;

use jointdrive_numerics::{Param, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{Model, ModelConfig};
use crate::train::{Stage, TrainConfig};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"JDCKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ConfigEcho {
    model: ModelConfig,
    train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub stage: Stage,
    /// Optimizer steps completed within `stage`.
    pub step: u64,
    /// Seed of the per-step random streams; with `stage` and `step` it fixes
    /// every later draw.
    pub rng_seed: u64,
    pub params: Vec<Param>,
}

fn err(msg: impl Into<String>) -> CoreError {
    CoreError::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() < n {
            return Err(err("unexpected end of checkpoint"));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| err("tensor too large"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| err("name is not UTF-8"))
    }
}

impl Checkpoint {
    pub fn capture(model: &ModelConfig, train: &TrainConfig, stage: Stage, step: u64, store: &ParamStore) -> Self {
        Checkpoint {
            model: model.clone(),
            train: train.clone(),
            stage,
            step,
            rng_seed: train.seed,
            params: store.iter().map(|(_, p)| p.clone()).collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(&ConfigEcho {
            model: self.model.clone(),
            train: self.train.clone(),
        })?;
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.push(self.stage.number());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.rng_seed.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&p.step_count.to_le_bytes());
            for v in p.value.data().iter().chain(&p.adam_m).chain(&p.adam_v) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        if r.take(8)? != MAGIC {
            return Err(err("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(err(format!(
                "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let n = r.u32()? as usize;
        let echo: ConfigEcho = serde_json::from_slice(r.take(n)?)?;
        let stage = Stage::from_number(r.u8()?)?;
        let step = r.u64()?;
        let rng_seed = r.u64()?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| Ok(r.u64()? as usize)).collect::<Result<Vec<_>>>()?;
            let step_count = r.u64()?;
            let len: usize = shape.iter().product();
            let value = Tensor::new(shape, r.f64s(len)?)?;
            let adam_m = r.f64s(len)?;
            let adam_v = r.f64s(len)?;
            params.push(Param {
                name,
                value,
                adam_m,
                adam_v,
                step_count,
            });
        }
        if !r.buf.is_empty() {
            return Err(err("trailing bytes after parameters"));
        }
        Ok(Checkpoint {
            model: echo.model,
            train: echo.train,
            stage,
            step,
            rng_seed,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Copies the stored tensors into `store`, matching by name. Every
    /// parameter of the store must be present with the same shape.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(err(format!(
                "checkpoint holds {} parameters but the model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for p in &self.params {
            let id = store
                .id(&p.name)
                .map_err(|_| err(format!("parameter {} is not part of the model", p.name)))?;
            let dst = store.get_mut(id);
            if dst.value.shape() != p.value.shape() {
                return Err(err(format!(
                    "parameter {}: checkpoint shape {:?} vs model shape {:?}",
                    p.name,
                    p.value.shape(),
                    dst.value.shape()
                )));
            }
            *dst = p.clone();
        }
        Ok(())
    }

    /// Rebuilds the model from the echoed configuration and loads the tensors.
    pub fn restore(&self) -> Result<(ParamStore, Model)> {
        self.restore_with(self.model.clone())
    }

    /// Like [`Checkpoint::restore`] but for an externally supplied model
    /// configuration, which must match the stored shapes.
    pub fn restore_with(&self, config: ModelConfig) -> Result<(ParamStore, Model)> {
        let (mut store, model) = Model::build(config, self.rng_seed)?;
        self.load_into(&mut store)?;
        Ok((store, model))
    }
}
