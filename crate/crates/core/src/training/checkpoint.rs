//! Binary checkpoints.
//!
//! Layout (little-endian): magic `VCPCFG1`, u32 version, u32 record count,
//! then per record a u32 name length, the UTF-8 name, u32 rank, u32 dims and
//! f32 values. Adam moments are records named `adam.m/<param>` and
//! `adam.v/<param>`. A u32 length and a JSON metadata object follow the
//! records.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 7] = b"VCPCFG1";
pub const VERSION: u32 = 1;
const MOMENT_M: &str = "adam.m/";
const MOMENT_V: &str = "adam.v/";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ParamStore,
    pub adam: AdamState,
    pub epoch: usize,
    /// Validation criterion of every logged epoch up to `epoch`.
    pub history: Vec<f64>,
    pub train: TrainConfig,
    /// Token list of the vocabulary, id order.
    pub vocab: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    history: Vec<f64>,
    adam_steps: u64,
    vocab: Vec<String>,
}

fn put_u32(out: &mut Vec<u8>, x: usize) {
    out.extend_from_slice(&(x as u32).to_le_bytes());
}

fn put_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len());
    for &d in shape {
        put_u32(out, d);
    }
    for &x in data {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, what: &str) -> Error {
        Error::Checkpoint(format!("{} at byte {}", what, self.pos))
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(&format!("truncated {}", what)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }
}

impl Checkpoint {
    pub fn to_model(&self) -> Model {
        Model { config: self.model, params: self.params.clone() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION as usize);
        let count = self.params.len() + self.adam.m.len() + self.adam.v.len();
        put_u32(&mut out, count);
        for (name, p) in self.params.iter() {
            put_record(&mut out, name, &p.shape, &p.data);
        }
        for (prefix, moments) in [(MOMENT_M, &self.adam.m), (MOMENT_V, &self.adam.v)] {
            for (name, values) in moments {
                let shape = self.params.get(name).map(|p| p.shape.clone()).unwrap_or_else(|| vec![values.len()]);
                put_record(&mut out, &format!("{}{}", prefix, name), &shape, values);
            }
        }
        let meta = Metadata {
            model: self.model,
            train: self.train.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
            adam_steps: self.adam.t,
            vocab: self.vocab.clone(),
        };
        let json = serde_json::to_vec(&meta).expect("metadata serializes");
        put_u32(&mut out, json.len());
        out.extend_from_slice(&json);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(Error::Checkpoint("bad magic at byte 0".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported version {}", version)));
        }
        let count = r.u32("record count")?;
        let mut params = ParamStore::new();
        let mut adam = AdamState::new();
        for _ in 0..count {
            let len = r.u32("name length")?;
            let name = std::str::from_utf8(r.take(len, "name")?).map_err(|_| r.fail("non UTF-8 name"))?.to_string();
            let rank = r.u32("rank")?;
            let shape = (0..rank).map(|_| r.u32("dimension")).collect::<Result<Vec<usize>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| r.fail("oversized record"))?, "values")?;
            let data: Vec<f64> =
                raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
            if let Some(p) = name.strip_prefix(MOMENT_M) {
                adam.m.insert(p.to_string(), data);
            } else if let Some(p) = name.strip_prefix(MOMENT_V) {
                adam.v.insert(p.to_string(), data);
            } else {
                params.insert(&name, &shape, data);
            }
        }
        let len = r.u32("metadata length")?;
        let json = r.take(len, "metadata")?;
        let meta: Metadata =
            serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("metadata: {}", e)))?;
        if r.pos != bytes.len() {
            return Err(r.fail("trailing bytes"));
        }
        adam.t = meta.adam_steps;
        Ok(Checkpoint {
            model: meta.model,
            params,
            adam,
            epoch: meta.epoch,
            history: meta.history,
            train: meta.train,
            vocab: meta.vocab,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}
