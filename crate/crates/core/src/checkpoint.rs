//! Binary checkpoint: header, metadata, vocabulary and named tensors.
//!
//! Layout (little endian):
//! `STARCKPT` · u32 version · u8 bytes-per-real · u64 len + metadata text ·
//! u64 count + (u32 len + bytes) per vocabulary entry · u64 count +
//! (u32 name len, name, u32 rank, u64 dims…) per tensor · tensor data in
//! directory order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::config::{Precision, RunConfig};
use crate::error::{Result, StarError};
use crate::model::{ModelConfig, StarModel, ITEM_TABLE};
use crate::numeric::{Parameter, ParameterStore, Tensor};

pub const MAGIC: &[u8; 8] = b"STARCKPT";
pub const VERSION: u32 = 1;
pub const INIT_EMBEDDING: &str = "item_embedding.init";
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub precision: Precision,
    pub vocabulary: Vec<String>,
    pub theta: f64,
    /// Completed training epochs.
    pub epoch: usize,
    /// Seed and optimizer step; together they fix every later draw.
    pub rng_seed: u64,
    pub rng_step: u64,
    /// Free-form `key = value` extras (e.g. best validation score).
    pub notes: BTreeMap<String, String>,
    /// Sorted by name.
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(config: RunConfig, vocabulary: Vec<String>, theta: f64) -> Self {
        Checkpoint {
            precision: config.precision,
            config,
            vocabulary,
            theta,
            epoch: 0,
            rng_seed: 0,
            rng_step: 0,
            notes: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        match self.tensors.binary_search_by(|(n, _)| n.as_str().cmp(name)) {
            Ok(i) => self.tensors[i].1 = t,
            Err(i) => self.tensors.insert(i, (name.to_string(), t)),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors
            .binary_search_by(|(n, _)| n.as_str().cmp(name))
            .ok()
            .map(|i| &self.tensors[i].1)
    }

    /// Stores model parameters together with their Adam moments.
    pub fn store_model(&mut self, model: &StarModel) {
        for p in model.params.iter() {
            self.insert(&p.name, p.value.clone());
            self.insert(&format!("{ADAM_M}{}", p.name), p.adam_m.clone());
            self.insert(&format!("{ADAM_V}{}", p.name), p.adam_v.clone());
        }
        let step = model.params.iter().next().map_or(0, |p| p.step);
        self.notes.insert("adam_step".into(), step.to_string());
    }

    /// Rebuilds the model stored by [`Checkpoint::store_model`].
    pub fn load_model(&self) -> Result<StarModel> {
        let cfg: ModelConfig = self.config.model_config(self.vocabulary.len());
        let step: u64 = self
            .notes
            .get("adam_step")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| StarError::Checkpoint("no model state in checkpoint".into()))?;
        let mut params = Vec::new();
        for (name, t) in &self.tensors {
            if name.starts_with(ADAM_M) || name.starts_with(ADAM_V) || name == INIT_EMBEDDING {
                continue;
            }
            let moment = |prefix: &str| {
                self.tensor(&format!("{prefix}{name}"))
                    .cloned()
                    .ok_or_else(|| StarError::Checkpoint(format!("missing optimizer state for `{name}`")))
            };
            let mut p = Parameter::new(name.clone(), t.clone());
            p.adam_m = moment(ADAM_M)?;
            p.adam_v = moment(ADAM_V)?;
            p.step = step;
            params.push(p);
        }
        StarModel::from_store(cfg, ParameterStore::new(params)?)
    }

    fn metadata(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.config.entries() {
            s.push_str(&format!("config.{k} = {v}\n"));
        }
        s.push_str(&format!("theta = {}\n", self.theta));
        s.push_str(&format!("epoch = {}\n", self.epoch));
        s.push_str(&format!("rng.seed = {}\n", self.rng_seed));
        s.push_str(&format!("rng.step = {}\n", self.rng_step));
        for (k, v) in &self.notes {
            s.push_str(&format!("note.{k} = {v}\n"));
        }
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(match self.precision {
            Precision::F32 => 4,
            Precision::F64 => 8,
        });
        let meta = self.metadata();
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.vocabulary.len() as u64).to_le_bytes());
        for v in &self.vocabulary {
            out.extend_from_slice(&(v.len() as u32).to_le_bytes());
            out.extend_from_slice(v.as_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for (_, t) in &self.tensors {
            for &v in t.data() {
                match self.precision {
                    Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                    Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(StarError::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(StarError::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let precision = match r.take(1)?[0] {
            4 => Precision::F32,
            8 => Precision::F64,
            w => return Err(StarError::Checkpoint(format!("bad real width {w}"))),
        };
        let meta_len = r.u64()? as usize;
        let meta = r.string(meta_len)?;

        let mut config = RunConfig::default();
        let mut ck = Checkpoint::new(config.clone(), Vec::new(), 0.0);
        for line in meta.lines() {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| StarError::Checkpoint(format!("bad metadata line `{line}`")))?;
            let bad = || StarError::Checkpoint(format!("bad metadata value for `{k}`"));
            if let Some(key) = k.strip_prefix("config.") {
                config.set(key, v).map_err(|e| StarError::Checkpoint(e.to_string()))?;
            } else if let Some(key) = k.strip_prefix("note.") {
                ck.notes.insert(key.to_string(), v.to_string());
            } else {
                match k {
                    "theta" => ck.theta = v.parse().map_err(|_| bad())?,
                    "epoch" => ck.epoch = v.parse().map_err(|_| bad())?,
                    "rng.seed" => ck.rng_seed = v.parse().map_err(|_| bad())?,
                    "rng.step" => ck.rng_step = v.parse().map_err(|_| bad())?,
                    _ => return Err(StarError::Checkpoint(format!("unknown metadata key `{k}`"))),
                }
            }
        }
        ck.config = config;
        ck.precision = precision;

        let n_vocab = r.u64()? as usize;
        for _ in 0..n_vocab {
            let len = r.u32()? as usize;
            ck.vocabulary.push(r.string(len)?);
        }
        let n_tensors = r.u64()? as usize;
        let mut dir = Vec::with_capacity(n_tensors.min(1 << 16));
        for _ in 0..n_tensors {
            let len = r.u32()? as usize;
            let name = r.string(len)?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            dir.push((name, shape));
        }
        for (name, shape) in dir {
            let count: usize = shape.iter().product();
            let data: Vec<f64> = match precision {
                Precision::F32 => r
                    .take(count * 4)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                Precision::F64 => r
                    .take(count * 8)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            };
            ck.tensors.push((name, Tensor::from_vec(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(StarError::Checkpoint("trailing bytes after tensor data".into()));
        }
        if ck.tensors.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(StarError::Checkpoint("tensor directory not sorted by name".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| StarError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| StarError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// The initial item table, if one was stored.
    pub fn init_embedding(&self) -> Option<&Tensor> {
        self.tensor(INIT_EMBEDDING)
    }

    /// The trained item table, if a model was stored.
    pub fn item_table(&self) -> Option<&Tensor> {
        self.tensor(ITEM_TABLE)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| StarError::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| StarError::Checkpoint("invalid utf-8".into()))
    }
}
