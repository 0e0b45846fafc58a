//! Binary checkpoints.
//!
//! ```text
//! "QDIFFCK1" | header length (u64 LE) | JSON header | f32 LE payload
//! ```
//!
//! The header carries the network configuration, format version, seed,
//! training stage history and the parameter table. Parameters appear in
//! lexicographic name order in both the table and the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ContinuousNet, MaskedNet, NetConfig, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"QDIFFCK1";
const MAX_HEADER: u64 = 1 << 26;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    pub r1: usize,
    pub r2: usize,
    pub iterations: usize,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: NetConfig,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Masked(MaskedNet),
    Continuous(ContinuousNet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetConfig,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub params: ParamStore<f32>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn from_network(net: &Network, seed: u64, stages: Vec<StageRecord>) -> Self {
        let (config, params) = match net {
            Network::Masked(m) => (NetConfig::Masked(m.config.clone()), m.params.clone()),
            Network::Continuous(c) => (NetConfig::Continuous(c.config.clone()), c.params.clone()),
        };
        Self {
            config,
            seed,
            stages,
            params,
        }
    }

    pub fn network(&self) -> Result<Network> {
        Ok(match &self.config {
            NetConfig::Masked(c) => {
                Network::Masked(MaskedNet::from_params(c.clone(), self.params.clone())?)
            }
            NetConfig::Continuous(c) => {
                Network::Continuous(ContinuousNet::from_params(c.clone(), self.params.clone())?)
            }
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            seed: self.seed,
            stages: self.stages.clone(),
            params: self
                .params
                .iter()
                .map(|(name, t)| ParamEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 4 * self.params.count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("eight bytes"));
        if len > MAX_HEADER || len > (bytes.len() - 16) as u64 {
            return Err(bad(format!("header length {len} exceeds file")));
        }
        let body = &bytes[16..];
        let (json, payload) = body.split_at(len as usize);
        let header: CheckpointHeader = serde_json::from_slice(json)?;
        if header.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {}", header.version)));
        }
        header.config.validate()?;
        if !header.params.windows(2).all(|w| w[0].name < w[1].name) {
            return Err(bad("parameter names not strictly sorted"));
        }
        let mut expected: usize = 0;
        for p in &header.params {
            let n = p
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| bad(format!("shape of {} overflows", p.name)))?;
            expected = expected
                .checked_add(n)
                .ok_or_else(|| bad("parameter total overflows"))?;
        }
        if expected.checked_mul(4) != Some(payload.len()) {
            return Err(bad(format!(
                "payload has {} bytes, table needs {expected} floats",
                payload.len()
            )));
        }
        // bound crafted headers before building layouts
        let (dims, layers) = match &header.config {
            NetConfig::Masked(c) => (
                vec![c.n_l, c.n_c, c.rounds, c.n_h, c.d_m, c.d_f, c.steps],
                c.n_dl.saturating_add(c.n_el).saturating_add(c.rounds),
            ),
            NetConfig::Continuous(c) => (vec![c.n_l, c.n_s, c.d_t, c.d_f, c.steps], 0),
        };
        if layers > header.params.len() || dims.iter().any(|&d| d > expected.max(1 << 16)) {
            return Err(bad(
                "network configuration does not fit its parameter table",
            ));
        }
        let mut floats = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")));
        let mut params = ParamStore::new();
        for p in header.params {
            let n = p.shape.iter().product();
            let data: Vec<f32> = floats.by_ref().take(n).collect();
            params.insert(p.name, Tensor::new(&p.shape, data)?);
        }
        let ckpt = Self {
            config: header.config,
            seed: header.seed,
            stages: header.stages,
            params,
        };
        ckpt.network()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
