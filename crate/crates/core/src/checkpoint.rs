//! Binary checkpoints.
//!
//! Layout (little-endian): `RPND`, format version `u32`, parameter seed
//! `u64`, metadata length `u64` and UTF-8 JSON metadata (run config, epoch,
//! validation metrics), the parameter entry block, then a `u8` flag
//! followed, when set, by the optimizer step `u64` and its two moment
//! entry blocks.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rpred_numeric::{read_u32, read_u64, ParameterStore, PARAM_MAGIC};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::training::OptimizerState;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub config: RunConfig,
    /// Completed training epochs.
    pub epoch: usize,
    /// Validation metrics at save time, keyed as in the evaluation JSON.
    pub metrics: BTreeMap<String, f64>,
    pub params: ParameterStore,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: RunConfig,
    epoch: usize,
    metrics: BTreeMap<String, f64>,
}

impl ModelCheckpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(PARAM_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&self.params.rng_seed().to_le_bytes())?;
        let meta = Meta { config: self.config.clone(), epoch: self.epoch, metrics: self.metrics.clone() };
        let json = serde_json::to_vec(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        self.params.write_entries(w)?;
        match &self.optimizer {
            None => w.write_all(&[0])?,
            Some(opt) => {
                w.write_all(&[1])?;
                w.write_all(&opt.step.to_le_bytes())?;
                opt.first.write_entries(w)?;
                opt.second.write_entries(w)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::Checkpoint("truncated header, expected `RPND` magic".into()))?;
        if &magic != PARAM_MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {:?}, expected `RPND`",
                String::from_utf8_lossy(&magic)
            )));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion { found: version, expected: CHECKPOINT_VERSION });
        }
        let seed = read_u64(r)?;
        let len = read_u64(r)? as usize;
        if len > 1 << 26 {
            return Err(Error::Checkpoint(format!("metadata length {len}")));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let meta: Meta = serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let params = ParameterStore::read_entries(r, seed)?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let optimizer = match flag[0] {
            0 => None,
            1 => {
                let step = read_u64(r)?;
                let first = ParameterStore::read_entries(r, seed)?;
                let second = ParameterStore::read_entries(r, seed)?;
                Some(OptimizerState { step, first, second })
            }
            other => return Err(Error::Checkpoint(format!("optimizer flag {other}"))),
        };
        Ok(Self { config: meta.config, epoch: meta.epoch, metrics: meta.metrics, params, optimizer })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}
