//! Versioned checkpoint container.
//!
//! ```text
//! magic    8 bytes  "NNSPCKPT"
//! version  u32 LE
//! count    u32 LE   number of records
//! records  count × (u64 LE byte length, NNSPK1 matrix)
//! ```
//!
//! The first record (`kind=checkpoint`) carries the step and both configs
//! as TOML; one `kind=param` record per parameter tensor follows in store
//! order (float64, so values round-trip bitwise); the last record
//! (`kind=history`) is the loss history, one row per step.

use std::fs;
use std::path::Path;

use nnspeech_core::datamodel::{decode_matrix, encode_matrix, Matrix, MatrixData, Metadata};
use nnspeech_core::objective::LossBreakdown;
use nnspeech_core::params::{ParamEntry, ParamGroup, ParamStore};
use nnspeech_core::tensor::Tensor;
use nnspeech_core::{Error as CoreError, Model, ModelConfig, StepRecord, TrainConfig, Trainer};

use crate::error::{io, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NNSPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Column order of the history record.
pub const HISTORY_COLUMNS: [&str; 12] =
    ["step", "stage", "mel", "spk", "kl", "duration", "pitch", "energy", "total", "alpha", "beta", "gamma"];

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    /// Completed training steps.
    pub step: u64,
    pub params: ParamStore,
    pub history: Vec<StepRecord>,
    /// Corpus speaker id of each speaker-table row.
    pub speakers: Vec<u32>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Core(CoreError::CorruptHeader(msg.into()))
}

fn to_toml<T: serde::Serialize>(v: &T) -> Result<String> {
    toml::to_string(v).map_err(|e| Error::Config(e.to_string()))
}

fn history_row(r: &StepRecord) -> [f64; 12] {
    let l = &r.loss;
    [
        r.step as f64,
        f64::from(r.stage),
        l.mel,
        l.spk,
        l.kl,
        l.duration,
        l.pitch,
        l.energy,
        l.total,
        l.alpha,
        l.beta,
        l.gamma,
    ]
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer, speakers: &[u32]) -> Self {
        Self {
            model_config: trainer.model.config.clone(),
            train_config: trainer.config.clone(),
            step: trainer.step_count(),
            params: trainer.model.params.clone(),
            history: trainer.history.clone(),
            speakers: speakers.to_vec(),
        }
    }

    pub fn model(&self) -> Result<Model> {
        Ok(Model::from_params(self.model_config.clone(), self.params.clone())?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let speakers: Vec<String> = self.speakers.iter().map(u32::to_string).collect();
        let mut records = vec![Matrix {
            dims: vec![1],
            data: MatrixData::F64(vec![self.step as f64]),
            meta: Metadata::default()
                .with("kind", "checkpoint")
                .with("step", self.step)
                .with("model_config", to_toml(&self.model_config)?)
                .with("train_config", to_toml(&self.train_config)?)
                .with("speakers", speakers.join(",")),
        }];
        for e in self.params.entries() {
            records.push(Matrix {
                dims: vec![e.value.rows, e.value.cols],
                data: MatrixData::F64(e.value.data.clone()),
                meta: Metadata::default().with("kind", "param").with("name", &e.name).with("group", e.group.tag()),
            });
        }
        records.push(Matrix {
            dims: vec![self.history.len(), HISTORY_COLUMNS.len()],
            data: MatrixData::F64(self.history.iter().flat_map(history_row).collect()),
            meta: Metadata::default().with("kind", "history").with("columns", HISTORY_COLUMNS.join(",")),
        });

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for r in &records {
            let bytes = encode_matrix(r);
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&bytes);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(CoreError::VersionMismatch { expected: CHECKPOINT_VERSION, found: version }.into());
        }
        let count = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        if count < 2 {
            return Err(corrupt("checkpoint needs a header and a history record"));
        }
        let mut pos = 16;
        // Every record carries at least its 8-byte length.
        let mut records = Vec::with_capacity(count.min((bytes.len() - 16) / 8));
        for i in 0..count {
            let len = bytes
                .get(pos..pos + 8)
                .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize)
                .ok_or_else(|| corrupt(format!("truncated before record {i}")))?;
            pos += 8;
            let body =
                bytes.get(pos..pos.saturating_add(len)).ok_or_else(|| corrupt(format!("record {i} is truncated")))?;
            records.push(decode_matrix(body)?);
            pos += len;
        }
        if pos != bytes.len() {
            return Err(corrupt("trailing bytes after the last record"));
        }

        let header = &records[0];
        if header.kind() != Some("checkpoint") {
            return Err(corrupt("first record is not a checkpoint header"));
        }
        let meta = |k: &str| header.meta.get(k).ok_or_else(|| corrupt(format!("header lacks {k}")));
        let step: u64 = meta("step")?.parse().map_err(|_| corrupt("bad step"))?;
        let model_config: ModelConfig = toml::from_str(meta("model_config")?).map_err(|e| corrupt(e.to_string()))?;
        let train_config: TrainConfig = toml::from_str(meta("train_config")?).map_err(|e| corrupt(e.to_string()))?;
        let speakers = meta("speakers")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| corrupt("bad speaker id")))
            .collect::<Result<Vec<u32>>>()?;

        let mut params = ParamStore::new();
        for r in &records[1..count - 1] {
            if r.kind() != Some("param") {
                return Err(corrupt("expected a param record"));
            }
            let name = r.meta.get("name").ok_or_else(|| corrupt("param without name"))?;
            let group = r
                .meta
                .get("group")
                .and_then(|g| g.parse().ok())
                .and_then(ParamGroup::from_tag)
                .ok_or_else(|| corrupt(format!("param {name} has no valid group")))?;
            let (rows, cols) = match r.dims[..] {
                [a, b] => (a, b),
                _ => return Err(corrupt(format!("param {name} is not rank 2"))),
            };
            let MatrixData::F64(data) = &r.data else {
                return Err(corrupt(format!("param {name} is not float64")));
            };
            params.push(ParamEntry { name: name.into(), group, value: Tensor::from_vec(rows, cols, data.clone()) });
        }

        let hist = &records[count - 1];
        if hist.kind() != Some("history") || hist.dims.len() != 2 || hist.dims[1] != HISTORY_COLUMNS.len() {
            return Err(corrupt("last record is not a loss history"));
        }
        let MatrixData::F64(values) = &hist.data else {
            return Err(corrupt("history is not float64"));
        };
        let history = values
            .chunks_exact(HISTORY_COLUMNS.len())
            .map(|c| StepRecord {
                step: c[0] as u64,
                stage: c[1] as u8,
                loss: LossBreakdown {
                    mel: c[2],
                    spk: c[3],
                    kl: c[4],
                    duration: c[5],
                    pitch: c[6],
                    energy: c[7],
                    total: c[8],
                    alpha: c[9],
                    beta: c[10],
                    gamma: c[11],
                },
            })
            .collect();
        Ok(Self { model_config, train_config, step, params, history, speakers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io(path))?;
        Self::from_bytes(&bytes)
    }

    /// Loads a checkpoint and rejects it unless it was trained with `expected`.
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if &ckpt.model_config != expected {
            return Err(CoreError::ConfigMismatch(format!(
                "{} was written for a different model config",
                path.display()
            ))
            .into());
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_other_versions_and_garbage() {
        let cfg = ModelConfig {
            d_x: 8,
            d_c: 8,
            d_z: 4,
            d_s: 8,
            mlp_hidden: 8,
            d_model: 8,
            d_ff: 8,
            conv_channels: 8,
            variance_hidden: 8,
            ..Default::default()
        };
        let model = Model::new(cfg.clone(), 1).unwrap();
        let ckpt = Checkpoint {
            model_config: cfg,
            train_config: TrainConfig::default(),
            step: 0,
            params: model.params,
            history: Vec::new(),
            speakers: vec![0, 1],
        };
        let mut bytes = ckpt.to_bytes().unwrap();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ckpt);
        bytes[8] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Core(CoreError::VersionMismatch { expected: 1, found: 2 }))
        ));
        bytes[8] = 1;
        let n = bytes.len();
        assert!(Checkpoint::from_bytes(&bytes[..n - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"hello world, not a checkpoint").is_err());
    }
}
