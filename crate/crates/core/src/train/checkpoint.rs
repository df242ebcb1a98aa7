//! Binary checkpoint container.
//!
//! ```text
//! "MXCKPT01"                 8 bytes
//! header length              u32 little-endian
//! header                     UTF-8 JSON (configs, vocab, epoch, val_loss, tensor table)
//! tensor data                f32 little-endian, row-major, in tensor-table order
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::classify::{
    Architecture, ClassifierModel, ClassifyError, Head, Prediction, Predictor, TextClassifier,
};
use crate::corpus::Sample;
use crate::encoder::{EncoderConfig, EncoderParams, EncoderState, Tensor};
use crate::tokenizer::Vocab;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MXCKPT01";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic bytes)")]
    Magic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Trained parameters with everything needed to reuse them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub classifier: TextClassifier<f32>,
    /// 1-based epoch these parameters come from.
    pub epoch: usize,
    pub val_loss: f64,
    pub train_config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    encoder: EncoderConfig,
    train: TrainConfig,
    architecture: Architecture,
    epoch: usize,
    val_loss: f64,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let model = &self.classifier.model;
        let named = model.named();
        let header = Header {
            encoder: model.encoder.config().clone(),
            train: self.train_config.clone(),
            architecture: model.architecture,
            epoch: self.epoch,
            val_loss: self.val_loss,
            vocab: self.classifier.vocab.tokens().to_vec(),
            tensors: named
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    rows: t.rows,
                    cols: t.cols,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + 4 * named.iter().map(|t| t.1.len()).sum::<usize>());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in named {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::Magic);
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes
            .get(12..12 + header_len)
            .ok_or_else(|| CheckpointError::Corrupt("truncated header".into()))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
        let corrupt = |msg: String| CheckpointError::Corrupt(msg);

        let mut params = EncoderParams::<f32>::zeros(&header.encoder);
        let mut head = Head::<f32>::zeros(header.encoder.hidden);
        let mut cursor = 12 + header_len;
        let mut filled = 0usize;
        {
            let mut slots: Vec<(String, &mut Tensor<f32>)> = params.named_mut();
            slots.extend(head.named_mut());
            if slots.len() != header.tensors.len() {
                return Err(corrupt(format!(
                    "expected {} tensors, header lists {}",
                    slots.len(),
                    header.tensors.len()
                )));
            }
            for entry in &header.tensors {
                let (_, slot) = slots
                    .iter_mut()
                    .find(|(name, _)| *name == entry.name)
                    .ok_or_else(|| corrupt(format!("unexpected tensor {}", entry.name)))?;
                if (slot.rows, slot.cols) != (entry.rows, entry.cols) {
                    return Err(corrupt(format!(
                        "{} is {}x{}, expected {}x{}",
                        entry.name, entry.rows, entry.cols, slot.rows, slot.cols
                    )));
                }
                let n = entry.rows * entry.cols;
                let raw = bytes
                    .get(cursor..cursor + 4 * n)
                    .ok_or_else(|| corrupt(format!("truncated data for {}", entry.name)))?;
                for (v, chunk) in slot.data.iter_mut().zip(raw.chunks_exact(4)) {
                    *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
                }
                cursor += 4 * n;
                filled += 1;
            }
        }
        if filled != header.tensors.len() || cursor != bytes.len() {
            return Err(corrupt("trailing bytes after tensor data".into()));
        }
        let vocab = Vocab::from_tokens(header.vocab).map_err(|e| corrupt(format!("vocab: {e}")))?;
        let encoder = EncoderState::from_params(header.encoder, params)
            .map_err(|e| corrupt(e.to_string()))?;
        Ok(Checkpoint {
            classifier: TextClassifier {
                model: ClassifierModel {
                    encoder,
                    head,
                    architecture: header.architecture,
                },
                vocab,
            },
            epoch: header.epoch,
            val_loss: header.val_loss,
            train_config: header.train,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut file = std::fs::File::create(path).map_err(io)?;
        file.write_all(&self.to_bytes()).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

impl Predictor for Checkpoint {
    fn predict(&self, sample: &Sample) -> Result<Prediction, ClassifyError> {
        self.classifier.predict(sample)
    }
}
