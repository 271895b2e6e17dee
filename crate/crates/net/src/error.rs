use std::path::PathBuf;

use exitrack_core::dataset::DatasetError;
use exitrack_core::kv::KvError;
use exitrack_core::ood::OodError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid config `{key}`: {msg}")]
    Config { key: &'static str, msg: String },
    #[error("tracker state is not initialized")]
    Uninitialized,
    #[error("dimension mismatch for {what}: got {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("sample is labeled visible but carries the exit sentinel")]
    InconsistentLabel,
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("training diverged at stage {stage}, epoch {epoch}, step {step}: loss {loss}")]
    Divergence {
        stage: u8,
        epoch: usize,
        step: usize,
        loss: f64,
    },
    #[error("no usable training sequences: {0}")]
    NoData(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ood(#[from] OodError),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}
