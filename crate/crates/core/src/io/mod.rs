//! File formats, CSV inputs, run manifests and the checkpoint sweep.

mod index;
mod matrix;
mod sweep;
mod tables;

pub use index::{
    decode_index, encode_index, load_corpus_or_index, read_index, write_index, INDEX_MAGIC,
};
pub use matrix::{
    decode_matrix, encode_matrix, read_feature_matrix, read_matrix, write_matrix, write_matrix_as,
    Dtype, MATRIX_HEADER_LEN, MATRIX_MAGIC,
};
pub use sweep::{
    configured_threads, file_sha256, run_sweep, summary_lines, write_report, AblationResult,
    AblationSpec, EntryError, EntryReport, ManifestEntry, MetricsReport, RunManifest, THREADS_ENV,
};
pub use tables::{read_pairs_csv, read_problems_csv, read_trace_csv};

use thiserror::Error;

use crate::infini_gram::NgramError;
use crate::spectral::SpectralError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IoError {
    #[error("bad magic bytes (expected {expected:?})")]
    BadMagic { expected: &'static str },
    #[error("unsupported dtype code {0}")]
    BadDtype(u64),
    #[error("size mismatch: header implies {expected} payload bytes, found {actual}")]
    SizeMismatch { expected: u64, actual: u64 },
    #[error("malformed index: {0}")]
    BadIndex(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("csv line {line}: {msg}")]
    Csv { line: u64, msg: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Ngram(#[from] NgramError),
}

impl IoError {
    /// Stable machine-readable code for each error class.
    pub fn code(&self) -> &'static str {
        match self {
            IoError::BadMagic { .. } => "bad_magic",
            IoError::BadDtype(_) => "bad_dtype",
            IoError::SizeMismatch { .. } => "size_mismatch",
            IoError::BadIndex(_) => "bad_index",
            IoError::Io { .. } => "io",
            IoError::Csv { .. } => "csv",
            IoError::Manifest(_) => "manifest",
            IoError::Spectral(_) => "spectral",
            IoError::Ngram(_) => "ngram",
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        IoError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, IoError>;
