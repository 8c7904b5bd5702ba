//! Canonical data model and ingestion of manifests, embeddings, scores,
//! answers and ratings.

mod embedding;
mod ingest;
mod types;
mod validate;

use std::path::{Path, PathBuf};

pub use embedding::{load_embeddings, EmbeddingMatrix, EmbeddingSet, EMBEDDING_MAGIC};
pub use ingest::{ingest_manifest, parse_lines, parse_manifest, read_lines, to_lines, LineRecord};
pub use types::*;
pub use validate::{validate_run, Finding, RunInputs, Severity, ValidationReport};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate key for image {0}")]
    DuplicateKey(String),
    #[error("unknown value {value:?} for field {field}")]
    UnknownEnum { field: String, value: String },
    #[error("embedding reference of image {0} does not resolve")]
    DanglingRef(String),
    #[error("malformed record on line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("embedding header promises {expected} values, body holds {found}")]
    HeaderMismatch { expected: usize, found: usize },
    #[error("non-finite embedding value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("embedding file does not start with the expected magic bytes")]
    BadMagic,
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io { path: path.to_path_buf(), source }
    }

    /// True for errors caused by a missing or unreadable file.
    pub fn is_missing_input(&self) -> bool {
        matches!(self, CorpusError::Io { .. })
    }
}
