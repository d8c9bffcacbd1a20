//! On-disk formats.
//!
//! * Datastore files (`M2RD`): a fixed little-endian header followed by the
//!   key block and a kind-specific value block. See [`datastore`].
//! * Export streams (`M2RX`): framed records carrying activations of an
//!   external model, one utterance per record. See [`export`].

pub mod datastore;
pub mod export;

pub use datastore::{
    decode_datastore, encode_sentence_store, encode_token_store, load_datastore, load_sentence_store, load_token_store,
    save_sentence_store, save_token_store, Datastore, DatastoreKind,
};
pub use export::{
    export_corpus, export_record, import_exports, read_exports, ExportRecord, ExportWriter, ImportedCorpus,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StorageError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("file truncated: {len} bytes is shorter than the {needed}-byte header")]
    Truncated { len: usize, needed: usize },

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("expected a {expected} datastore, found {found}")]
    KindMismatch {
        expected: DatastoreKind,
        found: DatastoreKind,
    },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("record `{second}` disagrees with record `{first}` on {field}")]
    InconsistentRecords {
        first: String,
        second: String,
        field: &'static str,
    },

    #[error("invalid record `{id}`: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl StorageError {
    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        StorageError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}

/// Bounds-checked little-endian reader over a byte slice.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], StorageError> {
        if n > self.remaining() {
            return Err(StorageError::SizeMismatch(format!(
                "{what} needs {n} bytes at offset {}, only {} remain",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32, StorageError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64, StorageError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn u32s(&mut self, n: usize, what: &str) -> Result<Vec<u32>, StorageError> {
        let bytes = self.take(checked_mul(n, 4, what)?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }

    pub(crate) fn u64s(&mut self, n: usize, what: &str) -> Result<Vec<u64>, StorageError> {
        let bytes = self.take(checked_mul(n, 8, what)?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect())
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>, StorageError> {
        let bytes = self.take(checked_mul(n, 4, what)?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }

    pub(crate) fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>, StorageError> {
        let bytes = self.take(checked_mul(n, 8, what)?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect())
    }
}

pub(crate) fn checked_mul(a: usize, b: usize, what: &str) -> Result<usize, StorageError> {
    a.checked_mul(b)
        .ok_or_else(|| StorageError::SizeMismatch(format!("{what}: size overflows")))
}

pub(crate) fn to_usize(v: u64, what: &str) -> Result<usize, StorageError> {
    usize::try_from(v).map_err(|_| StorageError::SizeMismatch(format!("{what}: {v} does not fit in memory")))
}
