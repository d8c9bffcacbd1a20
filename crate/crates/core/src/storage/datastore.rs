//! Datastore file layout, all integers and floats little-endian:
//!
//! ```text
//! offset  size            field
//! 0       4               magic "M2RD"
//! 4       4   u32         version (1)
//! 8       4   u32         kind (0 = sentence, 1 = token)
//! 12      4   u32         dim
//! 16      8   u64         count
//! 24      count*dim*4     keys, f32, row-major
//! -- token value block --
//!         4   u32         vocab_size
//!         count*4         token ids, u32
//! -- sentence value block --
//!         (count+1)*8     transcript token offsets, u64
//!         T*4             transcript tokens, u32 (T = last offset)
//!         (count+1)*8     display text offsets, u64
//!         X               display text, UTF-8 (X = last offset)
//!         count*8         durations in seconds, f64
//!         (count+1)*8     utterance id offsets, u64
//!         I               utterance ids, UTF-8 (I = last offset)
//! ```
//!
//! The file ends at the last byte of the value block. Offset tables start
//! at zero and never decrease.

use std::fmt;
use std::path::Path;

use super::{checked_mul, to_usize, Cursor, StorageError};
use crate::corpus::Transcript;
use crate::index::FlatIndex;
use crate::knn::TokenDatastore;
use crate::sentence::{SentenceDatastore, SentenceEntry};

pub const MAGIC: [u8; 4] = *b"M2RD";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatastoreKind {
    Sentence,
    Token,
}

impl DatastoreKind {
    fn code(self) -> u32 {
        match self {
            DatastoreKind::Sentence => 0,
            DatastoreKind::Token => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self, StorageError> {
        match code {
            0 => Ok(DatastoreKind::Sentence),
            1 => Ok(DatastoreKind::Token),
            other => Err(StorageError::Corrupt(format!("unknown datastore kind {other}"))),
        }
    }
}

impl fmt::Display for DatastoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatastoreKind::Sentence => "sentence",
            DatastoreKind::Token => "token",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Datastore {
    Sentence(SentenceDatastore),
    Token(TokenDatastore),
}

impl Datastore {
    pub fn kind(&self) -> DatastoreKind {
        match self {
            Datastore::Sentence(_) => DatastoreKind::Sentence,
            Datastore::Token(_) => DatastoreKind::Token,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Datastore::Sentence(s) => s.len(),
            Datastore::Token(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            Datastore::Sentence(s) => s.dim(),
            Datastore::Token(t) => t.dim(),
        }
    }
}

fn header(out: &mut Vec<u8>, kind: DatastoreKind, index: &FlatIndex) {
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&kind.code().to_le_bytes());
    out.extend_from_slice(&(index.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    for &x in index.raw() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_token_store(store: &TokenDatastore) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + store.len() * (store.dim() * 4 + 4) + 4);
    header(&mut out, DatastoreKind::Token, store.index());
    out.extend_from_slice(&(store.vocab_size() as u32).to_le_bytes());
    for &v in store.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn offsets<I: Iterator<Item = usize>>(out: &mut Vec<u8>, lens: I) {
    let mut acc = 0u64;
    out.extend_from_slice(&acc.to_le_bytes());
    for len in lens {
        acc += len as u64;
        out.extend_from_slice(&acc.to_le_bytes());
    }
}

pub fn encode_sentence_store(store: &SentenceDatastore) -> Vec<u8> {
    let entries = store.entries();
    let mut out = Vec::new();
    header(&mut out, DatastoreKind::Sentence, store.index());
    offsets(&mut out, entries.iter().map(|e| e.transcript.tokens.len()));
    for e in entries {
        for &t in &e.transcript.tokens {
            out.extend_from_slice(&t.to_le_bytes());
        }
    }
    offsets(&mut out, entries.iter().map(|e| e.transcript.text.len()));
    for e in entries {
        out.extend_from_slice(e.transcript.text.as_bytes());
    }
    for e in entries {
        out.extend_from_slice(&e.duration_s.to_le_bytes());
    }
    offsets(&mut out, entries.iter().map(|e| e.utterance_id.len()));
    for e in entries {
        out.extend_from_slice(e.utterance_id.as_bytes());
    }
    out
}

fn read_offsets(cur: &mut Cursor<'_>, count: usize, what: &str) -> Result<Vec<usize>, StorageError> {
    let raw = cur.u64s(count + 1, what)?;
    if raw[0] != 0 {
        return Err(StorageError::Corrupt(format!("{what} must start at 0")));
    }
    if raw.windows(2).any(|w| w[1] < w[0]) {
        return Err(StorageError::Corrupt(format!("{what} decrease")));
    }
    raw.into_iter().map(|o| to_usize(o, what)).collect()
}

fn read_strings(cur: &mut Cursor<'_>, offsets: &[usize], what: &str) -> Result<Vec<String>, StorageError> {
    let blob = cur.take(*offsets.last().expect("count + 1 offsets"), what)?;
    offsets
        .windows(2)
        .map(|w| {
            std::str::from_utf8(&blob[w[0]..w[1]])
                .map(str::to_owned)
                .map_err(|_| StorageError::Corrupt(format!("{what} is not valid UTF-8")))
        })
        .collect()
}

/// Parses a datastore file image. The header and the size arithmetic are
/// checked before any block is materialized.
pub fn decode_datastore(bytes: &[u8]) -> Result<Datastore, StorageError> {
    if bytes.len() >= 4 && bytes[..4] != MAGIC {
        return Err(StorageError::BadMagic {
            expected: MAGIC,
            found: bytes[..4].try_into().expect("4 bytes"),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(StorageError::Truncated {
            len: bytes.len(),
            needed: HEADER_LEN,
        });
    }
    let mut cur = Cursor::new(bytes);
    cur.take(4, "magic")?;
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(StorageError::UnsupportedVersion(version));
    }
    let kind = DatastoreKind::from_code(cur.u32("kind")?)?;
    let dim = cur.u32("dim")? as usize;
    let count = to_usize(cur.u64("count")?, "count")?;
    if dim == 0 {
        return Err(StorageError::Corrupt("dim is zero".into()));
    }
    let key_floats = checked_mul(count, dim, "key block")?;
    let key_bytes = checked_mul(key_floats, 4, "key block")?;

    if kind == DatastoreKind::Token {
        let expected = checked_mul(count, 4, "value block")?
            .checked_add(key_bytes)
            .and_then(|n| n.checked_add(HEADER_LEN + 4))
            .ok_or_else(|| StorageError::SizeMismatch("token file size overflows".into()))?;
        if expected != bytes.len() {
            return Err(StorageError::SizeMismatch(format!(
                "header declares {count} x {dim} keys ({expected} bytes), file has {}",
                bytes.len()
            )));
        }
    } else if key_bytes > cur.remaining() {
        return Err(StorageError::SizeMismatch(format!(
            "header declares {count} x {dim} keys, only {} bytes follow the header",
            cur.remaining()
        )));
    }

    let keys = cur.f32s(key_floats, "key block")?;
    let index = FlatIndex::from_raw(dim, keys).map_err(|e| StorageError::Corrupt(e.to_string()))?;

    let store = match kind {
        DatastoreKind::Token => {
            let vocab_size = cur.u32("vocab size")? as usize;
            let values = cur.u32s(count, "token ids")?;
            Datastore::Token(
                TokenDatastore::from_parts(index, values, vocab_size)
                    .map_err(|e| StorageError::Corrupt(e.to_string()))?,
            )
        }
        DatastoreKind::Sentence => {
            let tok_off = read_offsets(&mut cur, count, "transcript offsets")?;
            let tokens = cur.u32s(*tok_off.last().expect("offsets"), "transcript tokens")?;
            let text_off = read_offsets(&mut cur, count, "text offsets")?;
            let texts = read_strings(&mut cur, &text_off, "display text")?;
            let durations = cur.f64s(count, "durations")?;
            let id_off = read_offsets(&mut cur, count, "id offsets")?;
            let ids = read_strings(&mut cur, &id_off, "utterance ids")?;
            let entries = (0..count)
                .map(|i| {
                    let transcript = Transcript::new(tokens[tok_off[i]..tok_off[i + 1]].to_vec(), texts[i].clone());
                    SentenceEntry::new(ids[i].clone(), transcript, durations[i])
                        .map_err(|e| StorageError::Corrupt(e.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Datastore::Sentence(
                SentenceDatastore::from_parts(index, entries).map_err(|e| StorageError::Corrupt(e.to_string()))?,
            )
        }
    };
    if cur.remaining() != 0 {
        return Err(StorageError::SizeMismatch(format!(
            "{} trailing bytes after offset {}",
            cur.remaining(),
            cur.position()
        )));
    }
    Ok(store)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
    std::fs::write(path, bytes).map_err(|e| StorageError::io(path, e))
}

pub fn save_token_store(store: &TokenDatastore, path: impl AsRef<Path>) -> Result<(), StorageError> {
    write_file(path.as_ref(), &encode_token_store(store))
}

pub fn save_sentence_store(store: &SentenceDatastore, path: impl AsRef<Path>) -> Result<(), StorageError> {
    write_file(path.as_ref(), &encode_sentence_store(store))
}

pub fn load_datastore(path: impl AsRef<Path>) -> Result<Datastore, StorageError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| StorageError::io(path, e))?;
    decode_datastore(&bytes)
}

pub fn load_token_store(path: impl AsRef<Path>) -> Result<TokenDatastore, StorageError> {
    match load_datastore(path)? {
        Datastore::Token(t) => Ok(t),
        other => Err(StorageError::KindMismatch {
            expected: DatastoreKind::Token,
            found: other.kind(),
        }),
    }
}

pub fn load_sentence_store(path: impl AsRef<Path>) -> Result<SentenceDatastore, StorageError> {
    match load_datastore(path)? {
        Datastore::Sentence(s) => Ok(s),
        other => Err(StorageError::KindMismatch {
            expected: DatastoreKind::Sentence,
            found: other.kind(),
        }),
    }
}
