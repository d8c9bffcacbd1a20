//! Export stream written by a model-side exporter and read back here.
//!
//! ```text
//! stream  := "M2RX" u32:version(1) record*
//! record  := u32:header_len header u64:payload_len payload
//! header  := one line of JSON (see `RecordHeader`), newline-terminated
//! payload := u32 tokens[steps]
//!            f32 frames[frames * encoder_dim]
//!            f32 taps[steps * tap_dim]
//!            f32 logits[steps * vocab_size]      (only if has_logits)
//! ```
//!
//! `tokens` is the teacher-forcing target sequence: the transcript followed
//! by the end-of-sequence token, so `steps == tokens.len()` and the start
//! token never appears. All numbers are little-endian.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{checked_mul, to_usize, Cursor, StorageError};
use crate::corpus::{Corpus, Transcript, Utterance};
use crate::model::{AsrModel, AudioSegment, ReplayModel, TokenId};

pub const MAGIC: [u8; 4] = *b"M2RX";
pub const VERSION: u32 = 1;

/// Guards against absurd header lengths in corrupt streams.
const MAX_HEADER_LEN: u32 = 1 << 20;

/// Activations of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportRecord {
    pub utterance_id: String,
    pub text: String,
    pub frame_duration_s: f64,
    pub start_token: TokenId,
    pub eos_token: TokenId,
    pub vocab_size: usize,
    pub encoder_dim: usize,
    pub tap_dim: usize,
    /// Transcript followed by end-of-sequence.
    pub tokens: Vec<TokenId>,
    pub frames: Vec<f32>,
    pub taps: Vec<f32>,
    pub logits: Option<Vec<f32>>,
}

impl ExportRecord {
    pub fn steps(&self) -> usize {
        self.tokens.len()
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len().checked_div(self.encoder_dim).unwrap_or(0)
    }

    fn invalid(&self, reason: impl Into<String>) -> StorageError {
        StorageError::InvalidRecord {
            id: self.utterance_id.clone(),
            reason: reason.into(),
        }
    }

    /// Checks internal consistency of a single record.
    pub fn validate(&self) -> Result<(), StorageError> {
        if self.utterance_id.is_empty() {
            return Err(self.invalid("empty utterance id"));
        }
        if self.encoder_dim == 0 || self.tap_dim == 0 || self.vocab_size == 0 {
            return Err(self.invalid("dimensions must be positive"));
        }
        if !(self.frame_duration_s > 0.0) || !self.frame_duration_s.is_finite() {
            return Err(self.invalid("frame duration must be positive"));
        }
        if self.frames.is_empty() || !self.frames.len().is_multiple_of(self.encoder_dim) {
            return Err(self.invalid("frame block is empty or ragged"));
        }
        if self.tokens.last() != Some(&self.eos_token) {
            return Err(self.invalid("tokens must end with the end-of-sequence token"));
        }
        if let Some(&t) = self.tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(self.invalid(format!("token {t} outside vocabulary of {}", self.vocab_size)));
        }
        if self.tokens.contains(&self.start_token) {
            return Err(self.invalid("start token must not be a target"));
        }
        if self.taps.len() != self.steps() * self.tap_dim {
            return Err(self.invalid(format!(
                "{} tap values for {} steps of dimension {}",
                self.taps.len(),
                self.steps(),
                self.tap_dim
            )));
        }
        if let Some(l) = &self.logits {
            if l.len() != self.steps() * self.vocab_size {
                return Err(self.invalid("logit block size does not match steps x vocab"));
            }
        }
        if !self.frames.iter().chain(&self.taps).all(|x| x.is_finite()) {
            return Err(self.invalid("non-finite frame or tap value"));
        }
        Ok(())
    }

    fn header(&self) -> RecordHeader {
        RecordHeader {
            utterance_id: self.utterance_id.clone(),
            text: self.text.clone(),
            frame_duration_s: self.frame_duration_s,
            start_token: self.start_token,
            eos_token: self.eos_token,
            vocab_size: self.vocab_size,
            encoder_dim: self.encoder_dim,
            tap_dim: self.tap_dim,
            frames: self.num_frames(),
            steps: self.steps(),
            has_logits: self.logits.is_some(),
        }
    }

    /// The utterance this record describes, with the stored encoder frames
    /// standing in for audio.
    pub fn utterance(&self) -> Utterance {
        let transcript = Transcript::new(self.tokens[..self.tokens.len() - 1].to_vec(), self.text.clone());
        Utterance {
            audio: AudioSegment {
                utterance_id: self.utterance_id.clone(),
                dim: self.encoder_dim,
                frames: self.frames.clone(),
                frame_duration_s: self.frame_duration_s,
            },
            transcript,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordHeader {
    utterance_id: String,
    text: String,
    frame_duration_s: f64,
    start_token: TokenId,
    eos_token: TokenId,
    vocab_size: usize,
    encoder_dim: usize,
    tap_dim: usize,
    frames: usize,
    steps: usize,
    has_logits: bool,
}

impl RecordHeader {
    fn payload_len(&self) -> Result<usize, StorageError> {
        let floats = checked_mul(self.frames, self.encoder_dim, "frame block")?
            .checked_add(checked_mul(self.steps, self.tap_dim, "tap block")?)
            .and_then(|n| {
                let logits = if self.has_logits {
                    self.steps.checked_mul(self.vocab_size)?
                } else {
                    0
                };
                n.checked_add(logits)?.checked_add(self.steps)
            })
            .ok_or_else(|| StorageError::SizeMismatch("record payload size overflows".into()))?;
        checked_mul(floats, 4, "record payload")
    }
}

/// Writes an export stream record by record.
pub struct ExportWriter<W: Write> {
    out: W,
}

impl<W: Write> ExportWriter<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        out.write_all(&MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        Ok(Self { out })
    }

    pub fn write_record(&mut self, rec: &ExportRecord) -> Result<(), StorageError> {
        rec.validate()?;
        let io = |e: io::Error| StorageError::Io {
            path: "<export stream>".into(),
            message: e.to_string(),
        };
        let mut header = serde_json::to_string(&rec.header()).expect("header serializes");
        header.push('\n');
        let mut payload = Vec::with_capacity(rec.header().payload_len()?);
        for &t in &rec.tokens {
            payload.extend_from_slice(&t.to_le_bytes());
        }
        for &x in rec.frames.iter().chain(&rec.taps).chain(rec.logits.iter().flatten()) {
            payload.extend_from_slice(&x.to_le_bytes());
        }
        self.out.write_all(&(header.len() as u32).to_le_bytes()).map_err(io)?;
        self.out.write_all(header.as_bytes()).map_err(io)?;
        self.out.write_all(&(payload.len() as u64).to_le_bytes()).map_err(io)?;
        self.out.write_all(&payload).map_err(io)
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Reads exactly `buf.len()` bytes; `Ok(false)` on a clean EOF before the
/// first byte.
fn read_or_eof<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<bool, StorageError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => {
                return Err(StorageError::SizeMismatch(format!("stream ends inside {what}")));
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => {
                return Err(StorageError::Io {
                    path: "<export stream>".into(),
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(true)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), StorageError> {
    if buf.is_empty() || read_or_eof(r, buf, what)? {
        Ok(())
    } else {
        Err(StorageError::SizeMismatch(format!("stream ends before {what}")))
    }
}

fn check_same<T: PartialEq>(
    first: &ExportRecord,
    rec: &ExportRecord,
    field: &'static str,
    get: impl Fn(&ExportRecord) -> T,
) -> Result<(), StorageError> {
    if get(first) == get(rec) {
        Ok(())
    } else {
        Err(StorageError::InconsistentRecords {
            first: first.utterance_id.clone(),
            second: rec.utterance_id.clone(),
            field,
        })
    }
}

/// Parses a whole export stream. Every record is validated on its own and
/// against the first record; duplicate ids are rejected. An empty stream
/// (zero bytes, or only the stream header) yields no records.
pub fn read_exports<R: Read>(mut r: R) -> Result<Vec<ExportRecord>, StorageError> {
    let mut head = [0u8; 8];
    if !read_or_eof(&mut r, &mut head, "stream header")? {
        return Ok(Vec::new());
    }
    if head[..4] != MAGIC {
        return Err(StorageError::BadMagic {
            expected: MAGIC,
            found: head[..4].try_into().expect("4 bytes"),
        });
    }
    let version = u32::from_le_bytes(head[4..].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(StorageError::UnsupportedVersion(version));
    }

    let mut records: Vec<ExportRecord> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    loop {
        let mut len = [0u8; 4];
        if !read_or_eof(&mut r, &mut len, "record header length")? {
            break;
        }
        let header_len = u32::from_le_bytes(len);
        if header_len == 0 || header_len > MAX_HEADER_LEN {
            return Err(StorageError::Corrupt(format!("record header length {header_len}")));
        }
        let mut header = vec![0u8; header_len as usize];
        read_exact(&mut r, &mut header, "record header")?;
        let header: RecordHeader = serde_json::from_slice(&header)
            .map_err(|e| StorageError::Corrupt(format!("record header {}: {e}", records.len())))?;

        let mut len = [0u8; 8];
        read_exact(&mut r, &mut len, "payload length")?;
        let payload_len = to_usize(u64::from_le_bytes(len), "payload length")?;
        let expected = header.payload_len()?;
        if payload_len != expected {
            return Err(StorageError::InvalidRecord {
                id: header.utterance_id,
                reason: format!("payload is {payload_len} bytes, header implies {expected}"),
            });
        }
        let mut payload = vec![0u8; payload_len];
        read_exact(&mut r, &mut payload, "record payload")?;
        let mut cur = Cursor::new(&payload);
        let tokens = cur.u32s(header.steps, "tokens")?;
        let frames = cur.f32s(header.frames * header.encoder_dim, "frames")?;
        let taps = cur.f32s(header.steps * header.tap_dim, "taps")?;
        let logits = if header.has_logits {
            Some(cur.f32s(header.steps * header.vocab_size, "logits")?)
        } else {
            None
        };
        let rec = ExportRecord {
            utterance_id: header.utterance_id,
            text: header.text,
            frame_duration_s: header.frame_duration_s,
            start_token: header.start_token,
            eos_token: header.eos_token,
            vocab_size: header.vocab_size,
            encoder_dim: header.encoder_dim,
            tap_dim: header.tap_dim,
            tokens,
            frames,
            taps,
            logits,
        };
        rec.validate()?;
        if let Some(first) = records.first() {
            check_same(first, &rec, "encoder_dim", |r| r.encoder_dim)?;
            check_same(first, &rec, "tap_dim", |r| r.tap_dim)?;
            check_same(first, &rec, "vocab_size", |r| r.vocab_size)?;
            check_same(first, &rec, "start_token", |r| r.start_token)?;
            check_same(first, &rec, "eos_token", |r| r.eos_token)?;
            check_same(first, &rec, "frame_duration_s", |r| r.frame_duration_s.to_bits())?;
        }
        if !seen.insert(rec.utterance_id.clone()) {
            return Err(rec.invalid("duplicate utterance id"));
        }
        records.push(rec);
    }
    Ok(records)
}

/// Corpus and replay model reconstructed from an export stream.
#[derive(Debug, Clone)]
pub struct ImportedCorpus {
    pub corpus: Corpus,
    pub model: ReplayModel,
}

impl ImportedCorpus {
    pub fn from_records(records: Vec<ExportRecord>) -> Self {
        let corpus = Corpus::new(records.iter().map(ExportRecord::utterance).collect());
        Self {
            corpus,
            model: ReplayModel::new(records),
        }
    }
}

pub fn import_exports(path: impl AsRef<Path>) -> Result<ImportedCorpus, StorageError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| StorageError::io(path, e))?;
    Ok(ImportedCorpus::from_records(read_exports(BufReader::new(file))?))
}

/// Runs `model` over `corpus` and writes one record per utterance to
/// `path`, as an external exporter would.
pub fn export_corpus<M: AsrModel + ?Sized>(
    model: &M,
    corpus: &Corpus,
    with_logits: bool,
    path: impl AsRef<Path>,
) -> Result<usize, StorageError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| StorageError::io(path, e))?;
    let mut writer = ExportWriter::new(BufWriter::new(file)).map_err(|e| StorageError::io(path, e))?;
    for utt in corpus {
        let rec = export_record(model, utt, with_logits)?;
        writer.write_record(&rec)?;
    }
    writer.finish().map_err(|e| StorageError::io(path, e))?;
    Ok(corpus.len())
}

/// Captures the activations of `model` on one utterance.
pub fn export_record<M: AsrModel + ?Sized>(
    model: &M,
    utt: &Utterance,
    with_logits: bool,
) -> Result<ExportRecord, StorageError> {
    let fail = |e: crate::model::ModelError| StorageError::InvalidRecord {
        id: utt.id().to_owned(),
        reason: e.to_string(),
    };
    let enc = model.encode(&utt.audio).map_err(fail)?;
    let mut tokens = utt.transcript.tokens.clone();
    tokens.push(model.eos_token());
    let steps = model.teacher_force(&enc, &tokens).map_err(fail)?;
    let logits = with_logits.then(|| steps.iter().flat_map(|s| s.logits.iter().map(|&x| x as f32)).collect());
    Ok(ExportRecord {
        utterance_id: utt.id().to_owned(),
        text: utt.transcript.text.clone(),
        frame_duration_s: utt.audio.frame_duration_s,
        start_token: model.start_token(),
        eos_token: model.eos_token(),
        vocab_size: model.vocab_size(),
        encoder_dim: enc.dim,
        tap_dim: model.tap_dim(),
        tokens,
        frames: enc.valid_frames().flatten().copied().collect(),
        taps: steps
            .iter()
            .flat_map(|s| s.knn_query.as_slice().iter().copied())
            .collect(),
        logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, steps: usize, tap_dim: usize) -> ExportRecord {
        let mut tokens: Vec<TokenId> = (0..steps - 1).map(|i| 2 + i as TokenId).collect();
        tokens.push(1);
        ExportRecord {
            utterance_id: id.into(),
            text: "x".into(),
            frame_duration_s: 0.02,
            start_token: 0,
            eos_token: 1,
            vocab_size: 16,
            encoder_dim: 2,
            tap_dim,
            tokens,
            frames: vec![0.5; 6],
            taps: (0..steps * tap_dim).map(|x| x as f32).collect(),
            logits: None,
        }
    }

    fn stream(records: &[ExportRecord]) -> Vec<u8> {
        let mut w = ExportWriter::new(Vec::new()).unwrap();
        for r in records {
            w.write_record(r).unwrap();
        }
        w.finish().unwrap()
    }

    #[test]
    fn round_trip() {
        let mut b = rec("b", 4, 3);
        b.logits = Some((0..64).map(|x| x as f32 * 0.5).collect());
        let records = vec![rec("a", 3, 3), b];
        assert_eq!(read_exports(stream(&records).as_slice()).unwrap(), records);
    }

    #[test]
    fn header_is_one_json_line() {
        let bytes = stream(&[rec("a", 3, 3)]);
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[12..12 + len]).unwrap();
        assert!(header.ends_with('\n'));
        assert_eq!(header.matches('\n').count(), 1);
        let v: serde_json::Value = serde_json::from_str(header).unwrap();
        assert_eq!(v["steps"], 3);
        assert_eq!(v["eos_token"], 1);
    }

    #[test]
    fn empty_streams() {
        assert!(read_exports(&[][..]).unwrap().is_empty());
        assert!(read_exports(stream(&[]).as_slice()).unwrap().is_empty());
        let imported = ImportedCorpus::from_records(Vec::new());
        assert!(imported.corpus.is_empty());
    }

    #[test]
    fn inconsistent_dims_name_both_records() {
        let bytes = stream(&[rec("first", 3, 3), rec("second", 3, 4)]);
        assert_eq!(
            read_exports(bytes.as_slice()).unwrap_err(),
            StorageError::InconsistentRecords {
                first: "first".into(),
                second: "second".into(),
                field: "tap_dim",
            }
        );
    }

    #[test]
    fn steps_must_match_tokens() {
        let mut r = rec("a", 3, 3);
        r.taps.truncate(6);
        assert!(matches!(r.validate(), Err(StorageError::InvalidRecord { .. })));
        // Forge a header that claims more steps than the payload carries.
        let bytes = stream(&[rec("a", 3, 3)]);
        let text = String::from_utf8_lossy(&bytes).replace("\"steps\":3", "\"steps\":4");
        assert!(read_exports(text.as_bytes()).is_err());
    }

    #[test]
    fn truncated_stream_is_an_error() {
        let bytes = stream(&[rec("a", 3, 3)]);
        for cut in [9, 20, bytes.len() - 1] {
            assert!(read_exports(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let bytes = stream(&[rec("a", 3, 3), rec("a", 3, 3)]);
        assert!(read_exports(bytes.as_slice()).is_err());
    }
}
