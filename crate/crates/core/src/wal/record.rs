//! On-disk record framing:
//! `[len u32 BE][kind u8][txn_id u64 BE][ts u64 BE][payload][crc32 u32 BE]`,
//! where `len` counts kind through payload and the CRC covers the same bytes.

use std::fmt;

const HEADER_LEN: usize = 1 + 8 + 8;
const MAX_RECORD_LEN: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecordKind {
    Begin = 1,
    Commit = 2,
    Abort = 3,
    Checkpoint = 4,
}

impl RecordKind {
    fn from_u8(b: u8) -> Option<Self> {
        match b {
            1 => Some(RecordKind::Begin),
            2 => Some(RecordKind::Commit),
            3 => Some(RecordKind::Abort),
            4 => Some(RecordKind::Checkpoint),
            _ => None,
        }
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordKind::Begin => "BEGIN",
            RecordKind::Commit => "COMMIT",
            RecordKind::Abort => "ABORT",
            RecordKind::Checkpoint => "CHECKPOINT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalRecord {
    pub kind: RecordKind,
    pub txn_id: u64,
    pub ts_ms: u64,
    pub payload: Vec<u8>,
}

impl WalRecord {
    pub fn checkpoint(id: u64, ts_ms: u64) -> Self {
        WalRecord { kind: RecordKind::Checkpoint, txn_id: 0, ts_ms, payload: id.to_be_bytes().to_vec() }
    }

    /// Checkpoint id carried by a CHECKPOINT record.
    pub fn checkpoint_id(&self) -> Option<u64> {
        (self.kind == RecordKind::Checkpoint && self.payload.len() == 8)
            .then(|| u64::from_be_bytes(self.payload[..].try_into().unwrap()))
    }

    pub fn encode(&self) -> Vec<u8> {
        let body_len = HEADER_LEN + self.payload.len();
        let mut out = Vec::with_capacity(4 + body_len + 4);
        out.extend_from_slice(&(body_len as u32).to_be_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.txn_id.to_be_bytes());
        out.extend_from_slice(&self.ts_ms.to_be_bytes());
        out.extend_from_slice(&self.payload);
        let crc = crc32fast::hash(&out[4..]);
        out.extend_from_slice(&crc.to_be_bytes());
        out
    }
}

/// A decoded record and its byte range in the log.
#[derive(Debug, Clone)]
pub struct ScannedRecord {
    pub offset: usize,
    pub len: usize,
    pub record: WalRecord,
}

/// Result of scanning a log image: every record up to the first invalid one.
#[derive(Debug, Clone, Default)]
pub struct Scan {
    pub records: Vec<ScannedRecord>,
    /// Length of the valid prefix; anything after it is a torn or corrupt tail.
    pub valid_len: usize,
}

pub fn scan(bytes: &[u8]) -> Scan {
    let mut records = Vec::new();
    let mut pos = 0;
    while let Some((record, len)) = decode_at(bytes, pos) {
        records.push(ScannedRecord { offset: pos, len, record });
        pos += len;
    }
    Scan { records, valid_len: pos }
}

fn decode_at(bytes: &[u8], pos: usize) -> Option<(WalRecord, usize)> {
    let rest = bytes.get(pos..)?;
    if rest.len() < 4 {
        return None;
    }
    let body_len = u32::from_be_bytes(rest[..4].try_into().unwrap()) as usize;
    if !(HEADER_LEN..=MAX_RECORD_LEN).contains(&body_len) || rest.len() < 4 + body_len + 4 {
        return None;
    }
    let body = &rest[4..4 + body_len];
    let crc = u32::from_be_bytes(rest[4 + body_len..8 + body_len].try_into().unwrap());
    if crc32fast::hash(body) != crc {
        return None;
    }
    let kind = RecordKind::from_u8(body[0])?;
    let record = WalRecord {
        kind,
        txn_id: u64::from_be_bytes(body[1..9].try_into().unwrap()),
        ts_ms: u64::from_be_bytes(body[9..17].try_into().unwrap()),
        payload: body[HEADER_LEN..].to_vec(),
    };
    Some((record, 8 + body_len))
}
