use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{Seek, SeekFrom, Write};
use std::path::Path;

use super::record::{scan, RecordKind, ScannedRecord, WalRecord};
use super::{now_ms, resolve_object, WalError};
use crate::storage::handles::TrackedFile;
use crate::storage::{deserialize, read_object_bytes, serialize, write_atomic, CanonicalValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TxnState {
    Begun,
    Committed,
    Aborted,
}

/// A transaction reassembled from its log records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub txn_id: u64,
    pub object_filename: String,
    /// Object bytes before the transaction; `None` if the object did not exist.
    pub before: Option<Vec<u8>>,
    pub after: Option<Vec<u8>>,
    pub begin_ts: u64,
    pub end_ts: Option<u64>,
    pub state: TxnState,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub applied: Vec<u64>,
    pub rolled_back: Vec<u64>,
}

pub(crate) fn begin_payload(object: &str, before: Option<&[u8]>) -> Vec<u8> {
    let v = CanonicalValue::map().with("object", object).with_opt("before", before.map(<[u8]>::to_vec)).build();
    serialize(&v).expect("payload has no floats")
}

pub(crate) fn commit_payload(after: &[u8]) -> Vec<u8> {
    serialize(&CanonicalValue::map().with("after", after.to_vec()).build()).expect("payload has no floats")
}

/// Groups records by transaction. Fails with the offending id when a
/// snapshot payload cannot be decoded.
pub fn read_transactions(records: &[ScannedRecord]) -> Result<BTreeMap<u64, Transaction>, (u64, String)> {
    let mut txns: BTreeMap<u64, Transaction> = BTreeMap::new();
    for ScannedRecord { record: r, .. } in records {
        match r.kind {
            RecordKind::Begin => {
                let decode = || -> Result<(String, Option<Vec<u8>>), String> {
                    let v = deserialize(&r.payload).map_err(|e| e.to_string())?;
                    let object = v.field("object").and_then(|o| o.as_str().map(str::to_owned)).map_err(|e| e.to_string())?;
                    let before = match v.opt_field("before").map_err(|e| e.to_string())? {
                        Some(b) => Some(b.as_bytes().map_err(|e| e.to_string())?.to_vec()),
                        None => None,
                    };
                    Ok((object, before))
                };
                let (object_filename, before) = decode().map_err(|e| (r.txn_id, format!("BEGIN payload: {e}")))?;
                txns.insert(
                    r.txn_id,
                    Transaction {
                        txn_id: r.txn_id,
                        object_filename,
                        before,
                        after: None,
                        begin_ts: r.ts_ms,
                        end_ts: None,
                        state: TxnState::Begun,
                    },
                );
            }
            RecordKind::Commit => {
                let after = deserialize(&r.payload)
                    .and_then(|v| v.field("after").and_then(|a| a.as_bytes().map(<[u8]>::to_vec)))
                    .map_err(|e| (r.txn_id, format!("COMMIT payload: {e}")))?;
                if let Some(t) = txns.get_mut(&r.txn_id) {
                    t.after = Some(after);
                    t.end_ts = Some(r.ts_ms);
                    t.state = TxnState::Committed;
                }
            }
            RecordKind::Abort => {
                if let Some(t) = txns.get_mut(&r.txn_id) {
                    t.end_ts = Some(r.ts_ms);
                    t.state = TxnState::Aborted;
                }
            }
            RecordKind::Checkpoint => {}
        }
    }
    Ok(txns)
}

fn put_snapshot(path: &Path, bytes: Option<&[u8]>) -> Result<(), String> {
    match bytes {
        Some(b) => write_atomic(path, b).map_err(|e| e.to_string()),
        None => match std::fs::remove_file(path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(e.to_string()),
        },
    }
}

/// Brings object files back in line with the log.
///
/// Walking transactions newer than the last checkpoint in id order, committed
/// ones get their `after` snapshot written and aborted ones their `before`.
/// Unfinished transactions get `before` and an ABORT record. A torn tail is
/// truncated. The log is then checkpointed, so a second run reports nothing
/// and leaves the objects as they are.
pub fn recover(log_path: &Path) -> Result<RecoveryReport, WalError> {
    let bytes = match read_object_bytes(log_path) {
        Ok(Some(b)) => b,
        Ok(None) => return Ok(RecoveryReport::default()),
        Err(e) => return Err(WalError::Unavailable(e.to_string())),
    };
    let image = scan(&bytes);
    let txns = read_transactions(&image.records).map_err(|(txn_id, reason)| WalError::Recovery { txn_id, reason })?;
    let checkpoint = image.records.iter().rev().find_map(|r| r.record.checkpoint_id()).unwrap_or(0);

    let mut report = RecoveryReport::default();
    for t in txns.values() {
        let path = resolve_object(log_path, &t.object_filename);
        match t.state {
            TxnState::Committed if t.txn_id > checkpoint => {
                put_snapshot(&path, t.after.as_deref()).map_err(|reason| WalError::Recovery { txn_id: t.txn_id, reason })?;
                report.applied.push(t.txn_id);
            }
            // Already finished, so not reported; the object may still hold
            // a partial write.
            TxnState::Aborted if t.txn_id > checkpoint => {
                put_snapshot(&path, t.before.as_deref()).map_err(|reason| WalError::Recovery { txn_id: t.txn_id, reason })?;
            }
            TxnState::Begun => {
                put_snapshot(&path, t.before.as_deref()).map_err(|reason| WalError::Recovery { txn_id: t.txn_id, reason })?;
                report.rolled_back.push(t.txn_id);
            }
            _ => {}
        }
    }

    let mut file = TrackedFile::open_with(log_path, OpenOptions::new().write(true))
        .map_err(|e| WalError::io(log_path, e))?;
    if image.valid_len < bytes.len() {
        file.set_len(image.valid_len as u64).map_err(|e| WalError::io(log_path, e))?;
    }
    if report.applied.is_empty() && report.rolled_back.is_empty() && image.valid_len == bytes.len() {
        return Ok(report);
    }
    let ts = now_ms();
    let mut tail = Vec::new();
    for id in &report.rolled_back {
        tail.extend(WalRecord { kind: RecordKind::Abort, txn_id: *id, ts_ms: ts, payload: Vec::new() }.encode());
    }
    let last_committed = txns.values().filter(|t| t.state == TxnState::Committed).map(|t| t.txn_id).max().unwrap_or(0);
    tail.extend(WalRecord::checkpoint(last_committed.max(checkpoint), ts).encode());
    file.seek(SeekFrom::Start(image.valid_len as u64))
        .and_then(|_| file.write_all(&tail))
        .and_then(|_| file.sync_all())
        .map_err(|e| WalError::io(log_path, e))?;
    Ok(report)
}

/// Object contents as of time `t_ms`: for each object, the `after` snapshot
/// of its latest transaction committed at or before `t_ms`, otherwise the
/// `before` snapshot of its earliest logged transaction. `None` means the
/// object did not exist. The log is not modified.
pub fn replay_to(log_path: &Path, t_ms: u64) -> Result<BTreeMap<String, Option<Vec<u8>>>, WalError> {
    let bytes = match read_object_bytes(log_path) {
        Ok(Some(b)) => b,
        Ok(None) => return Ok(BTreeMap::new()),
        Err(e) => return Err(WalError::Unavailable(e.to_string())),
    };
    let image = scan(&bytes);
    let txns = read_transactions(&image.records).map_err(|(txn_id, reason)| WalError::Recovery { txn_id, reason })?;

    let mut state: BTreeMap<String, (Option<u64>, Option<Vec<u8>>)> = BTreeMap::new();
    for t in txns.values() {
        let entry = state.entry(t.object_filename.clone()).or_insert_with(|| (None, t.before.clone()));
        if t.state == TxnState::Committed && t.end_ts.is_some_and(|end| end <= t_ms) {
            let end = t.end_ts.unwrap();
            if entry.0.is_none_or(|prev| end >= prev) {
                *entry = (Some(end), t.after.clone());
            }
        }
    }
    Ok(state.into_iter().map(|(k, (_, v))| (k, v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wal::{WalOptions, WriteAheadLog};

    #[test]
    fn missing_and_empty_logs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x-wal.bin");
        assert_eq!(recover(&path).unwrap(), RecoveryReport::default());
        std::fs::write(&path, b"").unwrap();
        assert_eq!(recover(&path).unwrap(), RecoveryReport::default());
        assert!(replay_to(&path, u64::MAX).unwrap().is_empty());
    }

    #[test]
    fn rollback_of_new_object_removes_it() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x-wal.bin");
        let mut wal = WriteAheadLog::open(&path, WalOptions::default()).unwrap();
        let id = wal.begin("obj.bin", None).unwrap();
        std::fs::write(dir.path().join("obj.bin"), b"half").unwrap();
        drop(wal);
        let report = recover(&path).unwrap();
        assert_eq!(report.rolled_back, vec![id]);
        assert!(!dir.path().join("obj.bin").exists());
    }

    #[test]
    fn undecodable_snapshot_names_txn() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x-wal.bin");
        let r = WalRecord { kind: RecordKind::Begin, txn_id: 4, ts_ms: 0, payload: vec![0xff, 0x00] };
        std::fs::write(&path, r.encode()).unwrap();
        assert!(matches!(recover(&path), Err(WalError::Recovery { txn_id: 4, .. })));
    }

    #[test]
    fn aborted_write_restores_before() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x-wal.bin");
        let mut wal = WriteAheadLog::open(&path, WalOptions::default()).unwrap();
        let first = wal.write_object("obj.bin", b"one").unwrap();
        let id = wal.begin("obj.bin", Some(b"one")).unwrap();
        std::fs::write(dir.path().join("obj.bin"), b"partial").unwrap();
        wal.abort(id).unwrap();
        drop(wal);
        assert_eq!(recover(&path).unwrap(), RecoveryReport { applied: vec![first], rolled_back: vec![] });
        assert_eq!(std::fs::read(dir.path().join("obj.bin")).unwrap(), b"one");
    }
}
