//! Write-ahead log of before/after object snapshots.
//!
//! A transaction logs the object's current bytes (BEGIN), the caller writes
//! the new object file, then the new bytes are logged (COMMIT). Recovery
//! re-applies committed snapshots newer than the last checkpoint and rolls
//! unfinished transactions back to their `before` bytes.

mod log;
mod record;
mod recovery;

pub use log::{GcReport, RemovedTxn, WalOptions, WalStats, WriteAheadLog, DEFAULT_CHECKPOINT_INTERVAL, DEFAULT_MAX_ENTRIES};
pub use record::{scan, RecordKind, Scan, ScannedRecord, WalRecord};
pub use recovery::{read_transactions, recover, replay_to, RecoveryReport, Transaction, TxnState};

use std::path::{Path, PathBuf};

use thiserror::Error;

/// Largest transaction id ever handed out.
pub const MAX_TXN_ID: u64 = i64::MAX as u64;

#[derive(Debug, Error)]
pub enum WalError {
    #[error("transaction id space exhausted; refusing new transactions")]
    WrapAround,
    #[error("transaction {0} is not in progress")]
    State(u64),
    #[error("log unavailable: {0}")]
    Unavailable(String),
    #[error("recovery of transaction {txn_id} failed: {reason}")]
    Recovery { txn_id: u64, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl WalError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        WalError::Io { path: path.to_owned(), source }
    }
}

/// Name of the log file for a service: `<service>-wal.bin`.
pub fn log_file_name(service: &str) -> String {
    format!("{service}-wal.bin")
}

/// Object names are resolved against the directory holding the log.
pub(crate) fn resolve_object(log_path: &Path, object: &str) -> PathBuf {
    let p = Path::new(object);
    if p.is_absolute() {
        p.to_owned()
    } else {
        log_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

pub(crate) fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
