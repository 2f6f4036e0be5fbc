use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use super::record::{scan, RecordKind, WalRecord};
use super::recovery::{begin_payload, commit_payload, read_transactions, TxnState};
use super::{now_ms, resolve_object, WalError, MAX_TXN_ID};
use crate::storage::{read_object_bytes, write_atomic};
use crate::storage::handles::TrackedFile;

pub const DEFAULT_MAX_ENTRIES: usize = 1000;
pub const DEFAULT_CHECKPOINT_INTERVAL: Duration = Duration::from_millis(1000);

#[derive(Debug, Clone)]
pub struct WalOptions {
    pub max_entries: usize,
    pub checkpoint_interval: Duration,
    /// fsync after every append.
    pub sync: bool,
}

impl Default for WalOptions {
    fn default() -> Self {
        WalOptions { max_entries: DEFAULT_MAX_ENTRIES, checkpoint_interval: DEFAULT_CHECKPOINT_INTERVAL, sync: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalStats {
    /// Transactions present in the log, finished or not.
    pub entries: usize,
    pub in_flight: usize,
    pub last_checkpoint_id: u64,
    pub last_committed: u64,
    pub next_txn_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RemovedTxn {
    pub txn_id: u64,
    pub state: TxnState,
    pub begin_ts: u64,
    pub end_ts: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GcReport {
    pub removed: Vec<RemovedTxn>,
}

impl GcReport {
    pub fn removed_count(&self) -> usize {
        self.removed.len()
    }
}

type Clock = Box<dyn Fn() -> u64 + Send>;

/// Single-writer append handle on a log file.
pub struct WriteAheadLog {
    path: PathBuf,
    file: TrackedFile,
    opts: WalOptions,
    clock: Clock,
    next_txn_id: u64,
    /// BEGUN transactions and their object names.
    in_flight: BTreeMap<u64, String>,
    entries: usize,
    last_committed: u64,
    last_checkpoint_id: u64,
    last_checkpoint_at: Instant,
    dirty: bool,
    read_only: Option<String>,
}

impl std::fmt::Debug for WriteAheadLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WriteAheadLog").field("path", &self.path).field("stats", &self.stats()).finish()
    }
}

impl WriteAheadLog {
    /// Opens (creating if needed) the log at `path`. A torn tail is truncated.
    pub fn open(path: impl Into<PathBuf>, opts: WalOptions) -> Result<Self, WalError> {
        let path = path.into();
        let mut file = TrackedFile::open_with(&path, OpenOptions::new().read(true).write(true).create(true))
            .map_err(|e| WalError::io(&path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| WalError::io(&path, e))?;
        let image = scan(&bytes);
        if image.valid_len < bytes.len() {
            file.set_len(image.valid_len as u64).map_err(|e| WalError::io(&path, e))?;
            file.sync_all().map_err(|e| WalError::io(&path, e))?;
        }
        file.seek(SeekFrom::End(0)).map_err(|e| WalError::io(&path, e))?;

        let txns = read_transactions(&image.records).map_err(|(txn_id, reason)| WalError::Recovery { txn_id, reason })?;
        let last_checkpoint_id =
            image.records.iter().rev().find_map(|r| r.record.checkpoint_id()).unwrap_or(0);
        let next_txn_id = txns.keys().next_back().map_or(1, |max| max.saturating_add(1));
        let in_flight =
            txns.values().filter(|t| t.state == TxnState::Begun).map(|t| (t.txn_id, t.object_filename.clone())).collect();
        let last_committed =
            txns.values().filter(|t| t.state == TxnState::Committed).map(|t| t.txn_id).max().unwrap_or(0);

        Ok(WriteAheadLog {
            path,
            file,
            opts,
            clock: Box::new(now_ms),
            next_txn_id,
            in_flight,
            entries: txns.len(),
            last_committed,
            last_checkpoint_id,
            last_checkpoint_at: Instant::now(),
            dirty: false,
            read_only: None,
        })
    }

    /// Replaces the wall clock used for record timestamps.
    pub fn with_clock(mut self, clock: impl Fn() -> u64 + Send + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn options(&self) -> &WalOptions {
        &self.opts
    }

    pub fn stats(&self) -> WalStats {
        WalStats {
            entries: self.entries,
            in_flight: self.in_flight.len(),
            last_checkpoint_id: self.last_checkpoint_id,
            last_committed: self.last_committed,
            next_txn_id: self.next_txn_id,
        }
    }

    pub fn is_read_only(&self) -> bool {
        self.read_only.is_some()
    }

    fn check_writable(&self) -> Result<(), WalError> {
        match &self.read_only {
            Some(reason) => Err(WalError::Unavailable(reason.clone())),
            None => Ok(()),
        }
    }

    fn append(&mut self, record: &WalRecord) -> Result<(), WalError> {
        self.check_writable()?;
        let bytes = record.encode();
        let res = self.file.write_all(&bytes).and_then(|_| if self.opts.sync { self.file.sync_data() } else { Ok(()) });
        if let Err(e) = res {
            let reason = format!("append to {} failed: {e}", self.path.display());
            self.read_only = Some(reason.clone());
            return Err(WalError::Unavailable(reason));
        }
        Ok(())
    }

    /// Logs the object's current bytes and returns the new transaction id.
    /// `before` is `None` when the object does not exist yet.
    pub fn begin(&mut self, object_filename: &str, before: Option<&[u8]>) -> Result<u64, WalError> {
        let id = self.next_txn_id;
        if id > MAX_TXN_ID {
            return Err(WalError::WrapAround);
        }
        let record =
            WalRecord { kind: RecordKind::Begin, txn_id: id, ts_ms: (self.clock)(), payload: begin_payload(object_filename, before) };
        self.append(&record)?;
        self.next_txn_id = id + 1;
        self.in_flight.insert(id, object_filename.to_owned());
        self.entries += 1;
        self.dirty = true;
        Ok(id)
    }

    pub fn commit(&mut self, txn_id: u64, after: &[u8]) -> Result<(), WalError> {
        if !self.in_flight.contains_key(&txn_id) {
            return Err(WalError::State(txn_id));
        }
        let record = WalRecord { kind: RecordKind::Commit, txn_id, ts_ms: (self.clock)(), payload: commit_payload(after) };
        self.append(&record)?;
        self.in_flight.remove(&txn_id);
        self.last_committed = self.last_committed.max(txn_id);
        self.after_terminal()
    }

    pub fn abort(&mut self, txn_id: u64) -> Result<(), WalError> {
        if !self.in_flight.contains_key(&txn_id) {
            return Err(WalError::State(txn_id));
        }
        let record = WalRecord { kind: RecordKind::Abort, txn_id, ts_ms: (self.clock)(), payload: Vec::new() };
        self.append(&record)?;
        self.in_flight.remove(&txn_id);
        self.after_terminal()
    }

    fn after_terminal(&mut self) -> Result<(), WalError> {
        self.dirty = true;
        if self.entries > self.opts.max_entries {
            // Trim below the cap so the rewrite is not repeated on every commit.
            let low_water = self.opts.max_entries - self.opts.max_entries / 10;
            self.gc_to(low_water)?;
        }
        Ok(())
    }

    /// Flushes and appends a CHECKPOINT carrying the latest committed id.
    pub fn checkpoint(&mut self) -> Result<u64, WalError> {
        self.check_writable()?;
        if let Err(e) = self.file.sync_all() {
            let reason = format!("flush of {} failed: {e}", self.path.display());
            self.read_only = Some(reason.clone());
            return Err(WalError::Unavailable(reason));
        }
        let id = self.last_committed;
        self.append(&WalRecord::checkpoint(id, (self.clock)()))?;
        self.last_checkpoint_id = id;
        self.last_checkpoint_at = Instant::now();
        self.dirty = false;
        Ok(id)
    }

    /// Periodic maintenance: checkpoint once per interval while there is
    /// activity, and collect garbage past the entry cap.
    pub fn tick(&mut self) -> Result<Option<u64>, WalError> {
        if self.entries > self.opts.max_entries {
            self.gc()?;
        }
        if self.dirty && self.last_checkpoint_at.elapsed() >= self.opts.checkpoint_interval {
            return self.checkpoint().map(Some);
        }
        Ok(None)
    }

    /// Time until the next checkpoint is due.
    pub fn next_checkpoint_in(&self) -> Duration {
        self.opts.checkpoint_interval.saturating_sub(self.last_checkpoint_at.elapsed())
    }

    /// Checkpoints, then rewrites the log keeping in-flight transactions, the
    /// newest checkpoint and the newest committed transactions up to the cap.
    pub fn gc(&mut self) -> Result<GcReport, WalError> {
        self.gc_to(self.opts.max_entries)
    }

    fn gc_to(&mut self, cap: usize) -> Result<GcReport, WalError> {
        self.checkpoint()?;
        let mut bytes = Vec::new();
        {
            let mut reader = TrackedFile::open(&self.path).map_err(|e| WalError::io(&self.path, e))?;
            reader.read_to_end(&mut bytes).map_err(|e| WalError::io(&self.path, e))?;
        }
        let image = scan(&bytes);
        let txns = read_transactions(&image.records).map_err(|(txn_id, reason)| WalError::Recovery { txn_id, reason })?;

        let in_flight: BTreeSet<u64> = txns.values().filter(|t| t.state == TxnState::Begun).map(|t| t.txn_id).collect();
        let room = cap.saturating_sub(in_flight.len());
        let committed_keep: BTreeSet<u64> =
            txns.values().filter(|t| t.state == TxnState::Committed).map(|t| t.txn_id).rev().take(room).collect();
        let newest_checkpoint = image.records.iter().rposition(|r| r.record.kind == RecordKind::Checkpoint);

        let mut out = Vec::with_capacity(bytes.len());
        for (i, r) in image.records.iter().enumerate() {
            let keep = match r.record.kind {
                RecordKind::Checkpoint => Some(i) == newest_checkpoint,
                _ => in_flight.contains(&r.record.txn_id) || committed_keep.contains(&r.record.txn_id),
            };
            if keep {
                out.extend_from_slice(&bytes[r.offset..r.offset + r.len]);
            }
        }
        let removed: Vec<RemovedTxn> = txns
            .values()
            .filter(|t| !in_flight.contains(&t.txn_id) && !committed_keep.contains(&t.txn_id))
            .map(|t| RemovedTxn { txn_id: t.txn_id, state: t.state, begin_ts: t.begin_ts, end_ts: t.end_ts })
            .collect();
        if removed.is_empty() {
            return Ok(GcReport::default());
        }

        // On failure the old log stays in place untouched.
        write_atomic(&self.path, &out).map_err(|e| WalError::Unavailable(format!("gc rewrite failed: {e}")))?;
        let mut file = TrackedFile::open_with(&self.path, OpenOptions::new().read(true).write(true))
            .map_err(|e| WalError::io(&self.path, e))?;
        file.seek(SeekFrom::End(0)).map_err(|e| WalError::io(&self.path, e))?;
        self.file = file;
        self.entries = in_flight.len() + committed_keep.len();
        Ok(GcReport { removed })
    }

    /// Runs one logged write of `object` (resolved against the log directory):
    /// BEGIN with the current bytes, atomic replace, COMMIT with the new bytes.
    /// A failed write is aborted and the old file left in place.
    pub fn write_object(&mut self, object: &str, after: &[u8]) -> Result<u64, WalError> {
        let path = resolve_object(&self.path, object);
        let before = read_object_bytes(&path).map_err(|e| WalError::Unavailable(e.to_string()))?;
        let id = self.begin(object, before.as_deref())?;
        if let Err(e) = write_atomic(&path, after) {
            self.abort(id)?;
            return Err(WalError::Unavailable(format!("write of {} failed: {e}", path.display())));
        }
        crate::faults::hit("after_dump");
        self.commit(id, after)?;
        Ok(id)
    }

    /// Clean shutdown: final checkpoint.
    pub fn close(mut self) -> Result<u64, WalError> {
        self.checkpoint()
    }
}
