use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::storage::{read_object_bytes, write_atomic, StorageError};
use crate::wal::{WalError, WalStats, WriteAheadLog};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Wal(#[from] WalError),
}

/// Where a service keeps its object files. Names are file names inside the
/// store's directory.
pub trait ObjectStore: Send {
    fn dir(&self) -> &Path;

    fn get(&self, name: &str) -> Result<Option<Vec<u8>>, StoreError> {
        Ok(read_object_bytes(&self.dir().join(name))?)
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), StoreError>;

    fn remove(&mut self, name: &str) -> Result<(), StoreError> {
        let path = self.dir().join(name);
        match std::fs::remove_file(&path) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(StorageError::io(&path, e).into()),
            _ => Ok(()),
        }
    }

    /// Object files currently present, sorted.
    fn list(&self) -> Vec<String> {
        let mut names: Vec<String> = std::fs::read_dir(self.dir())
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| n.ends_with(".gzbin") && !n.starts_with('.'))
            .collect();
        names.sort();
        names
    }

    fn wal_stats(&self) -> Option<WalStats> {
        None
    }

    /// Periodic housekeeping; returns a checkpoint id if one was written.
    fn tick(&mut self) -> Result<Option<u64>, StoreError> {
        Ok(None)
    }

    fn close(&mut self) {}
}

/// Plain atomic dumps.
#[derive(Debug)]
pub struct BasicStore {
    dir: PathBuf,
}

impl BasicStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        BasicStore { dir: dir.into() }
    }
}

impl ObjectStore for BasicStore {
    fn dir(&self) -> &Path {
        &self.dir
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        Ok(write_atomic(&self.dir.join(name), bytes)?)
    }
}

/// Dumps wrapped in write-ahead-log transactions.
#[derive(Debug)]
pub struct RecoverableStore {
    dir: PathBuf,
    wal: Option<WriteAheadLog>,
}

impl RecoverableStore {
    /// The log must live in `dir`, since object names resolve against it.
    pub fn new(dir: impl Into<PathBuf>, wal: WriteAheadLog) -> Self {
        RecoverableStore { dir: dir.into(), wal: Some(wal) }
    }

    fn wal(&mut self) -> Result<&mut WriteAheadLog, StoreError> {
        self.wal.as_mut().ok_or_else(|| WalError::Unavailable("log closed".into()).into())
    }
}

impl ObjectStore for RecoverableStore {
    fn dir(&self) -> &Path {
        &self.dir
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        self.wal()?.write_object(name, bytes)?;
        Ok(())
    }

    fn wal_stats(&self) -> Option<WalStats> {
        self.wal.as_ref().map(WriteAheadLog::stats)
    }

    fn tick(&mut self) -> Result<Option<u64>, StoreError> {
        Ok(self.wal()?.tick()?)
    }

    fn close(&mut self) {
        if let Some(wal) = self.wal.take() {
            let _ = wal.close();
        }
    }
}

impl Drop for RecoverableStore {
    fn drop(&mut self) {
        self.close();
    }
}
