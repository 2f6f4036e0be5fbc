//! Canonical serialization, on-disk object dumps, the statistics database and
//! the timestamped file logger.

mod codec;
mod database;
mod dump;
pub(crate) mod handles;
mod logger;

pub use codec::{deserialize, serialize, Canonical, CanonicalValue, MapBuilder};
pub use database::{Database, SharedDatabase, SubjectStats};
pub use dump::{dump, encode_object, object_path, read_object_bytes, restore, restore_bytes, write_atomic, DATA_DIR};
pub use handles::open_handles;
pub use logger::{LogStream, Logger};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("encode error: {0}")]
    Encode(String),
    #[error("corrupt payload: {0}")]
    Corrupt(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl StorageError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            StorageError::NotFound(path.display().to_string())
        } else {
            StorageError::Io { path: path.display().to_string(), source }
        }
    }
}
