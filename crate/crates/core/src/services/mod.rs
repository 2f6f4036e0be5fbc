//! The six service kinds behind one node type: request decoding, the stage
//! logic each kind delegates to, object stores with and without write-ahead
//! logging, and the lifecycle of a served instance.

mod args;
mod node;
mod state;
mod store;

pub use node::{start, Node, NodeConfig, RunningService, Timing};
pub use state::{training_set_file, database_file, ServiceState, Update, UpdateOutcome};
pub use store::{BasicStore, ObjectStore, RecoverableStore, StoreError};

use thiserror::Error;

use crate::messaging::{codes, Fault, ServiceKind};
use crate::recognition::RecognitionError;
use crate::wal::WalError;

/// Methods every kind answers regardless of role.
pub mod methods {
    pub const LOAD: &str = "load";
    pub const PREPROCESS: &str = "preprocess";
    pub const EXTRACT: &str = "extractFeatures";
    pub const TRAIN: &str = "train";
    pub const CLASSIFY: &str = "classify";
    pub const RECOGNIZE: &str = "recognize";
    pub const IDENTIFY: &str = "identify";
    pub const STATS: &str = "stats";
    pub const WHO_HAS: &str = "whoHas";
    pub const TRANSFER: &str = "transfer";
    pub const REPLICATE: &str = "replicate";
    pub const ATTACH: &str = "attach";
    pub const PROMOTE: &str = "promote";
    pub const PING: &str = "ping";
    pub const SHUTDOWN: &str = "shutdown";
}

/// Whether instances of `kind` hold durable state.
pub fn is_stateful(kind: ServiceKind) -> bool {
    matches!(kind, ServiceKind::Classification | ServiceKind::SpeakerIdent)
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {endpoint}: {source}")]
    Bind {
        endpoint: String,
        #[source]
        source: std::io::Error,
    },
    #[error("recovery failed: {0}")]
    Recovery(#[from] WalError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<RecognitionError> for Fault {
    fn from(e: RecognitionError) -> Self {
        let code = match e {
            RecognitionError::Format(_) => codes::FORMAT,
            RecognitionError::EmptySample => codes::EMPTY_SAMPLE,
            RecognitionError::UnsupportedFormat(_) => codes::UNSUPPORTED_FORMAT,
            RecognitionError::Dimension(_) => codes::DIMENSION,
            RecognitionError::NotTrained(_) => codes::NOT_TRAINED,
            RecognitionError::Numerical(_) => codes::NUMERICAL,
            RecognitionError::InvalidParameter(_) => codes::INVALID_PARAMETER,
        };
        Fault::new(code, e.to_string())
    }
}

impl From<StoreError> for Fault {
    fn from(e: StoreError) -> Self {
        let code = match &e {
            StoreError::Wal(WalError::WrapAround | WalError::Unavailable(_)) => codes::UNAVAILABLE,
            StoreError::Wal(_) => codes::WAL,
            StoreError::Storage(_) => codes::INTERNAL,
        };
        Fault::new(code, e.to_string())
    }
}
