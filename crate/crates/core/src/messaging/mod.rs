//! The framed request/reply protocol, its TCP and in-process transports, and
//! the host registry.

mod client;
mod frame;
mod kinds;
mod registry;
mod server;

pub use client::{call, call_with_failover, CallError, DEFAULT_TIMEOUT};
pub use frame::{Frame, FrameError, FrameKind, MAGIC, MAX_FRAME_LEN, VERSION};
pub use kinds::{Endpoint, RemoteObjectReference, ServiceKind};
pub use registry::{load_hosts, parse_hosts, Registry, BASE_PORT, HOSTS_FILE};
pub use server::{serve, Dispatcher, ServerHandle};

use crate::storage::{Canonical, CanonicalValue, StorageError};

/// Error codes carried in fault frames.
pub mod codes {
    pub const FORMAT: &str = "FormatError";
    pub const EMPTY_SAMPLE: &str = "EmptySampleError";
    pub const UNSUPPORTED_FORMAT: &str = "UnsupportedFormatError";
    pub const DIMENSION: &str = "DimensionError";
    pub const NOT_TRAINED: &str = "NotTrainedError";
    pub const NUMERICAL: &str = "NumericalError";
    pub const INVALID_PARAMETER: &str = "InvalidParameterError";
    pub const BAD_REQUEST: &str = "BadRequest";
    pub const UNKNOWN_METHOD: &str = "UnknownMethod";
    pub const UNAVAILABLE: &str = "Unavailable";
    pub const NOT_PRIMARY: &str = "NotPrimary";
    pub const STATE: &str = "StateError";
    pub const CONFLICT: &str = "VersionConflict";
    pub const WAL: &str = "WalError";
    pub const INTERNAL: &str = "Internal";
}

/// An error reply: a stable code plus a human-readable message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fault {
    pub code: String,
    pub message: String,
}

impl Fault {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Fault { code: code.to_owned(), message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Fault::new(codes::BAD_REQUEST, message)
    }
}

impl std::fmt::Display for Fault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for Fault {}

impl From<StorageError> for Fault {
    fn from(e: StorageError) -> Self {
        Fault::bad_request(e.to_string())
    }
}

impl Canonical for Fault {
    fn to_canonical(&self) -> CanonicalValue {
        CanonicalValue::map().with("code", self.code.as_str()).with("message", self.message.as_str()).build()
    }

    fn from_canonical(v: &CanonicalValue) -> Result<Self, StorageError> {
        Ok(Fault { code: v.field("code")?.as_str()?.to_owned(), message: v.field("message")?.as_str()?.to_owned() })
    }
}
