use std::io::ErrorKind;
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::frame::{Frame, FrameError, FrameKind};
use super::kinds::{Endpoint, ServiceKind};
use super::registry::Registry;
use super::server::loopback_lookup;
use super::{codes, Fault};
use crate::storage::{deserialize, serialize, Canonical, CanonicalValue};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_millis(5000);

static NEXT_REQUEST_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CallError {
    /// The peer could not be reached or did not answer in time.
    #[error("unavailable: {0}")]
    Unavailable(String),
    /// The peer answered with a fault.
    #[error("{0}")]
    Fault(Fault),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl CallError {
    pub fn code(&self) -> &str {
        match self {
            CallError::Unavailable(_) => codes::UNAVAILABLE,
            CallError::Fault(f) => &f.code,
            CallError::Protocol(_) => codes::INTERNAL,
        }
    }

    pub fn into_fault(self) -> Fault {
        match self {
            CallError::Fault(f) => f,
            CallError::Unavailable(m) => Fault::new(codes::UNAVAILABLE, m),
            CallError::Protocol(m) => Fault::new(codes::INTERNAL, m),
        }
    }

    fn fails_over(&self) -> bool {
        match self {
            CallError::Unavailable(_) => true,
            CallError::Fault(f) => f.code == codes::NOT_PRIMARY || f.code == codes::UNAVAILABLE,
            CallError::Protocol(_) => false,
        }
    }
}

fn io_unavailable(endpoint: &Endpoint, e: impl std::fmt::Display) -> CallError {
    CallError::Unavailable(format!("{endpoint}: {e}"))
}

/// Sends one request and waits for its reply, giving up after `timeout`.
pub fn call(endpoint: &Endpoint, method: &str, args: &CanonicalValue, timeout: Duration) -> Result<CanonicalValue, CallError> {
    let payload = serialize(args).map_err(|e| CallError::Protocol(e.to_string()))?;
    let request = Frame::request(NEXT_REQUEST_ID.fetch_add(1, Ordering::Relaxed), method, payload);
    let reply = match endpoint {
        Endpoint::Tcp { host, port } => call_tcp(endpoint, host, *port, &request, timeout)?,
        Endpoint::Loop(name) => {
            let core = loopback_lookup(name).ok_or_else(|| io_unavailable(endpoint, "no such loopback endpoint"))?;
            let bytes = core
                .handle_bytes(&request.encode())
                .ok_or_else(|| io_unavailable(endpoint, "connection closed"))?;
            Frame::decode(&bytes).map_err(|e| CallError::Protocol(e.to_string()))?
        }
    };
    if reply.request_id != request.request_id {
        return Err(CallError::Protocol(format!(
            "reply id {} does not match request {}",
            reply.request_id, request.request_id
        )));
    }
    let value = deserialize(&reply.payload).map_err(|e| CallError::Protocol(e.to_string()))?;
    match reply.kind {
        FrameKind::Reply => Ok(value),
        FrameKind::Fault => Err(CallError::Fault(
            Fault::from_canonical(&value).map_err(|e| CallError::Protocol(e.to_string()))?,
        )),
        FrameKind::Request => Err(CallError::Protocol("peer sent a request frame as reply".into())),
    }
}

fn call_tcp(endpoint: &Endpoint, host: &str, port: u16, request: &Frame, timeout: Duration) -> Result<Frame, CallError> {
    let deadline = Instant::now() + timeout;
    let addrs: Vec<_> = (host, port).to_socket_addrs().map_err(|e| io_unavailable(endpoint, e))?.collect();
    let mut last_err = None;
    let mut stream = None;
    for addr in addrs {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            break;
        }
        match TcpStream::connect_timeout(&addr, left) {
            Ok(s) => {
                stream = Some(s);
                break;
            }
            Err(e) => last_err = Some(e),
        }
    }
    let mut stream = stream.ok_or_else(|| match last_err {
        Some(e) => io_unavailable(endpoint, e),
        None => io_unavailable(endpoint, "timed out"),
    })?;
    let _ = stream.set_nodelay(true);
    let left = deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(1));
    stream.set_write_timeout(Some(left)).map_err(|e| io_unavailable(endpoint, e))?;
    request.write_to(&mut stream).map_err(|e| io_unavailable(endpoint, e))?;
    let left = deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(1));
    stream.set_read_timeout(Some(left)).map_err(|e| io_unavailable(endpoint, e))?;
    Frame::read_from(&mut stream).map_err(|e| match e {
        FrameError::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
            io_unavailable(endpoint, format!("no reply within {} ms", timeout.as_millis()))
        }
        FrameError::Io(io) => io_unavailable(endpoint, io),
        other => CallError::Protocol(other.to_string()),
    })
}

/// Tries each registered endpoint of `kind` in order, moving on when one is
/// unreachable or answers that it is not the primary.
pub fn call_with_failover(
    registry: &Registry,
    kind: ServiceKind,
    method: &str,
    args: &CanonicalValue,
    timeout: Duration,
) -> Result<CanonicalValue, CallError> {
    let mut reasons = Vec::new();
    for endpoint in registry.endpoints(kind) {
        match call(&endpoint, method, args, timeout) {
            Err(e) if e.fails_over() => reasons.push(e.to_string()),
            other => return other,
        }
    }
    Err(CallError::Unavailable(format!("{kind} unavailable: {}", reasons.join("; "))))
}
