use std::collections::HashMap;
use std::io::{self, ErrorKind, Read};
use std::net::{TcpListener, TcpStream};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, LazyLock, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::frame::{Frame, FrameKind, MAX_FRAME_LEN};
use super::kinds::Endpoint;
use super::{codes, Fault};
use crate::storage::{deserialize, serialize, Canonical, CanonicalValue};

const POLL: Duration = Duration::from_millis(50);
const STALL_LIMIT: Duration = Duration::from_secs(10);

/// Server-side request handler.
pub trait Dispatcher: Send + Sync + 'static {
    fn dispatch(&self, method: &str, args: &CanonicalValue) -> Result<CanonicalValue, Fault>;

    /// Whether `method` runs under the server-wide execution lock. Methods
    /// that only read guarded state, such as `ping`, may bypass it.
    fn exclusive(&self, method: &str) -> bool {
        method != "ping"
    }
}

pub(crate) struct ServerCore {
    dispatcher: Arc<dyn Dispatcher>,
    exec: Mutex<()>,
    stopping: Arc<AtomicBool>,
    in_flight: AtomicUsize,
}

impl ServerCore {
    /// Handles one encoded request. `None` means the connection should be
    /// dropped without a reply.
    pub(crate) fn handle_bytes(&self, bytes: &[u8]) -> Option<Vec<u8>> {
        if self.stopping.load(Ordering::SeqCst) {
            return None;
        }
        let request = Frame::decode(bytes).ok().filter(|f| f.kind == FrameKind::Request)?;
        self.in_flight.fetch_add(1, Ordering::SeqCst);
        let reply = self.handle(request);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        Some(reply.encode())
    }

    fn handle(&self, request: Frame) -> Frame {
        let result = match deserialize(&request.payload) {
            Err(e) => Err(Fault::bad_request(format!("undecodable arguments: {e}"))),
            Ok(args) => {
                let run = || self.dispatcher.dispatch(&request.method, &args);
                let outcome = if self.dispatcher.exclusive(&request.method) {
                    let _guard = self.exec.lock().unwrap_or_else(|p| p.into_inner());
                    catch_unwind(AssertUnwindSafe(run))
                } else {
                    catch_unwind(AssertUnwindSafe(run))
                };
                outcome.unwrap_or_else(|_| Err(Fault::new(codes::INTERNAL, format!("handler for `{}` panicked", request.method))))
            }
        };
        let (kind, payload) = match result.and_then(|v| {
            serialize(&v).map_err(|e| Fault::new(codes::INTERNAL, format!("reply not encodable: {e}")))
        }) {
            Ok(p) => (FrameKind::Reply, p),
            Err(f) => (FrameKind::Fault, serialize(&f.to_canonical()).expect("fault has no floats")),
        };
        Frame { kind, request_id: request.request_id, method: request.method, payload }
    }
}

static LOOPBACK: LazyLock<Mutex<HashMap<String, Arc<ServerCore>>>> = LazyLock::new(Default::default);

pub(crate) fn loopback_lookup(name: &str) -> Option<Arc<ServerCore>> {
    LOOPBACK.lock().unwrap().get(name).cloned()
}

/// A running server. Dropping it stops the server gracefully.
pub struct ServerHandle {
    endpoint: Endpoint,
    core: Arc<ServerCore>,
    accept: Option<JoinHandle<()>>,
    connections: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

impl ServerHandle {
    /// The bound endpoint; for TCP port 0 this carries the assigned port.
    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// A flag that, once set, makes the server stop accepting work. Handlers
    /// can hold it to implement a remote shutdown.
    pub fn stop_signal(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.core.stopping)
    }

    pub fn is_stopping(&self) -> bool {
        self.core.stopping.load(Ordering::SeqCst)
    }

    /// Blocks until the stop signal is raised, then finishes in-flight work.
    pub fn wait(mut self) {
        while !self.is_stopping() {
            thread::sleep(POLL);
        }
        self.shutdown();
    }

    /// Stops accepting requests and waits for in-flight ones to complete.
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.core.stopping.store(true, Ordering::SeqCst);
        if let Endpoint::Loop(name) = &self.endpoint {
            let mut map = LOOPBACK.lock().unwrap();
            if map.get(name).is_some_and(|c| Arc::ptr_eq(c, &self.core)) {
                map.remove(name);
            }
        }
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
        let handles: Vec<_> = std::mem::take(&mut *self.connections.lock().unwrap());
        for h in handles {
            let _ = h.join();
        }
        while self.core.in_flight.load(Ordering::SeqCst) > 0 {
            thread::sleep(Duration::from_millis(1));
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Starts serving `dispatcher` at `endpoint`. Each TCP connection gets its
/// own thread; requests run one at a time unless the dispatcher exempts them.
pub fn serve(endpoint: &Endpoint, dispatcher: Arc<dyn Dispatcher>) -> io::Result<ServerHandle> {
    let core = Arc::new(ServerCore {
        dispatcher,
        exec: Mutex::new(()),
        stopping: Arc::new(AtomicBool::new(false)),
        in_flight: AtomicUsize::new(0),
    });
    let connections = Arc::new(Mutex::new(Vec::new()));
    match endpoint {
        Endpoint::Loop(name) => {
            let mut map = LOOPBACK.lock().unwrap();
            if map.contains_key(name) {
                return Err(io::Error::new(ErrorKind::AddrInUse, format!("{endpoint} is already bound")));
            }
            map.insert(name.clone(), Arc::clone(&core));
            Ok(ServerHandle { endpoint: endpoint.clone(), core, accept: None, connections })
        }
        Endpoint::Tcp { host, port } => {
            let listener = TcpListener::bind((host.as_str(), *port))?;
            let bound = Endpoint::tcp(host.clone(), listener.local_addr()?.port());
            listener.set_nonblocking(true)?;
            let accept = {
                let core = Arc::clone(&core);
                let connections = Arc::clone(&connections);
                thread::Builder::new()
                    .name(format!("accept-{}", bound.authority()))
                    .spawn(move || accept_loop(listener, core, connections))?
            };
            Ok(ServerHandle { endpoint: bound, core, accept: Some(accept), connections })
        }
    }
}

fn accept_loop(listener: TcpListener, core: Arc<ServerCore>, connections: Arc<Mutex<Vec<JoinHandle<()>>>>) {
    while !core.stopping.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let core = Arc::clone(&core);
                let spawned = thread::Builder::new().name("conn".into()).spawn(move || serve_connection(stream, core));
                if let Ok(h) = spawned {
                    let mut list = connections.lock().unwrap();
                    list.retain(|h| !h.is_finished());
                    list.push(h);
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
            Err(_) => thread::sleep(POLL),
        }
    }
}

/// Fills `buf`, polling the stop flag while the stream is idle. Returns
/// `Ok(false)` on a clean end before the first byte.
fn fill(stream: &mut TcpStream, buf: &mut [u8], stopping: &AtomicBool, at_boundary: bool) -> io::Result<bool> {
    let mut got = 0;
    let mut last_progress = Instant::now();
    while got < buf.len() {
        match stream.read(&mut buf[got..]) {
            Ok(0) if got == 0 && at_boundary => return Ok(false),
            Ok(0) => return Err(ErrorKind::UnexpectedEof.into()),
            Ok(n) => {
                got += n;
                last_progress = Instant::now();
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if got == 0 && at_boundary {
                    if stopping.load(Ordering::SeqCst) {
                        return Ok(false);
                    }
                } else if last_progress.elapsed() > STALL_LIMIT {
                    return Err(ErrorKind::TimedOut.into());
                }
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

fn serve_connection(mut stream: TcpStream, core: Arc<ServerCore>) {
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_nodelay(true);
    if stream.set_read_timeout(Some(POLL)).is_err() {
        return;
    }
    loop {
        let mut len = [0u8; 4];
        match fill(&mut stream, &mut len, &core.stopping, true) {
            Ok(true) => {}
            _ => return,
        }
        let len = u32::from_be_bytes(len) as usize;
        if !(4..=MAX_FRAME_LEN).contains(&len) {
            return;
        }
        let mut body = vec![0u8; len];
        if !matches!(fill(&mut stream, &mut body[..4], &core.stopping, false), Ok(true)) || body[..4] != super::MAGIC {
            return;
        }
        if !matches!(fill(&mut stream, &mut body[4..], &core.stopping, false), Ok(true)) {
            return;
        }
        let Some(reply) = core.handle_bytes(&body) else { return };
        let mut out = Vec::with_capacity(4 + reply.len());
        out.extend_from_slice(&(reply.len() as u32).to_be_bytes());
        out.extend_from_slice(&reply);
        if io::Write::write_all(&mut stream, &out).is_err() {
            return;
        }
    }
}
