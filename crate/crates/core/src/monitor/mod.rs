//! Process supervision: heartbeats, restarts with backoff, backup
//! provisioning and failover bookkeeping, plus the HTTP control plane.

mod http;
mod launcher;

pub use http::{router, serve_http, HttpServer, DEFAULT_PORT};
pub use launcher::{LaunchSpec, Launcher, ProcessLauncher, Supervised};

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::messaging::{call, Endpoint, Registry, ServiceKind};
use crate::replication::Mode;
use crate::services::methods;
use crate::storage::{CanonicalValue, Logger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Liveness {
    Up,
    Down,
    Restarting,
}

impl std::fmt::Display for Liveness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Liveness::Up => "UP",
            Liveness::Down => "DOWN",
            Liveness::Restarting => "RESTARTING",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalSummary {
    pub entries: u64,
    pub last_checkpoint_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceStatus {
    pub kind: String,
    pub endpoint: String,
    pub role: Mode,
    pub liveness: Liveness,
    /// Milliseconds since the Unix epoch.
    pub last_heartbeat: Option<i64>,
    pub restart_count: u32,
    pub wal: Option<WalSummary>,
    pub pid: Option<u32>,
    pub managed: bool,
}

/// One supervised instance as configured.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceSpec {
    pub kind: ServiceKind,
    pub endpoint: Endpoint,
    pub role: Mode,
}

#[derive(Debug, Clone)]
pub struct MonitorConfig {
    pub interval: Duration,
    pub backoff_base: Duration,
    pub backoff_max: Duration,
    /// Uptime after which a crash no longer counts as part of a crash loop.
    pub backoff_reset: Duration,
    /// How long a launched instance may take to answer its first ping.
    pub startup_timeout: Duration,
    pub services: Vec<ServiceSpec>,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            interval: Duration::from_millis(1000),
            backoff_base: Duration::from_millis(1000),
            backoff_max: Duration::from_secs(30),
            backoff_reset: Duration::from_secs(10),
            startup_timeout: Duration::from_secs(10),
            services: Vec::new(),
        }
    }
}

impl MonitorConfig {
    /// Every primary and configured backup endpoint in `registry`.
    pub fn with_registry(mut self, registry: &Registry) -> Self {
        self.services = ServiceKind::ALL
            .iter()
            .flat_map(|&kind| {
                registry.endpoints(kind).into_iter().enumerate().take(2).map(move |(i, endpoint)| ServiceSpec {
                    kind,
                    endpoint,
                    role: if i == 0 { Mode::Primary } else { Mode::Backup },
                })
            })
            .collect();
        self
    }

    fn backoff(&self, streak: u32) -> Duration {
        let factor = 1u32 << streak.saturating_sub(1).min(16);
        self.backoff_base.saturating_mul(factor).min(self.backoff_max)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ControlError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
}

struct Entry {
    spec: ServiceSpec,
    status: ServiceStatus,
    child: Option<Box<dyn Supervised>>,
    /// Stopped by an operator: not restarted automatically.
    held: bool,
    misses: u32,
    restart_at: Option<Instant>,
    launched_at: Option<Instant>,
    up_since: Option<Instant>,
    streak: u32,
}

struct Heartbeat {
    mode: Mode,
    pid: Option<u32>,
    wal: Option<WalSummary>,
}

pub struct Monitor {
    cfg: MonitorConfig,
    launcher: Option<Arc<dyn Launcher>>,
    table: Mutex<Vec<Entry>>,
    events: broadcast::Sender<ServiceStatus>,
    log: Logger,
    stop: AtomicBool,
    wake: (Mutex<bool>, Condvar),
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn empty() -> CanonicalValue {
    CanonicalValue::map().build()
}

fn now_ms() -> i64 {
    chrono::Utc::now().timestamp_millis()
}

fn ping(endpoint: &Endpoint, kind: ServiceKind, timeout: Duration) -> Option<Heartbeat> {
    let reply = call(endpoint, methods::PING, &empty(), timeout).ok()?;
    if reply.field("kind").ok()?.as_u64().ok()? != u64::from(kind.id()) {
        return None;
    }
    let num = |k: &str| reply.opt_field(k).ok().flatten().and_then(|v| v.as_u64().ok());
    let wal = num("wal_entries").map(|entries| WalSummary { entries, last_checkpoint_id: num("last_checkpoint_id").unwrap_or(0) });
    Some(Heartbeat {
        mode: reply.field("mode").ok()?.as_str().ok()?.parse().ok()?,
        pid: num("pid").map(|p| p as u32),
        wal,
    })
}

fn matches(kind: ServiceKind, endpoint: &str, spec: &ServiceSpec) -> bool {
    spec.kind == kind && (spec.endpoint.authority() == endpoint || spec.endpoint.to_string() == endpoint)
}

impl Monitor {
    pub fn new(cfg: MonitorConfig, launcher: Option<Arc<dyn Launcher>>, log: Logger) -> Arc<Monitor> {
        let managed = launcher.is_some();
        let table = cfg
            .services
            .iter()
            .map(|spec| Entry {
                status: ServiceStatus {
                    kind: spec.kind.key().to_owned(),
                    endpoint: spec.endpoint.authority(),
                    role: spec.role,
                    liveness: Liveness::Down,
                    last_heartbeat: None,
                    restart_count: 0,
                    wal: None,
                    pid: None,
                    managed,
                },
                spec: spec.clone(),
                child: None,
                held: false,
                misses: 0,
                restart_at: None,
                launched_at: None,
                up_since: None,
                streak: 0,
            })
            .collect();
        let (events, _) = broadcast::channel(1024);
        Arc::new(Monitor {
            cfg,
            launcher,
            table: Mutex::new(table),
            events,
            log,
            stop: AtomicBool::new(false),
            wake: (Mutex::new(false), Condvar::new()),
        })
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.cfg
    }

    pub fn logger(&self) -> &Logger {
        &self.log
    }

    pub fn statuses(&self) -> Vec<ServiceStatus> {
        lock(&self.table).iter().map(|e| e.status.clone()).collect()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ServiceStatus> {
        self.events.subscribe()
    }

    fn ping_timeout(&self) -> Duration {
        self.cfg.interval.min(Duration::from_secs(1))
    }

    /// Records a status change, logs it, and publishes it on the event stream.
    fn set(&self, e: &mut Entry, liveness: Liveness, role: Mode) {
        if e.status.liveness == liveness && e.status.role == role {
            return;
        }
        e.status.liveness = liveness;
        e.status.role = role;
        self.log.info(format!(
            "status {} {} role={} liveness={} restarts={}",
            e.status.kind, e.status.endpoint, role, liveness, e.status.restart_count
        ));
        let _ = self.events.send(e.status.clone());
    }

    /// Starts every configured instance: primaries first, then backups
    /// pointed at the primary of their kind.
    pub fn spawn_all(&self) {
        let mut t = lock(&self.table);
        for pass in [Mode::Primary, Mode::Backup] {
            for i in 0..t.len() {
                if t[i].spec.role != pass {
                    continue;
                }
                if ping(&t[i].spec.endpoint, t[i].spec.kind, self.ping_timeout()).is_some() {
                    continue;
                }
                let primary = (pass == Mode::Backup)
                    .then(|| t.iter().find(|e| e.spec.kind == t[i].spec.kind && e.spec.role == Mode::Primary))
                    .flatten()
                    .map(|e| e.spec.endpoint.clone());
                self.launch(&mut t, i, pass, primary, false);
            }
        }
    }

    fn launch(&self, t: &mut [Entry], i: usize, role: Mode, primary: Option<Endpoint>, counted: bool) -> bool {
        let Some(launcher) = &self.launcher else { return false };
        let spec = LaunchSpec { kind: t[i].spec.kind, endpoint: t[i].spec.endpoint.clone(), role, primary };
        let e = &mut t[i];
        match launcher.launch(&spec) {
            Ok(child) => {
                e.status.pid = child.pid();
                e.child = Some(child);
                e.launched_at = Some(Instant::now());
                e.restart_at = None;
                e.misses = 0;
                if counted {
                    e.status.restart_count += 1;
                }
                let role = spec.role;
                self.set(e, Liveness::Restarting, role);
                true
            }
            Err(err) => {
                e.streak += 1;
                e.restart_at = Some(Instant::now() + self.cfg.backoff(e.streak));
                self.log.warn(format!("alert: cannot start {} at {}: {err}", spec.kind, spec.endpoint));
                false
            }
        }
    }

    /// Decides the role a restarted instance takes. `None` means wait: the
    /// instance was a backup and its kind's primary is itself being restored.
    fn restart_role(t: &[Entry], i: usize) -> Option<(Mode, Option<Endpoint>)> {
        let kind = t[i].spec.kind;
        let others = || t.iter().enumerate().filter(move |(j, e)| *j != i && e.spec.kind == kind).map(|(_, e)| e);
        if let Some(p) = others().find(|e| e.status.liveness == Liveness::Up && e.status.role == Mode::Primary) {
            return Some((Mode::Backup, Some(p.spec.endpoint.clone())));
        }
        let primary_pending = others().any(|e| e.status.role == Mode::Primary && e.status.managed && !e.held);
        if t[i].status.role == Mode::Backup && primary_pending {
            return None;
        }
        Some((Mode::Primary, None))
    }

    fn went_down(&self, e: &mut Entry, now: Instant) {
        if e.up_since.is_some_and(|t| now.duration_since(t) >= self.cfg.backoff_reset) {
            e.streak = 0;
        }
        e.up_since = None;
        e.streak += 1;
        e.restart_at = Some(now + self.cfg.backoff(e.streak));
        let role = e.status.role;
        self.set(e, Liveness::Down, role);
    }

    /// One heartbeat round over every configured endpoint.
    pub fn heartbeat(&self) {
        let targets: Vec<(Endpoint, ServiceKind)> =
            lock(&self.table).iter().map(|e| (e.spec.endpoint.clone(), e.spec.kind)).collect();
        let timeout = self.ping_timeout();
        let replies: Vec<Option<Heartbeat>> = thread::scope(|s| {
            let handles: Vec<_> = targets.iter().map(|(ep, k)| s.spawn(move || ping(ep, *k, timeout))).collect();
            handles.into_iter().map(|h| h.join().ok().flatten()).collect()
        });
        let now = Instant::now();
        let mut promote = Vec::new();
        {
            let mut t = lock(&self.table);
            for (e, reply) in t.iter_mut().zip(replies) {
                if e.child.as_mut().is_some_and(|c| c.exited()) {
                    e.child = None;
                }
                match reply {
                    Some(hb) => {
                        e.misses = 0;
                        e.status.last_heartbeat = Some(now_ms());
                        e.status.pid = hb.pid;
                        e.status.wal = hb.wal;
                        if e.status.liveness != Liveness::Up {
                            e.up_since = Some(now);
                            e.restart_at = None;
                        }
                        self.set(e, Liveness::Up, hb.mode);
                    }
                    None => {
                        e.misses += 1;
                        let stalled = e.status.liveness == Liveness::Restarting
                            && e.launched_at.is_some_and(|t| now.duration_since(t) > self.cfg.startup_timeout);
                        if (e.status.liveness == Liveness::Up && e.misses >= 2) || stalled {
                            self.went_down(e, now);
                        }
                    }
                }
            }
            // A kind whose primary is down but whose backup is up fails over.
            for kind in ServiceKind::ALL {
                let of_kind = || t.iter().filter(|e| e.spec.kind == kind);
                let primary_up = of_kind().any(|e| e.status.liveness == Liveness::Up && e.status.role == Mode::Primary);
                let primary_lost = of_kind().any(|e| e.status.liveness == Liveness::Down && e.status.role == Mode::Primary);
                if !primary_up && primary_lost {
                    if let Some(b) = of_kind().find(|e| e.status.liveness == Liveness::Up && e.status.role == Mode::Backup) {
                        promote.push((kind, b.spec.endpoint.clone()));
                    }
                }
            }
        }
        for (kind, endpoint) in promote {
            self.promote(kind, &endpoint);
        }
        self.restart_due();
    }

    fn promote(&self, kind: ServiceKind, endpoint: &Endpoint) -> bool {
        let ok = call(endpoint, methods::PROMOTE, &empty(), self.ping_timeout())
            .ok()
            .and_then(|r| r.field("mode").ok()?.as_str().ok().map(|m| m == Mode::Primary.as_str()))
            .unwrap_or(false);
        if ok {
            self.log.info(format!("failover {kind}: {} promoted to PRIMARY", endpoint.authority()));
            let mut t = lock(&self.table);
            if let Some(e) = t.iter_mut().find(|e| e.spec.kind == kind && e.spec.endpoint == *endpoint) {
                self.set(e, Liveness::Up, Mode::Primary);
            }
        }
        ok
    }

    fn restart_due(&self) {
        if self.launcher.is_none() {
            return;
        }
        let now = Instant::now();
        let due: Vec<usize> = lock(&self.table)
            .iter()
            .enumerate()
            .filter(|(_, e)| e.status.liveness == Liveness::Down && !e.held && e.restart_at.is_some_and(|t| t <= now))
            .map(|(i, _)| i)
            .collect();
        for i in due {
            let (endpoint, kind) = {
                let t = lock(&self.table);
                (t[i].spec.endpoint.clone(), t[i].spec.kind)
            };
            // Re-check right before acting; the next round will mark it UP.
            if ping(&endpoint, kind, self.ping_timeout()).is_some() {
                continue;
            }
            let mut t = lock(&self.table);
            if t[i].status.liveness != Liveness::Down || t[i].held {
                continue;
            }
            match Self::restart_role(&t, i) {
                Some((role, primary)) => {
                    self.launch(&mut t, i, role, primary, true);
                }
                None => t[i].restart_at = Some(now + self.cfg.interval),
            }
        }
    }

    /// Runs heartbeat rounds every interval until [`shutdown`](Self::shutdown).
    pub fn start(self: &Arc<Self>) -> JoinHandle<()> {
        let m = Arc::clone(self);
        thread::Builder::new()
            .name("heartbeat".into())
            .spawn(move || {
                while !m.stop.load(Ordering::SeqCst) {
                    m.heartbeat();
                    let (flag, cv) = &m.wake;
                    let mut woken = lock(flag);
                    if !*woken {
                        woken = cv.wait_timeout(woken, m.cfg.interval).unwrap_or_else(|e| e.into_inner()).0;
                    }
                    *woken = false;
                }
            })
            .expect("spawn heartbeat thread")
    }

    /// Runs the next heartbeat round now.
    pub fn wake(&self) {
        let (flag, cv) = &self.wake;
        *lock(flag) = true;
        cv.notify_all();
    }

    /// Stops the heartbeat loop and, if asked, every managed instance.
    pub fn shutdown(&self, stop_children: bool) {
        self.stop.store(true, Ordering::SeqCst);
        self.wake();
        if !stop_children {
            return;
        }
        let children: Vec<(Endpoint, Box<dyn Supervised>)> = lock(&self.table)
            .iter_mut()
            .filter_map(|e| Some((e.spec.endpoint.clone(), e.child.take()?)))
            .collect();
        for (endpoint, child) in children {
            let _ = call(&endpoint, methods::SHUTDOWN, &empty(), self.ping_timeout());
            reap(child, Duration::from_secs(3));
        }
    }

    /// A service-side event reported over HTTP.
    pub fn notify(&self, kind: &str, endpoint: &str, event: &str, detail: &str) {
        self.log.info(format!("event {kind} {endpoint} {event} {detail}"));
        self.wake();
    }

    fn find(&self, kind: &str, endpoint: &str) -> Result<(usize, ServiceKind, Endpoint), ControlError> {
        let kind: ServiceKind = kind.parse().map_err(|_| ControlError::NotFound(format!("unknown kind `{kind}`")))?;
        let t = lock(&self.table);
        t.iter()
            .position(|e| matches(kind, endpoint, &e.spec))
            .map(|i| (i, kind, t[i].spec.endpoint.clone()))
            .ok_or_else(|| ControlError::NotFound(format!("no {kind} instance at {endpoint}")))
    }

    pub fn kind_statuses(&self, kind: &str) -> Result<Vec<ServiceStatus>, ControlError> {
        let kind: ServiceKind = kind.parse().map_err(|_| ControlError::NotFound(format!("unknown kind `{kind}`")))?;
        Ok(lock(&self.table).iter().filter(|e| e.spec.kind == kind).map(|e| e.status.clone()).collect())
    }

    /// Fresh WAL statistics of every instance of `kind`.
    pub fn wal(&self, kind: &str) -> Result<Vec<serde_json::Value>, ControlError> {
        let kind: ServiceKind = kind.parse().map_err(|_| ControlError::NotFound(format!("unknown kind `{kind}`")))?;
        let endpoints: Vec<Endpoint> =
            lock(&self.table).iter().filter(|e| e.spec.kind == kind).map(|e| e.spec.endpoint.clone()).collect();
        Ok(endpoints
            .into_iter()
            .map(|ep| {
                let reply = call(&ep, methods::PING, &empty(), self.ping_timeout()).ok();
                let num = |k: &str| reply.as_ref()?.opt_field(k).ok().flatten()?.as_u64().ok();
                serde_json::json!({
                    "endpoint": ep.authority(),
                    "up": reply.is_some(),
                    "entries": num("wal_entries"),
                    "last_checkpoint_id": num("last_checkpoint_id"),
                    "last_committed": num("last_committed"),
                })
            })
            .collect())
    }

    fn halt(&self, i: usize, endpoint: &Endpoint) {
        let _ = call(endpoint, methods::SHUTDOWN, &empty(), self.ping_timeout());
        let child = lock(&self.table)[i].child.take();
        if let Some(c) = child {
            reap(c, Duration::from_secs(3));
        } else {
            let deadline = Instant::now() + Duration::from_secs(3);
            while Instant::now() < deadline && call(endpoint, methods::PING, &empty(), self.ping_timeout()).is_ok() {
                thread::sleep(Duration::from_millis(20));
            }
        }
        let mut t = lock(&self.table);
        let e = &mut t[i];
        e.misses = 2;
        e.up_since = None;
        e.restart_at = None;
        let role = e.status.role;
        self.set(e, Liveness::Down, role);
    }

    fn require_up(&self, kind: ServiceKind, endpoint: &Endpoint) -> Result<(), ControlError> {
        match ping(endpoint, kind, self.ping_timeout()) {
            Some(_) => Ok(()),
            None => Err(ControlError::Conflict(format!("{kind} at {} is not running", endpoint.authority()))),
        }
    }

    fn require_managed(&self) -> Result<(), ControlError> {
        match self.launcher {
            Some(_) => Ok(()),
            None => Err(ControlError::Conflict("this monitor does not start services".into())),
        }
    }

    pub fn stop_service(&self, kind: &str, endpoint: &str) -> Result<ServiceStatus, ControlError> {
        let (i, kind, ep) = self.find(kind, endpoint)?;
        self.require_up(kind, &ep)?;
        lock(&self.table)[i].held = true;
        self.halt(i, &ep);
        Ok(lock(&self.table)[i].status.clone())
    }

    pub fn start_service(&self, kind: &str, endpoint: &str) -> Result<ServiceStatus, ControlError> {
        let (i, kind, ep) = self.find(kind, endpoint)?;
        self.require_managed()?;
        if ping(&ep, kind, self.ping_timeout()).is_some() {
            return Err(ControlError::Conflict(format!("{kind} at {} is already running", ep.authority())));
        }
        let mut t = lock(&self.table);
        if t[i].status.liveness == Liveness::Restarting {
            return Err(ControlError::Conflict(format!("{kind} at {} is already starting", ep.authority())));
        }
        t[i].held = false;
        let (role, primary) = Self::restart_role(&t, i)
            .ok_or_else(|| ControlError::Conflict(format!("{kind} primary is being restored; retry shortly")))?;
        if !self.launch(&mut t, i, role, primary, false) {
            return Err(ControlError::Conflict(format!("cannot start {kind} at {}", ep.authority())));
        }
        Ok(t[i].status.clone())
    }

    pub fn restart_service(&self, kind: &str, endpoint: &str) -> Result<ServiceStatus, ControlError> {
        let (i, kind, ep) = self.find(kind, endpoint)?;
        self.require_managed()?;
        self.require_up(kind, &ep)?;
        lock(&self.table)[i].held = true;
        self.halt(i, &ep);
        let mut t = lock(&self.table);
        t[i].held = false;
        let (role, primary) = Self::restart_role(&t, i).unwrap_or((t[i].status.role, None));
        self.launch(&mut t, i, role, primary, true);
        Ok(t[i].status.clone())
    }

    /// Hands the primary role of `kind` to its live backup; the old primary
    /// comes back as the new backup when this monitor manages it.
    pub fn failover(&self, kind: &str) -> Result<Vec<ServiceStatus>, ControlError> {
        let kind_id: ServiceKind = kind.parse().map_err(|_| ControlError::NotFound(format!("unknown kind `{kind}`")))?;
        let entries: Vec<(usize, Endpoint)> = lock(&self.table)
            .iter()
            .enumerate()
            .filter(|(_, e)| e.spec.kind == kind_id)
            .map(|(i, e)| (i, e.spec.endpoint.clone()))
            .collect();
        let live: Vec<(usize, Endpoint, Mode)> = entries
            .into_iter()
            .filter_map(|(i, ep)| ping(&ep, kind_id, self.ping_timeout()).map(|hb| (i, ep, hb.mode)))
            .collect();
        let primary = live.iter().find(|l| l.2 == Mode::Primary).cloned();
        let backup = live.iter().find(|l| l.2 == Mode::Backup).cloned();
        let (Some((pi, pep, _)), Some((_, bep, _))) = (primary, backup) else {
            return Err(ControlError::Conflict(format!("{kind_id} needs a live primary and a live backup to fail over")));
        };
        lock(&self.table)[pi].held = true;
        self.halt(pi, &pep);
        if !self.promote(kind_id, &bep) {
            self.log.warn(format!("alert: failover {kind_id}: {} did not take over", bep.authority()));
        }
        let mut t = lock(&self.table);
        t[pi].held = false;
        if self.launcher.is_some() {
            self.launch(&mut t, pi, Mode::Backup, Some(bep), true);
        }
        drop(t);
        self.kind_statuses(kind)
    }
}

/// Waits up to `grace` for a child to exit, then kills it.
fn reap(mut child: Box<dyn Supervised>, grace: Duration) {
    let deadline = Instant::now() + grace;
    while Instant::now() < deadline {
        if child.exited() {
            return;
        }
        thread::sleep(Duration::from_millis(20));
    }
    child.kill();
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let cfg = MonitorConfig { backoff_max: Duration::from_secs(5), ..Default::default() };
        let secs: Vec<u64> = (1..=5).map(|n| cfg.backoff(n).as_secs()).collect();
        assert_eq!(secs, [1, 2, 4, 5, 5]);
    }

    #[test]
    fn registry_lists_backups_after_primaries() {
        let (reg, _) = crate::messaging::parse_hosts("classification.backup.port=5204\n");
        let cfg = MonitorConfig::default().with_registry(&reg);
        assert_eq!(cfg.services.len(), 7);
        let backups: Vec<_> = cfg.services.iter().filter(|s| s.role == Mode::Backup).collect();
        assert_eq!(backups.len(), 1);
        assert_eq!(backups[0].endpoint, Endpoint::tcp("localhost", 5204));
    }

    #[test]
    fn status_json_uses_snake_case_fields() {
        let s = ServiceStatus {
            kind: "classification".into(),
            endpoint: "localhost:5104".into(),
            role: Mode::Primary,
            liveness: Liveness::Restarting,
            last_heartbeat: None,
            restart_count: 2,
            wal: Some(WalSummary { entries: 3, last_checkpoint_id: 7 }),
            pid: None,
            managed: true,
        };
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["role"], "PRIMARY");
        assert_eq!(v["liveness"], "RESTARTING");
        assert_eq!(v["wal"]["last_checkpoint_id"], 7);
        assert_eq!(serde_json::from_value::<ServiceStatus>(v).unwrap(), s);
    }
}
