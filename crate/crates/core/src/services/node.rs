use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, OnceLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::args::Args;
use super::state::{training_set_file, ServiceState, Update};
use super::store::{BasicStore, ObjectStore, RecoverableStore};
use super::{is_stateful, methods, ServiceError};
use crate::messaging::{
    call, call_with_failover, codes, serve, CallError, Dispatcher, Endpoint, Fault, Registry, ServerHandle, ServiceKind,
    DEFAULT_TIMEOUT,
};
use crate::recognition::{
    extract_features, load_sample, preprocess, FeatureMethod, FeatureVector, PipelineConfig, PreprocessMethod,
    RecognitionError, ResultSet, Sample,
};
use crate::replication::{
    fetch_training_set, objects_from_canonical, objects_to_canonical, who_has, Mode, ReplicaAck, ReplicaMessage,
    ReplicaPayload, ReplicaState, Upstream,
};
use crate::storage::{Canonical, CanonicalValue, Database, Logger};
use crate::wal::{self, log_file_name, now_ms, WalOptions, WriteAheadLog};

const TICK: Duration = Duration::from_millis(20);

/// Timeouts and periods of one service instance.
#[derive(Debug, Clone)]
pub struct Timing {
    /// Deadline for calls to other services.
    pub call_timeout: Duration,
    /// How long a backup tolerates silence from its primary before pinging.
    pub idle: Duration,
    /// How long a backup waits for the primary's ping reply.
    pub ping: Duration,
    /// How long gossip waits for a peer holding a configuration.
    pub gossip: Duration,
    pub checkpoint_interval: Duration,
    pub wal_max_entries: usize,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            call_timeout: DEFAULT_TIMEOUT,
            idle: Duration::from_millis(3000),
            ping: Duration::from_millis(1000),
            gossip: Duration::from_millis(500),
            checkpoint_interval: wal::DEFAULT_CHECKPOINT_INTERVAL,
            wal_max_entries: wal::DEFAULT_MAX_ENTRIES,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub kind: ServiceKind,
    pub mode: Mode,
    pub endpoint: Endpoint,
    pub registry: Registry,
    pub data_dir: PathBuf,
    /// Wrap object writes in write-ahead-log transactions.
    pub recoverable: bool,
    pub timing: Timing,
    /// Base URL of the monitor's HTTP API, for event notifications.
    pub monitor: Option<String>,
    /// For a backup: the primary to attach to. Defaults to the first other
    /// registry endpoint of the same kind.
    pub primary: Option<Endpoint>,
    pub console_log: bool,
}

impl NodeConfig {
    pub fn new(kind: ServiceKind, endpoint: Endpoint, data_dir: impl Into<PathBuf>) -> Self {
        NodeConfig {
            kind,
            mode: Mode::Primary,
            endpoint,
            registry: Registry::default(),
            data_dir: data_dir.into(),
            recoverable: is_stateful(kind),
            timing: Timing::default(),
            monitor: None,
            primary: None,
            console_log: false,
        }
    }
}

/// One service instance: the request handler for every kind plus its
/// replication role.
pub struct Node {
    cfg: NodeConfig,
    incarnation: u64,
    state: Option<Mutex<ServiceState>>,
    repl: Mutex<ReplicaState>,
    log: Logger,
    handled: AtomicU64,
    self_endpoint: OnceLock<Endpoint>,
    stop: OnceLock<Arc<AtomicBool>>,
    last_attach: Mutex<Option<Instant>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

fn not_primary(kind: ServiceKind) -> Fault {
    Fault::new(codes::NOT_PRIMARY, format!("this {kind} instance is a backup"))
}

fn empty() -> CanonicalValue {
    CanonicalValue::map().build()
}

impl Node {
    pub fn kind(&self) -> ServiceKind {
        self.cfg.kind
    }

    pub fn mode(&self) -> Mode {
        lock(&self.repl).mode
    }

    pub fn incarnation(&self) -> u64 {
        self.incarnation
    }

    pub fn endpoint(&self) -> Endpoint {
        self.self_endpoint.get().cloned().unwrap_or_else(|| self.cfg.endpoint.clone())
    }

    pub fn logger(&self) -> &Logger {
        &self.log
    }

    /// Business requests handled so far.
    pub fn handled(&self) -> u64 {
        self.handled.load(Ordering::Relaxed)
    }

    /// Raw bytes of one stored object, if this kind keeps state.
    pub fn object_bytes(&self, name: &str) -> Option<Vec<u8>> {
        let state = self.state.as_ref()?;
        lock(state).store().get(name).ok().flatten()
    }

    pub fn local_trains(&self) -> u64 {
        self.state.as_ref().map_or(0, |s| lock(s).local_trains)
    }

    fn notify(&self, event: &str, detail: String) {
        let Some(base) = self.cfg.monitor.clone() else { return };
        let body = serde_json::json!({
            "kind": self.cfg.kind.id(),
            "endpoint": self.endpoint().authority(),
            "event": event,
            "detail": detail,
        })
        .to_string();
        thread::spawn(move || {
            let url = format!("{}/notify", base.trim_end_matches('/'));
            let _ = ureq::post(&url).header("content-type", "application/json").send(body);
        });
    }

    fn upstream(&self, kind: ServiceKind, method: &str, args: &CanonicalValue) -> Result<CanonicalValue, Fault> {
        call_with_failover(&self.cfg.registry, kind, method, args, self.cfg.timing.call_timeout).map_err(|e| match e {
            CallError::Fault(f) => f,
            CallError::Unavailable(m) => Fault::new(codes::UNAVAILABLE, format!("{kind} stage unavailable: {m}")),
            CallError::Protocol(m) => Fault::new(codes::INTERNAL, format!("{kind} stage: {m}")),
        })
    }

    fn state(&self) -> Result<MutexGuard<'_, ServiceState>, Fault> {
        self.state
            .as_ref()
            .map(lock)
            .ok_or_else(|| Fault::new(codes::INTERNAL, format!("{} keeps no state", self.cfg.kind)))
    }

    fn ping_reply(&self) -> CanonicalValue {
        let r = lock(&self.repl).clone();
        let mut b = CanonicalValue::map()
            .with("kind", i64::from(self.cfg.kind.id()))
            .with("mode", r.mode.as_str())
            .with("seq", r.seq as i64)
            .with("pid", i64::from(std::process::id()))
            .with("incarnation", self.incarnation as i64)
            .with("endpoint", self.endpoint().to_string())
            .with("handled", self.handled() as i64)
            .with_opt("backup", r.backup.map(|e| e.to_string()))
            .with_opt("upstream", r.upstream.map(|u| u.endpoint.to_string()));
        if let Some(state) = &self.state {
            let st = lock(state);
            b = b.with("local_trains", st.local_trains as i64).with("transfers", st.transfers as i64);
            if let Some(w) = st.store().wal_stats() {
                b = b
                    .with("wal_entries", w.entries as i64)
                    .with("last_checkpoint_id", w.last_checkpoint_id as i64)
                    .with("last_committed", w.last_committed as i64);
            }
        }
        b.build()
    }

    // ---- replication -------------------------------------------------

    /// Applies a state change on the primary: forward to the backup, apply
    /// locally, then reconcile with the backup's answer.
    fn replicated(&self, update: Update) -> Result<CanonicalValue, Fault> {
        let (seq, backup) = {
            let mut r = lock(&self.repl);
            if r.mode != Mode::Primary {
                return Err(not_primary(self.cfg.kind));
            }
            r.seq += 1;
            (r.seq, r.backup.clone())
        };
        let forward = backup.clone().map(|ep| {
            let msg = ReplicaMessage {
                from: self.endpoint(),
                incarnation: self.incarnation,
                seq,
                payload: ReplicaPayload::Update(update.clone()),
            }
            .to_canonical();
            let timeout = self.cfg.timing.call_timeout;
            thread::spawn(move || call(&ep, methods::REPLICATE, &msg, timeout))
        });
        let local = self.state()?.apply(&update);
        if let (Some(ep), Some(h)) = (backup, forward) {
            let reply = h.join().unwrap_or_else(|_| Err(CallError::Protocol("forwarder panicked".into())));
            match reply.map(|v| ReplicaAck::parse(&v)) {
                Ok(Ok(ack)) if ack.in_sync() && local.is_ok() => {}
                Ok(_) => self.resync(&ep),
                Err(e) => self.drop_backup(&ep, &e.to_string()),
            }
        }
        local.map(|o| o.to_canonical())
    }

    /// Replaces the backup's state with a full snapshot of ours.
    fn resync(&self, ep: &Endpoint) {
        let objects = match self.state.as_ref().map(|s| lock(s).snapshot()) {
            Some(Ok(o)) => o,
            Some(Err(e)) => return self.log.warn(format!("cannot snapshot for {ep}: {e}")),
            None => BTreeMap::new(),
        };
        let seq = lock(&self.repl).seq;
        let msg = ReplicaMessage {
            from: self.endpoint(),
            incarnation: self.incarnation,
            seq,
            payload: ReplicaPayload::Snapshot(objects),
        };
        match call(ep, methods::REPLICATE, &msg.to_canonical(), self.cfg.timing.call_timeout) {
            Ok(v) if ReplicaAck::parse(&v).is_ok_and(|a| a.in_sync()) => self.log.info(format!("resynced backup {ep} at seq {seq}")),
            Ok(v) => self.drop_backup(ep, &format!("snapshot refused: {v:?}")),
            Err(e) => self.drop_backup(ep, &e.to_string()),
        }
    }

    fn drop_backup(&self, ep: &Endpoint, why: &str) {
        let mut r = lock(&self.repl);
        if r.backup.as_ref() == Some(ep) {
            r.backup = None;
            drop(r);
            self.log.warn(format!("backup {ep} dropped: {why}"));
            self.notify("backup_lost", format!("{ep}: {why}"));
        }
    }

    fn on_replicate(&self, args: &CanonicalValue) -> Result<CanonicalValue, Fault> {
        let msg = ReplicaMessage::from_canonical(args)?;
        let mut r = lock(&self.repl);
        if r.mode != Mode::Backup {
            return Err(Fault::new(codes::STATE, format!("{} instance is not a backup", self.cfg.kind)));
        }
        r.last_traffic = Instant::now();
        let follows = r.upstream.as_ref().is_some_and(|u| u.incarnation == msg.incarnation);
        let ack = match &msg.payload {
            ReplicaPayload::Snapshot(objects) => {
                let installed = match &self.state {
                    Some(s) => lock(s).install_snapshot(objects),
                    None => Ok(()),
                };
                match installed {
                    Ok(()) => {
                        r.seq = msg.seq;
                        r.upstream = Some(Upstream { endpoint: msg.from.clone(), incarnation: msg.incarnation });
                        ReplicaAck::Applied
                    }
                    Err(e) => {
                        self.log.warn(format!("snapshot from {} failed: {e}", msg.from));
                        ReplicaAck::Failed
                    }
                }
            }
            ReplicaPayload::Update(_) if !follows => ReplicaAck::Gap,
            ReplicaPayload::Update(_) if msg.seq <= r.seq => ReplicaAck::Duplicate,
            ReplicaPayload::Update(_) if msg.seq > r.seq + 1 => ReplicaAck::Gap,
            ReplicaPayload::Update(u) => {
                r.seq = msg.seq;
                match self.state()?.apply(u) {
                    Ok(_) => ReplicaAck::Applied,
                    Err(f) => {
                        self.log.warn(format!("replicated update {} failed: {f}", msg.seq));
                        ReplicaAck::Failed
                    }
                }
            }
        };
        Ok(ack.to_canonical())
    }

    fn on_attach(&self, args: &CanonicalValue) -> Result<CanonicalValue, Fault> {
        let ep: Endpoint = Args(args).str("endpoint")?.parse().map_err(Fault::bad_request)?;
        let mut r = lock(&self.repl);
        if r.mode != Mode::Primary {
            return Err(not_primary(self.cfg.kind));
        }
        let objects = match &self.state {
            Some(s) => lock(s).snapshot()?,
            None => BTreeMap::new(),
        };
        r.backup = Some(ep.clone());
        let seq = r.seq;
        drop(r);
        self.log.info(format!("backup {ep} attached at seq {seq}"));
        self.notify("backup_attached", ep.to_string());
        Ok(CanonicalValue::map()
            .with("seq", seq as i64)
            .with("incarnation", self.incarnation as i64)
            .with("snapshot", objects_to_canonical(&objects))
            .build())
    }

    fn primary_target(&self) -> Option<Endpoint> {
        let me = self.endpoint();
        self.cfg
            .primary
            .clone()
            .or_else(|| self.cfg.registry.endpoints(self.cfg.kind).into_iter().find(|e| *e != me))
    }

    fn try_attach(&self) {
        let Some(target) = self.primary_target() else { return };
        let args = CanonicalValue::map().with("endpoint", self.endpoint().to_string()).build();
        let Ok(reply) = call(&target, methods::ATTACH, &args, self.cfg.timing.call_timeout) else { return };
        let parsed = (|| -> Result<_, crate::storage::StorageError> {
            Ok((
                reply.field("seq")?.as_u64()?,
                reply.field("incarnation")?.as_u64()?,
                objects_from_canonical(reply.field("snapshot")?)?,
            ))
        })();
        let Ok((seq, incarnation, objects)) = parsed else {
            return self.log.warn(format!("malformed attach reply from {target}"));
        };
        let mut r = lock(&self.repl);
        if r.mode != Mode::Backup {
            return;
        }
        let newer = match &r.upstream {
            None => true,
            Some(u) => u.incarnation != incarnation || seq > r.seq,
        };
        if newer {
            if let Some(s) = &self.state {
                if let Err(e) = lock(s).install_snapshot(&objects) {
                    return self.log.warn(format!("attach snapshot from {target} failed: {e}"));
                }
            }
            r.seq = seq;
            r.upstream = Some(Upstream { endpoint: target.clone(), incarnation });
        }
        r.last_traffic = Instant::now();
        drop(r);
        self.log.info(format!("attached to primary {target} at seq {seq}"));
    }

    fn take_over(&self, why: &str) {
        let mut r = lock(&self.repl);
        if r.mode == Mode::Primary {
            return;
        }
        r.mode = Mode::Primary;
        r.upstream = None;
        r.backup = None;
        drop(r);
        self.log.warn(format!("switching to PRIMARY: {why}"));
        self.notify("takeover", why.to_owned());
    }

    /// Backup duties: attach when unattached, and check on a silent primary.
    fn watchdog(&self) {
        let upstream = {
            let r = lock(&self.repl);
            if r.mode != Mode::Backup {
                return;
            }
            match &r.upstream {
                None => None,
                Some(_) if r.last_traffic.elapsed() < self.cfg.timing.idle => return,
                Some(u) => Some(u.clone()),
            }
        };
        let Some(up) = upstream else {
            let mut last = lock(&self.last_attach);
            if last.is_some_and(|t| t.elapsed() < self.cfg.timing.ping) {
                return;
            }
            *last = Some(Instant::now());
            drop(last);
            return self.try_attach();
        };
        let me = self.endpoint().to_string();
        match call(&up.endpoint, methods::PING, &empty(), self.cfg.timing.ping) {
            Ok(p) if p.field("mode").and_then(CanonicalValue::as_str).ok() == Some(Mode::Primary.as_str()) => {
                let same = p.field("incarnation").and_then(CanonicalValue::as_u64).ok() == Some(up.incarnation);
                let mine = p.opt_field("backup").ok().flatten().and_then(|b| b.as_str().ok()) == Some(me.as_str());
                let mut r = lock(&self.repl);
                r.last_traffic = Instant::now();
                if !(same && mine) {
                    r.upstream = None;
                    drop(r);
                    self.log.info(format!("primary {} no longer follows us; re-attaching", up.endpoint));
                }
            }
            Ok(_) => self.take_over(&format!("{} answers as a backup", up.endpoint)),
            Err(e) => self.take_over(&format!("primary {} silent: {e}", up.endpoint)),
        }
    }

    fn tick(&self) {
        if let Some(s) = &self.state {
            if let Err(e) = lock(s).store_mut().tick() {
                self.log.warn(format!("log maintenance failed: {e}"));
            }
        }
        self.watchdog();
    }

    // ---- stage logic -------------------------------------------------

    fn load(&self, a: &Args) -> Result<CanonicalValue, Fault> {
        Ok(load_sample(a.bytes("bytes")?, a.format()?)?.to_canonical())
    }

    fn preprocess(&self, a: &Args) -> Result<CanonicalValue, Fault> {
        let sample: Sample = a.value("sample")?;
        let method: PreprocessMethod = a.str("method")?.parse()?;
        Ok(preprocess(&sample, &method)?.to_canonical())
    }

    fn extract(&self, a: &Args) -> Result<CanonicalValue, Fault> {
        let feature: FeatureMethod = a.str("feature")?.parse()?;
        let sample: Sample = if a.has("sample") { a.value("sample")? } else { load_sample(a.bytes("bytes")?, a.format()?)? };
        let sample = match a.opt_str("preprocess")? {
            None => sample,
            Some(method) => {
                let args = CanonicalValue::map().with("sample", sample.to_canonical()).with("method", method).build();
                Sample::from_canonical(&self.upstream(ServiceKind::Preprocessing, methods::PREPROCESS, &args)?)?
            }
        };
        Ok(extract_features(&sample, &feature)?.to_canonical())
    }

    /// The feature vector of a classification request: given directly, or
    /// computed by the feature extraction service from a sample.
    fn features_for(&self, a: &Args, config: &PipelineConfig) -> Result<FeatureVector, Fault> {
        let fv: FeatureVector = match a.opt_value("fv")? {
            Some(fv) => fv,
            None => {
                let mut b = CanonicalValue::map()
                    .with("preprocess", config.preprocess.to_string())
                    .with("feature", config.feature.to_string());
                if a.has("sample") {
                    b = b.with("sample", a.value::<Sample>("sample")?.to_canonical());
                } else {
                    b = b.with("bytes", a.bytes("bytes")?.to_vec()).with("format", a.format()?.as_str());
                }
                FeatureVector::from_canonical(&self.upstream(ServiceKind::FeatureExtraction, methods::EXTRACT, &b.build())?)?
            }
        };
        if fv.method != config.feature {
            return Err(RecognitionError::Dimension(format!("vector from {} used with {}", fv.method, config.feature)).into());
        }
        Ok(fv)
    }

    fn gossip_peers(&self) -> Vec<Endpoint> {
        let me = self.endpoint();
        self.cfg.registry.peers(self.cfg.kind).into_iter().filter(|p| *p != me).collect()
    }

    /// Looks for `config` on peers and adopts it when found.
    fn gossip_fetch(&self, config: &PipelineConfig) {
        let peers = self.gossip_peers();
        let Some(hit) = who_has(&peers, config, self.cfg.timing.gossip) else { return };
        match fetch_training_set(&hit.endpoint, config, self.cfg.timing.call_timeout) {
            Ok(set) => match self.replicated(Update::Install { set }) {
                Ok(_) => self.log.info(format!("adopted {config} v{} from {}", hit.version, hit.endpoint)),
                Err(f) => self.log.warn(format!("installing {config} from {} failed: {f}", hit.endpoint)),
            },
            Err(e) => self.log.warn(format!("transfer of {config} from {} failed: {e}", hit.endpoint)),
        }
    }

    fn train(&self, a: &Args) -> Result<CanonicalValue, Fault> {
        let config = a.config()?;
        let subject = a.u64("subject")?;
        let expect_version = a.opt_u64("expect_version")?;
        let fv = self.features_for(a, &config)?;
        let known = self.state()?.training_set(&config)?.is_some();
        if !known {
            self.gossip_fetch(&config);
        }
        self.replicated(Update::Train { config, fv, subject, expect_version })
    }

    fn classify(&self, a: &Args) -> Result<CanonicalValue, Fault> {
        let config = a.config()?;
        let fv = self.features_for(a, &config)?;
        let mut st = self.state()?;
        let set = st.training_set(&config)?.ok_or_else(|| RecognitionError::NotTrained(config.to_string()))?;
        Ok(set.classify(&fv)?.to_canonical())
    }

    fn who_has(&self, a: &Args) -> Result<CanonicalValue, Fault> {
        let config = a.config()?;
        let version = self.state()?.training_set(&config)?.map(|s| s.version);
        Ok(CanonicalValue::map()
            .with("has", i64::from(version.is_some()))
            .with("version", version.unwrap_or(0) as i64)
            .with("endpoint", self.endpoint().to_string())
            .build())
    }

    fn transfer(&self, a: &Args) -> Result<CanonicalValue, Fault> {
        let config = a.config()?;
        let st = self.state()?;
        let bytes = st.store().get(&training_set_file(&config))?.ok_or_else(|| RecognitionError::NotTrained(config.to_string()))?;
        Ok(CanonicalValue::map().with("set", bytes).build())
    }

    /// Runs load, preprocess and extract through the stage services.
    fn pipeline_features(&self, a: &Args, config: &PipelineConfig) -> Result<FeatureVector, Fault> {
        let args = CanonicalValue::map().with("bytes", a.bytes("bytes")?.to_vec()).with("format", a.format()?.as_str()).build();
        let sample = self.upstream(ServiceKind::SampleLoader, methods::LOAD, &args)?;
        let args = CanonicalValue::map().with("sample", sample).with("method", config.preprocess.to_string()).build();
        let sample = self.upstream(ServiceKind::Preprocessing, methods::PREPROCESS, &args)?;
        let args = CanonicalValue::map().with("sample", sample).with("feature", config.feature.to_string()).build();
        Ok(FeatureVector::from_canonical(&self.upstream(ServiceKind::FeatureExtraction, methods::EXTRACT, &args)?)?)
    }

    fn recognize(&self, a: &Args) -> Result<CanonicalValue, Fault> {
        let config = a.config()?;
        let fv = self.pipeline_features(a, &config)?;
        let args = CanonicalValue::map().with("config", config.to_string()).with("fv", fv.to_canonical()).build();
        self.upstream(ServiceKind::Classification, methods::CLASSIFY, &args)
    }

    fn pipeline_train(&self, a: &Args) -> Result<CanonicalValue, Fault> {
        let config = a.config()?;
        let fv = self.pipeline_features(a, &config)?;
        let args = CanonicalValue::map()
            .with("config", config.to_string())
            .with("fv", fv.to_canonical())
            .with("subject", a.u64("subject")? as i64)
            .with_opt("expect_version", a.opt_u64("expect_version")?.map(|v| v as i64))
            .build();
        self.upstream(ServiceKind::Classification, methods::TRAIN, &args)
    }

    fn identify(&self, a: &Args) -> Result<CanonicalValue, Fault> {
        let config = a.config()?;
        let args = CanonicalValue::map()
            .with("bytes", a.bytes("bytes")?.to_vec())
            .with("format", a.format()?.as_str())
            .with("config", config.to_string())
            .build();
        let results = ResultSet::from_canonical(&self.upstream(ServiceKind::Pipeline, methods::RECOGNIZE, &args)?)?;
        let best = *results.best().ok_or_else(|| RecognitionError::NotTrained(config.to_string()))?;
        if let Some(expected) = a.opt_u64("expected")? {
            self.replicated(Update::Record { config, expected, results: results.clone(), at_ms: now_ms() })?;
        }
        Ok(CanonicalValue::map()
            .with("subject_id", best.subject_id as i64)
            .with("distance", best.distance)
            .with("results", results.to_canonical())
            .build())
    }

    fn stats(&self, a: &Args) -> Result<CanonicalValue, Fault> {
        let config = a.config()?;
        let db = self.state()?.database(&config)?.cloned().unwrap_or_else(|| Database::new(config.canonical_name(), 0));
        Ok(db.to_canonical())
    }

    fn business(&self, method: &str, a: &Args) -> Result<CanonicalValue, Fault> {
        use ServiceKind::*;
        match (self.cfg.kind, method) {
            (SampleLoader, methods::LOAD) => self.load(a),
            (Preprocessing, methods::PREPROCESS) => self.preprocess(a),
            (FeatureExtraction, methods::EXTRACT) => self.extract(a),
            (Classification, methods::TRAIN) => self.train(a),
            (Classification, methods::CLASSIFY) => self.classify(a),
            (Classification, methods::WHO_HAS) => self.who_has(a),
            (Classification, methods::TRANSFER) => self.transfer(a),
            (Pipeline, methods::RECOGNIZE) => self.recognize(a),
            (Pipeline, methods::TRAIN) => self.pipeline_train(a),
            (SpeakerIdent, methods::IDENTIFY) => self.identify(a),
            (SpeakerIdent, methods::TRAIN) => self.upstream(Pipeline, methods::TRAIN, a.0),
            (SpeakerIdent, methods::STATS) => self.stats(a),
            (kind, m) => Err(Fault::new(codes::UNKNOWN_METHOD, format!("{kind} has no method `{m}`"))),
        }
    }
}

impl Dispatcher for Node {
    fn dispatch(&self, method: &str, args: &CanonicalValue) -> Result<CanonicalValue, Fault> {
        match method {
            methods::PING => Ok(self.ping_reply()),
            methods::SHUTDOWN => {
                if let Some(stop) = self.stop.get() {
                    stop.store(true, Ordering::SeqCst);
                }
                Ok(empty())
            }
            methods::REPLICATE => self.on_replicate(args),
            methods::ATTACH => self.on_attach(args),
            methods::PROMOTE => {
                self.take_over("promoted by operator");
                Ok(CanonicalValue::map().with("mode", self.mode().as_str()).build())
            }
            _ => {
                if self.mode() != Mode::Primary {
                    return Err(not_primary(self.cfg.kind));
                }
                self.handled.fetch_add(1, Ordering::Relaxed);
                let result = self.business(method, &Args(args));
                if let Err(f) = &result {
                    self.log.warn(format!("{method}: {f}"));
                }
                result
            }
        }
    }

    fn exclusive(&self, method: &str) -> bool {
        !matches!(method, methods::PING | methods::SHUTDOWN | methods::WHO_HAS | methods::TRANSFER | methods::STATS)
    }
}

/// A served node plus its maintenance thread.
pub struct RunningService {
    node: Arc<Node>,
    server: Option<ServerHandle>,
    ticker: Option<JoinHandle<()>>,
    stop: Arc<AtomicBool>,
}

impl RunningService {
    pub fn node(&self) -> &Arc<Node> {
        &self.node
    }

    pub fn endpoint(&self) -> Endpoint {
        self.node.endpoint()
    }

    /// Serves until a `shutdown` request or [`stop`](Self::stop).
    pub fn wait(mut self) {
        if let Some(server) = self.server.take() {
            server.wait();
        }
        self.finish();
    }

    pub fn stop(mut self) {
        self.finish();
    }

    fn finish(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(server) = self.server.take() {
            server.stop();
        }
        if let Some(t) = self.ticker.take() {
            let _ = t.join();
        }
        if let Some(s) = &self.node.state {
            lock(s).store_mut().close();
        }
    }
}

impl Drop for RunningService {
    fn drop(&mut self) {
        self.finish();
    }
}

/// Recovers the instance's objects from its log, then serves it.
pub fn start(cfg: NodeConfig) -> Result<RunningService, ServiceError> {
    std::fs::create_dir_all(&cfg.data_dir)?;
    let transport = match cfg.endpoint {
        Endpoint::Tcp { .. } => "tcp",
        Endpoint::Loop(_) => "loop",
    };
    let log = Logger::open_in(&cfg.data_dir, cfg.kind.key(), transport).with_console(cfg.console_log);
    let state = if is_stateful(cfg.kind) {
        let store: Box<dyn ObjectStore> = if cfg.recoverable {
            let wal_path = cfg.data_dir.join(log_file_name(cfg.kind.key()));
            let report = wal::recover(&wal_path)?;
            if !report.applied.is_empty() || !report.rolled_back.is_empty() {
                log.info(format!("recovery applied {:?}, rolled back {:?}", report.applied, report.rolled_back));
            }
            let opts = WalOptions {
                max_entries: cfg.timing.wal_max_entries,
                checkpoint_interval: cfg.timing.checkpoint_interval,
                sync: true,
            };
            Box::new(RecoverableStore::new(&cfg.data_dir, WriteAheadLog::open(&wal_path, opts)?))
        } else {
            Box::new(BasicStore::new(&cfg.data_dir))
        };
        Some(Mutex::new(ServiceState::new(store)))
    } else {
        None
    };
    let node = Arc::new(Node {
        incarnation: rand::random::<u64>() >> 1,
        state,
        repl: Mutex::new(ReplicaState::new(cfg.mode)),
        log,
        handled: AtomicU64::new(0),
        self_endpoint: OnceLock::new(),
        stop: OnceLock::new(),
        last_attach: Mutex::new(None),
        cfg,
    });
    let server = serve(&node.cfg.endpoint, Arc::clone(&node) as Arc<dyn Dispatcher>)
        .map_err(|source| ServiceError::Bind { endpoint: node.cfg.endpoint.to_string(), source })?;
    let _ = node.self_endpoint.set(server.endpoint().clone());
    let stop = server.stop_signal();
    let _ = node.stop.set(Arc::clone(&stop));
    let ticker = {
        let node = Arc::clone(&node);
        let stop = Arc::clone(&stop);
        thread::Builder::new().name(format!("{}-tick", node.cfg.kind)).spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                node.tick();
                thread::sleep(TICK);
            }
        })?
    };
    node.log.info(format!("{} serving at {} as {}", node.cfg.kind, node.endpoint(), node.mode()));
    node.notify("started", node.mode().to_string());
    Ok(RunningService { node, server: Some(server), ticker: Some(ticker), stop })
}
