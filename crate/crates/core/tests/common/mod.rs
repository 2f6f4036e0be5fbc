#![allow(dead_code)]

use std::path::Path;
use std::time::Duration;

use dmarf_core::messaging::{call, CallError, Endpoint, Registry, ServiceKind};
use dmarf_core::recognition::{features_from_bytes, PipelineConfig, ResultSet, SourceFormat, TrainingSet};
use dmarf_core::replication::Mode;
use dmarf_core::services::{start, NodeConfig, RunningService, Timing};
use dmarf_core::storage::{Canonical, CanonicalValue};
use dmarf_core::synth::{generate, SynthOptions, SynthSample};

/// Stage kinds ordered so that every kind starts after the ones it calls.
pub const START_ORDER: [ServiceKind; 6] = [
    ServiceKind::SampleLoader,
    ServiceKind::Preprocessing,
    ServiceKind::FeatureExtraction,
    ServiceKind::Classification,
    ServiceKind::Pipeline,
    ServiceKind::SpeakerIdent,
];

pub fn fast_timing() -> Timing {
    Timing {
        call_timeout: Duration::from_secs(5),
        idle: Duration::from_millis(300),
        ping: Duration::from_millis(200),
        gossip: Duration::from_millis(300),
        ..Timing::default()
    }
}

pub struct Cluster {
    pub services: Vec<RunningService>,
    pub registry: Registry,
}

impl Cluster {
    /// All six kinds, each a primary, on loopback names prefixed with `tag`
    /// or on ephemeral TCP ports when `tag` is `None`.
    pub fn start(dir: &Path, tag: Option<&str>) -> Cluster {
        let mut registry = Registry::default();
        let mut services = Vec::new();
        for kind in START_ORDER {
            let endpoint = match tag {
                Some(t) => Endpoint::Loop(format!("{t}-{kind}")),
                None => Endpoint::tcp("127.0.0.1", 0),
            };
            let mut cfg = NodeConfig::new(kind, endpoint, dir.join(kind.key()));
            cfg.registry = registry.clone();
            cfg.timing = fast_timing();
            let svc = start(cfg).expect("service starts");
            registry.set_endpoints(kind, vec![svc.endpoint()]);
            services.push(svc);
        }
        Cluster { services, registry }
    }

    pub fn service(&self, kind: ServiceKind) -> &RunningService {
        self.services.iter().find(|s| s.node().kind() == kind).unwrap()
    }

    pub fn endpoint(&self, kind: ServiceKind) -> Endpoint {
        self.service(kind).endpoint()
    }

    pub fn call(&self, kind: ServiceKind, method: &str, args: CanonicalValue) -> Result<CanonicalValue, CallError> {
        call(&self.endpoint(kind), method, &args, Duration::from_secs(10))
    }
}

pub fn corpus() -> (SynthOptions, Vec<SynthSample>) {
    let opts = SynthOptions::default();
    let samples = generate(&opts);
    (opts, samples)
}

/// In-process train-then-classify reference.
pub struct Oracle {
    pub set: TrainingSet,
}

impl Oracle {
    pub fn new(config: PipelineConfig) -> Self {
        Oracle { set: TrainingSet::new(config) }
    }

    pub fn train(&mut self, wav: &[u8], subject: u64) {
        let fv = features_from_bytes(wav, SourceFormat::WavPcm16, &self.set.config).unwrap();
        self.set.train(&fv, subject).unwrap();
    }

    pub fn classify(&self, wav: &[u8]) -> ResultSet {
        let fv = features_from_bytes(wav, SourceFormat::WavPcm16, &self.set.config).unwrap();
        self.set.classify(&fv).unwrap()
    }
}

pub fn train_args(wav: &[u8], subject: u64, config: &PipelineConfig, expect: Option<u64>) -> CanonicalValue {
    CanonicalValue::map()
        .with("bytes", wav.to_vec())
        .with("subject", subject as i64)
        .with("config", config.to_string())
        .with_opt("expect_version", expect.map(|v| v as i64))
        .build()
}

pub fn recognize_args(wav: &[u8], config: &PipelineConfig) -> CanonicalValue {
    CanonicalValue::map().with("bytes", wav.to_vec()).with("config", config.to_string()).build()
}

pub fn result_set(v: &CanonicalValue) -> ResultSet {
    ResultSet::from_canonical(v).unwrap()
}

pub fn ping(endpoint: &Endpoint) -> Option<CanonicalValue> {
    call(endpoint, "ping", &CanonicalValue::map().build(), Duration::from_millis(500)).ok()
}

pub fn mode_of(endpoint: &Endpoint) -> Option<Mode> {
    ping(endpoint)?.field("mode").ok()?.as_str().ok()?.parse().ok()
}

pub fn wait_until(limit: Duration, mut f: impl FnMut() -> bool) -> bool {
    let end = std::time::Instant::now() + limit;
    while std::time::Instant::now() < end {
        if f() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    f()
}

/// Minimal HTTP sink that records request bodies, standing in for the monitor.
pub struct EventSink {
    pub url: String,
    pub bodies: std::sync::Arc<std::sync::Mutex<Vec<String>>>,
}

impl EventSink {
    pub fn start() -> EventSink {
        use std::io::{BufRead, BufReader, Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let bodies = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
        let sink = std::sync::Arc::clone(&bodies);
        std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let mut reader = BufReader::new(stream);
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
                let mut body = vec![0u8; len];
                let _ = reader.read_exact(&mut body);
                sink.lock().unwrap().push(String::from_utf8_lossy(&body).into_owned());
                let _ = reader.get_mut().write_all(b"HTTP/1.1 204 No Content\r\nContent-Length: 0\r\n\r\n");
            }
        });
        EventSink { url, bodies }
    }

    pub fn saw(&self, needle: &str) -> bool {
        self.bodies.lock().unwrap().iter().any(|b| b.contains(needle))
    }
}

pub mod oracles;
pub mod procs;
pub mod scenarios;
