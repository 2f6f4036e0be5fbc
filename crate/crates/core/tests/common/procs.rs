//! Harness for tests that drive the `dmarf` binary as separate processes.

use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use dmarf_core::messaging::{call, parse_hosts, Endpoint, Registry, ServiceKind};
use dmarf_core::monitor::{Liveness, ServiceStatus};
use dmarf_core::storage::CanonicalValue;

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_dmarf"))
}

/// Runs `dmarf` to completion.
pub fn dmarf(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("run dmarf")
}

pub fn free_ports(n: usize) -> Vec<u16> {
    let listeners: Vec<_> = (0..n).map(|_| std::net::TcpListener::bind("127.0.0.1:0").unwrap()).collect();
    listeners.iter().map(|l| l.local_addr().unwrap().port()).collect()
}

/// A hosts file on fresh ports, optionally with a Classification backup.
pub struct Hosts {
    pub path: PathBuf,
    pub registry: Registry,
}

impl Hosts {
    pub fn write(dir: &Path, classification_backup: bool) -> Hosts {
        let ports = free_ports(7);
        let mut text = String::new();
        for (kind, port) in ServiceKind::ALL.iter().zip(&ports) {
            text.push_str(&format!("{0}.host=127.0.0.1\n{0}.port={port}\n", kind.key()));
        }
        if classification_backup {
            text.push_str(&format!("classification.backup.host=127.0.0.1\nclassification.backup.port={}\n", ports[6]));
        }
        let path = dir.join("dmarf-hosts.properties");
        std::fs::write(&path, &text).unwrap();
        Hosts { path, registry: parse_hosts(&text).0 }
    }

    pub fn primary(&self, kind: ServiceKind) -> Endpoint {
        self.registry.primary(kind)
    }

    pub fn backup(&self, kind: ServiceKind) -> Option<Endpoint> {
        self.registry.backup(kind)
    }
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

pub struct MonitorOpts {
    pub classification_backup: bool,
    pub spawn: bool,
    pub interval_ms: u64,
    pub backoff_ms: u64,
    pub backoff_max_ms: u64,
    pub serve_args: Vec<String>,
}

impl Default for MonitorOpts {
    fn default() -> Self {
        MonitorOpts {
            classification_backup: false,
            spawn: true,
            interval_ms: 250,
            backoff_ms: 250,
            backoff_max_ms: 1000,
            serve_args: ["--idle-ms", "1000", "--ping-ms", "500", "--gossip-ms", "300", "--quiet"]
                .map(String::from)
                .to_vec(),
        }
    }
}

/// A `dmarf monitor` process, stopped with SIGTERM on drop.
pub struct MonitorProc {
    pub url: String,
    pub hosts: Hosts,
    pub data: PathBuf,
    pub interval: Duration,
    child: Option<Child>,
}

impl MonitorProc {
    pub fn start(dir: &Path, opts: MonitorOpts) -> MonitorProc {
        let hosts = Hosts::write(dir, opts.classification_backup);
        let port = free_ports(1)[0];
        let data = dir.join("data");
        let mut cmd = Command::new(bin());
        cmd.args(["monitor", "--port", &port.to_string(), "--quiet"])
            .arg("--hosts")
            .arg(&hosts.path)
            .arg("--data")
            .arg(&data)
            .args(["--interval-ms", &opts.interval_ms.to_string()])
            .args(["--backoff-ms", &opts.backoff_ms.to_string()])
            .args(["--backoff-max-ms", &opts.backoff_max_ms.to_string()])
            .args(["--backoff-reset-ms", &(opts.interval_ms * 8).to_string()]);
        if opts.spawn {
            cmd.arg("--spawn");
        }
        for a in &opts.serve_args {
            cmd.arg(format!("--serve-arg={a}"));
        }
        std::fs::create_dir_all(&data).unwrap();
        let err = std::fs::File::create(dir.join("monitor.stderr")).unwrap();
        let child = cmd.stdin(Stdio::null()).stdout(Stdio::null()).stderr(err).spawn().expect("spawn monitor");
        let m = MonitorProc {
            url: format!("http://127.0.0.1:{port}"),
            hosts,
            data,
            interval: Duration::from_millis(opts.interval_ms),
            child: Some(child),
        };
        assert!(super::wait_until(Duration::from_secs(10), || m.try_statuses().is_some()), "monitor never answered");
        m
    }

    pub fn try_statuses(&self) -> Option<Vec<ServiceStatus>> {
        let mut r = agent().get(&format!("{}/status", self.url)).call().ok()?;
        serde_json::from_str(&r.body_mut().read_to_string().ok()?).ok()
    }

    pub fn statuses(&self) -> Vec<ServiceStatus> {
        self.try_statuses().expect("monitor status")
    }

    pub fn status_of(&self, kind: ServiceKind, endpoint: &Endpoint) -> ServiceStatus {
        let (key, at) = (kind.key(), endpoint.authority());
        self.statuses().into_iter().find(|s| s.kind == key && s.endpoint == at).expect("status entry")
    }

    pub fn wait_all_up(&self, limit: Duration) -> bool {
        super::wait_until(limit, || self.statuses().iter().all(|s| s.liveness == Liveness::Up))
    }

    pub fn get(&self, path: &str) -> (u16, String) {
        let mut r = agent().get(&format!("{}{path}", self.url)).call().expect("GET");
        (r.status().as_u16(), r.body_mut().read_to_string().unwrap_or_default())
    }

    pub fn post(&self, path: &str) -> (u16, String) {
        let mut r = agent().post(&format!("{}{path}", self.url)).send_empty().expect("POST");
        (r.status().as_u16(), r.body_mut().read_to_string().unwrap_or_default())
    }

    /// `status ...` lines of the monitor log, in order.
    pub fn transition_log(&self) -> Vec<String> {
        std::fs::read_to_string(self.data.join("monitor-http.log"))
            .unwrap_or_default()
            .lines()
            .filter_map(|l| l.split_once("]: status ").map(|(_, rest)| rest.to_owned()))
            .collect()
    }

    /// Collects `event: status` payloads from the event stream.
    pub fn subscribe(&self) -> Arc<Mutex<Vec<ServiceStatus>>> {
        let events = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&events);
        let resp = agent().get(&format!("{}/events", self.url)).call().expect("open event stream");
        std::thread::spawn(move || {
            let reader = BufReader::new(resp.into_body().into_reader());
            let mut is_status = false;
            for line in reader.lines() {
                let Ok(line) = line else { return };
                if let Some(name) = line.strip_prefix("event: ") {
                    is_status = name == "status";
                } else if let Some(data) = line.strip_prefix("data: ") {
                    if is_status {
                        sink.lock().unwrap().push(serde_json::from_str(data).expect("status json"));
                    }
                }
            }
        });
        events
    }

    /// Monitor and child logs, for failure messages.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for dir in [self.data.clone()].into_iter().chain(std::fs::read_dir(&self.data).into_iter().flatten().flatten().map(|e| e.path())) {
            for f in std::fs::read_dir(&dir).into_iter().flatten().flatten() {
                let p = f.path();
                if p.extension().is_some_and(|e| e == "log" || e == "stderr") {
                    out.push_str(&format!("==== {}\n{}\n", p.display(), std::fs::read_to_string(&p).unwrap_or_default()));
                }
            }
        }
        out
    }

    pub fn stop(&mut self) {
        if let Some(mut child) = self.child.take() {
            unsafe { libc::kill(child.id() as libc::pid_t, libc::SIGTERM) };
            let deadline = Instant::now() + Duration::from_secs(8);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                std::thread::sleep(Duration::from_millis(50));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Drop for MonitorProc {
    fn drop(&mut self) {
        self.stop();
    }
}

/// A lone `dmarf serve` process, killed on drop.
pub struct ServeProc {
    pub child: Child,
}

impl ServeProc {
    pub fn start(args: &[&str]) -> ServeProc {
        let child = Command::new(bin())
            .arg("serve")
            .args(args)
            .arg("--quiet")
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .expect("spawn serve");
        ServeProc { child }
    }

    /// Waits for exit and returns the code and stderr.
    pub fn finish(mut self, limit: Duration) -> Option<(i32, String)> {
        let deadline = Instant::now() + limit;
        while Instant::now() < deadline {
            if let Ok(Some(status)) = self.child.try_wait() {
                let mut err = String::new();
                let _ = self.child.stderr.take().unwrap().read_to_string(&mut err);
                return Some((status.code().unwrap_or(-1), err));
            }
            std::thread::sleep(Duration::from_millis(20));
        }
        None
    }
}

impl Drop for ServeProc {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn pid_of(endpoint: &Endpoint) -> Option<u32> {
    let reply = call(endpoint, "ping", &CanonicalValue::map().build(), Duration::from_millis(500)).ok()?;
    reply.field("pid").ok()?.as_u64().ok().map(|p| p as u32)
}

pub fn kill9(pid: u32) {
    unsafe { libc::kill(pid as libc::pid_t, libc::SIGKILL) };
}
