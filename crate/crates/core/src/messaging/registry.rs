//! Hosts file: `key=value` lines, `#` comments. For each service key `svc`:
//! `svc.host`, `svc.port`, `svc.backup.host`, `svc.backup.port`, and
//! `svc.peers` as a comma-separated endpoint list. Later duplicates win.

use std::collections::BTreeMap;
use std::path::Path;

use super::kinds::{Endpoint, ServiceKind};
use crate::storage::Logger;

pub const HOSTS_FILE: &str = "dmarf-hosts.properties";
pub const BASE_PORT: u16 = 5100;
const DEFAULT_HOST: &str = "localhost";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Entry {
    host: Option<String>,
    port: Option<u16>,
    backup_host: Option<String>,
    backup_port: Option<u16>,
    peers: Vec<Endpoint>,
}

/// Where each service kind lives.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registry {
    entries: BTreeMap<ServiceKind, Entry>,
    overrides: BTreeMap<ServiceKind, Vec<Endpoint>>,
}

impl Registry {
    pub fn default_endpoint(kind: ServiceKind) -> Endpoint {
        Endpoint::tcp(DEFAULT_HOST, BASE_PORT + u16::from(kind.id()))
    }

    /// The primary endpoint of `kind`.
    pub fn primary(&self, kind: ServiceKind) -> Endpoint {
        self.endpoints(kind).remove(0)
    }

    /// The configured backup endpoint, if any.
    pub fn backup(&self, kind: ServiceKind) -> Option<Endpoint> {
        self.endpoints(kind).into_iter().nth(1)
    }

    /// Endpoints to try, primary first.
    pub fn endpoints(&self, kind: ServiceKind) -> Vec<Endpoint> {
        if let Some(list) = self.overrides.get(&kind).filter(|l| !l.is_empty()) {
            return list.clone();
        }
        let default = Self::default_endpoint(kind);
        let Some(e) = self.entries.get(&kind) else { return vec![default] };
        let host = e.host.clone().unwrap_or_else(|| DEFAULT_HOST.to_owned());
        let port = e.port.or(default.port()).unwrap();
        let mut out = vec![Endpoint::tcp(host.clone(), port)];
        if e.backup_host.is_some() || e.backup_port.is_some() {
            out.push(Endpoint::tcp(e.backup_host.clone().unwrap_or(host), e.backup_port.unwrap_or(port + 100)));
        }
        out
    }

    /// Gossip peers configured for `kind`.
    pub fn peers(&self, kind: ServiceKind) -> Vec<Endpoint> {
        self.entries.get(&kind).map(|e| e.peers.clone()).unwrap_or_default()
    }

    /// Replaces the endpoint list of `kind`, for in-process deployments.
    pub fn set_endpoints(&mut self, kind: ServiceKind, endpoints: Vec<Endpoint>) -> &mut Self {
        self.overrides.insert(kind, endpoints);
        self
    }

    pub fn set_peers(&mut self, kind: ServiceKind, peers: Vec<Endpoint>) -> &mut Self {
        self.entries.entry(kind).or_default().peers = peers;
        self
    }
}

/// Parses hosts-file text. Malformed lines are skipped and described in the
/// returned warnings.
pub fn parse_hosts(text: &str) -> (Registry, Vec<String>) {
    let mut reg = Registry::default();
    let mut warnings = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut warn = |why: &str| warnings.push(format!("line {}: {why}: `{line}`", n + 1));
        let Some((key, value)) = line.split_once('=') else {
            warn("expected key=value");
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        let Some((svc, field)) = key.split_once('.') else {
            warn("key lacks a field");
            continue;
        };
        let Some(kind) = ServiceKind::ALL.into_iter().find(|k| k.key() == svc.to_ascii_lowercase()) else {
            warn("unknown service");
            continue;
        };
        let port = || value.parse::<u16>().ok().filter(|p| *p != 0);
        let entry = reg.entries.entry(kind).or_default();
        match field {
            "host" | "backup.host" if value.is_empty() => warn("empty host"),
            "host" => entry.host = Some(value.to_owned()),
            "backup.host" => entry.backup_host = Some(value.to_owned()),
            "port" | "backup.port" => match port() {
                None => warn("bad port"),
                Some(p) if field == "port" => entry.port = Some(p),
                Some(p) => entry.backup_port = Some(p),
            },
            "peers" => match value.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect() {
                Ok(peers) => entry.peers = peers,
                Err(e) => warn(&e),
            },
            _ => warn("unknown field"),
        }
    }
    (reg, warnings)
}

/// Reads a hosts file. A missing file yields the default layout; warnings go
/// to `log` when given.
pub fn load_hosts(path: &Path, log: Option<&Logger>) -> Registry {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            if e.kind() != std::io::ErrorKind::NotFound {
                if let Some(l) = log {
                    l.warn(&format!("cannot read {}: {e}; using defaults", path.display()));
                }
            }
            return Registry::default();
        }
    };
    let (reg, warnings) = parse_hosts(&text);
    if let Some(l) = log {
        for w in warnings {
            l.warn(&format!("{}: {w}", path.display()));
        }
    }
    reg
}
