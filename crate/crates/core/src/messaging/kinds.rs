use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ServiceKind {
    SpeakerIdent = 1,
    Pipeline = 2,
    SampleLoader = 3,
    Preprocessing = 4,
    FeatureExtraction = 5,
    Classification = 6,
}

impl ServiceKind {
    pub const ALL: [ServiceKind; 6] = [
        ServiceKind::SpeakerIdent,
        ServiceKind::Pipeline,
        ServiceKind::SampleLoader,
        ServiceKind::Preprocessing,
        ServiceKind::FeatureExtraction,
        ServiceKind::Classification,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: i64) -> Option<Self> {
        ServiceKind::ALL.into_iter().find(|k| i64::from(k.id()) == id)
    }

    /// Lower-case key used in the hosts file, log names and on the command line.
    pub fn key(self) -> &'static str {
        match self {
            ServiceKind::SpeakerIdent => "speakerident",
            ServiceKind::Pipeline => "pipeline",
            ServiceKind::SampleLoader => "sampleloader",
            ServiceKind::Preprocessing => "preprocessing",
            ServiceKind::FeatureExtraction => "featureextraction",
            ServiceKind::Classification => "classification",
        }
    }
}

impl fmt::Display for ServiceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for ServiceKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.chars().filter(|c| *c != '-' && *c != '_').collect::<String>().to_ascii_lowercase();
        if let Ok(id) = norm.parse::<i64>() {
            return ServiceKind::from_id(id).ok_or_else(|| format!("unknown service kind {id}"));
        }
        ServiceKind::ALL
            .into_iter()
            .find(|k| k.key() == norm)
            .ok_or_else(|| format!("unknown service kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    Tcp { host: String, port: u16 },
    /// In-process transport, addressed by name.
    Loop(String),
}

impl Endpoint {
    pub fn tcp(host: impl Into<String>, port: u16) -> Self {
        Endpoint::Tcp { host: host.into(), port }
    }

    pub fn port(&self) -> Option<u16> {
        match self {
            Endpoint::Tcp { port, .. } => Some(*port),
            Endpoint::Loop(_) => None,
        }
    }

    /// `host:port` for TCP endpoints, the name for loopback ones.
    pub fn authority(&self) -> String {
        match self {
            Endpoint::Tcp { host, port } => format!("{host}:{port}"),
            Endpoint::Loop(name) => name.clone(),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp { host, port } => write!(f, "tcp://{host}:{port}"),
            Endpoint::Loop(name) => write!(f, "loop://{name}"),
        }
    }
}

impl FromStr for Endpoint {
    type Err = String;

    /// Accepts `tcp://host:port`, `loop://name` or a bare `host:port`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(name) = s.strip_prefix("loop://") {
            if name.is_empty() {
                return Err("empty loopback name".into());
            }
            return Ok(Endpoint::Loop(name.to_owned()));
        }
        let hp = s.strip_prefix("tcp://").unwrap_or(s);
        let (host, port) = hp.rsplit_once(':').ok_or_else(|| format!("endpoint `{s}` lacks a port"))?;
        if host.is_empty() {
            return Err(format!("endpoint `{s}` lacks a host"));
        }
        let port = port.parse().map_err(|_| format!("bad port in `{s}`"))?;
        Ok(Endpoint::tcp(host, port))
    }
}

/// A service kind plus where to reach it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RemoteObjectReference {
    pub kind: ServiceKind,
    pub endpoint: Endpoint,
}

impl RemoteObjectReference {
    pub fn new(kind: ServiceKind, endpoint: Endpoint) -> Self {
        RemoteObjectReference { kind, endpoint }
    }
}

impl fmt::Display for RemoteObjectReference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.kind, self.endpoint)
    }
}
