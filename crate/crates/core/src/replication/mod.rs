//! Primary-backup bookkeeping and the messages exchanged between replicas,
//! plus gossip lookup of training sets held by peers.

mod gossip;

pub use gossip::{fetch_training_set, who_has, GossipHit};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::messaging::Endpoint;
use crate::services::Update;
use crate::storage::{Canonical, CanonicalValue, StorageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    Primary,
    Backup,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Primary => "PRIMARY",
            Mode::Backup => "BACKUP",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "PRIMARY" => Ok(Mode::Primary),
            "BACKUP" => Ok(Mode::Backup),
            _ => Err(format!("unknown role `{s}`")),
        }
    }
}

/// The primary a backup follows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Upstream {
    pub endpoint: Endpoint,
    pub incarnation: u64,
}

/// Replication role and progress of one instance.
#[derive(Debug, Clone)]
pub struct ReplicaState {
    pub mode: Mode,
    /// Primary: last sequence number assigned. Backup: last one applied.
    pub seq: u64,
    /// Primary side: the attached backup.
    pub backup: Option<Endpoint>,
    /// Backup side: the primary being followed.
    pub upstream: Option<Upstream>,
    /// Backup side: last time the primary was heard from.
    pub last_traffic: Instant,
}

impl ReplicaState {
    pub fn new(mode: Mode) -> Self {
        ReplicaState { mode, seq: 0, backup: None, upstream: None, last_traffic: Instant::now() }
    }
}

/// Body of a `replicate` request.
#[derive(Debug, Clone, PartialEq)]
pub enum ReplicaPayload {
    Update(Update),
    /// Full object set; replaces the backup's state.
    Snapshot(BTreeMap<String, Vec<u8>>),
}

/// A `replicate` request: who sends it, at which sequence number, and what.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaMessage {
    pub from: Endpoint,
    pub incarnation: u64,
    pub seq: u64,
    pub payload: ReplicaPayload,
}

/// How a backup answered a `replicate` request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplicaAck {
    Applied,
    /// Already seen; nothing done.
    Duplicate,
    /// The sequence number skipped ahead; the backup needs a snapshot.
    Gap,
    /// Applying failed on the backup; it needs a snapshot.
    Failed,
}

impl ReplicaAck {
    pub fn as_str(self) -> &'static str {
        match self {
            ReplicaAck::Applied => "applied",
            ReplicaAck::Duplicate => "duplicate",
            ReplicaAck::Gap => "gap",
            ReplicaAck::Failed => "failed",
        }
    }

    pub fn parse(v: &CanonicalValue) -> Result<Self, StorageError> {
        match v.field("status")?.as_str()? {
            "applied" => Ok(ReplicaAck::Applied),
            "duplicate" => Ok(ReplicaAck::Duplicate),
            "gap" => Ok(ReplicaAck::Gap),
            "failed" => Ok(ReplicaAck::Failed),
            s => Err(StorageError::Schema(format!("unknown replica status `{s}`"))),
        }
    }

    pub fn to_canonical(self) -> CanonicalValue {
        CanonicalValue::map().with("status", self.as_str()).build()
    }

    /// Whether the backup's state is known to match the primary's.
    pub fn in_sync(self) -> bool {
        matches!(self, ReplicaAck::Applied | ReplicaAck::Duplicate)
    }
}

pub(crate) fn objects_to_canonical(objects: &BTreeMap<String, Vec<u8>>) -> CanonicalValue {
    CanonicalValue::Map(objects.iter().map(|(k, v)| (k.clone(), CanonicalValue::Bytes(v.clone()))).collect())
}

pub(crate) fn objects_from_canonical(v: &CanonicalValue) -> Result<BTreeMap<String, Vec<u8>>, StorageError> {
    v.as_map()?.iter().map(|(k, v)| Ok((k.clone(), v.as_bytes()?.to_vec()))).collect()
}

impl Canonical for ReplicaMessage {
    fn to_canonical(&self) -> CanonicalValue {
        let b = CanonicalValue::map()
            .with("from", self.from.to_string())
            .with("incarnation", self.incarnation as i64)
            .with("seq", self.seq as i64);
        match &self.payload {
            ReplicaPayload::Update(u) => b.with("update", u.to_canonical()),
            ReplicaPayload::Snapshot(objects) => b.with("snapshot", objects_to_canonical(objects)),
        }
        .build()
    }

    fn from_canonical(v: &CanonicalValue) -> Result<Self, StorageError> {
        let payload = match (v.opt_field("update")?, v.opt_field("snapshot")?) {
            (Some(u), None) => ReplicaPayload::Update(Update::from_canonical(u)?),
            (None, Some(s)) => ReplicaPayload::Snapshot(objects_from_canonical(s)?),
            _ => return Err(StorageError::Schema("replicate needs exactly one of update, snapshot".into())),
        };
        Ok(ReplicaMessage {
            from: v.field("from")?.as_str()?.parse().map_err(StorageError::Schema)?,
            incarnation: v.field("incarnation")?.as_u64()?,
            seq: v.field("seq")?.as_u64()?,
            payload,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_round_trip() {
        let mut objects = BTreeMap::new();
        objects.insert("a.gzbin".to_owned(), vec![1, 2, 3]);
        let m = ReplicaMessage {
            from: Endpoint::tcp("h", 1),
            incarnation: u64::MAX >> 1,
            seq: 9,
            payload: ReplicaPayload::Snapshot(objects),
        };
        assert_eq!(ReplicaMessage::from_canonical(&m.to_canonical()).unwrap(), m);
        for ack in [ReplicaAck::Applied, ReplicaAck::Duplicate, ReplicaAck::Gap, ReplicaAck::Failed] {
            assert_eq!(ReplicaAck::parse(&ack.to_canonical()).unwrap(), ack);
        }
        assert_eq!("backup".parse::<Mode>().unwrap(), Mode::Backup);
    }
}
