use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use crate::messaging::{call, CallError, Endpoint, Fault};
use crate::recognition::{PipelineConfig, TrainingSet};
use crate::services::methods;
use crate::storage::{restore_bytes, Canonical, CanonicalValue};

/// A peer that holds a configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GossipHit {
    pub endpoint: Endpoint,
    pub version: u64,
}

/// Asks every peer in parallel whether it holds `config`. The first positive
/// answer within `window` wins.
pub fn who_has(peers: &[Endpoint], config: &PipelineConfig, window: Duration) -> Option<GossipHit> {
    if peers.is_empty() {
        return None;
    }
    let deadline = Instant::now() + window;
    let (tx, rx) = mpsc::channel();
    let args = CanonicalValue::map().with("config", config.to_string()).build();
    for peer in peers {
        let (tx, peer, args) = (tx.clone(), peer.clone(), args.clone());
        thread::spawn(move || {
            let hit = call(&peer, methods::WHO_HAS, &args, window).ok().and_then(|r| {
                let has = r.field("has").and_then(CanonicalValue::as_i64).ok()? != 0;
                let version = r.field("version").and_then(CanonicalValue::as_u64).ok()?;
                has.then_some(GossipHit { endpoint: peer, version })
            });
            let _ = tx.send(hit);
        });
    }
    drop(tx);
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(left) {
            Ok(Some(hit)) => return Some(hit),
            Ok(None) => continue,
            Err(_) => return None,
        }
    }
}

/// Downloads the training set of `config` from `peer`.
pub fn fetch_training_set(peer: &Endpoint, config: &PipelineConfig, timeout: Duration) -> Result<TrainingSet, CallError> {
    let args = CanonicalValue::map().with("config", config.to_string()).build();
    let reply = call(peer, methods::TRANSFER, &args, timeout)?;
    let bad = |e: crate::storage::StorageError| CallError::Fault(Fault::bad_request(format!("transfer reply: {e}")));
    let bytes = reply.field("set").and_then(CanonicalValue::as_bytes).map_err(bad)?;
    let set = restore_bytes(bytes).and_then(|v| TrainingSet::from_canonical(&v)).map_err(bad)?;
    if set.config != *config {
        return Err(CallError::Fault(Fault::bad_request(format!("peer sent {} for {config}", set.config))));
    }
    Ok(set)
}
