//! Distributed modular audio recognition: pipeline services, write-ahead log
//! recovery, primary-backup and gossip replication, and process supervision.

pub mod recognition;
pub mod storage;
pub mod faults;
pub mod wal;
pub mod messaging;
pub mod replication;
pub mod services;
pub mod cli;
pub mod monitor;
pub mod synth;
