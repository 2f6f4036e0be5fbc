use std::collections::{BTreeMap, HashMap};

use super::store::{ObjectStore, StoreError};
use crate::messaging::{codes, Fault};
use crate::recognition::{FeatureVector, PipelineConfig, ResultSet, TrainingSet};
use crate::storage::{encode_object, restore_bytes, Canonical, CanonicalValue, Database, StorageError};

/// File holding the training set of `config`.
pub fn training_set_file(config: &PipelineConfig) -> String {
    format!("{}.gzbin", config.canonical_name())
}

/// File holding the identification statistics of `config`.
pub fn database_file(config: &PipelineConfig) -> String {
    format!("stats-{}.gzbin", config.canonical_name())
}

/// A state change in self-contained form, so that a backup applying the same
/// sequence ends up with the same bytes.
#[derive(Debug, Clone, PartialEq)]
pub enum Update {
    /// Adopt a training set fetched from a peer.
    Install { set: TrainingSet },
    /// Fold one feature vector into a training set. With `expect_version`,
    /// the update only applies to a set at exactly that version; a set that
    /// is already past it counts the request as done.
    Train { config: PipelineConfig, fv: FeatureVector, subject: u64, expect_version: Option<u64> },
    /// Count one identification outcome.
    Record { config: PipelineConfig, expected: u64, results: ResultSet, at_ms: u64 },
}

impl Canonical for Update {
    fn to_canonical(&self) -> CanonicalValue {
        match self {
            Update::Install { set } => CanonicalValue::map().with("op", "install").with("set", set.to_canonical()).build(),
            Update::Train { config, fv, subject, expect_version } => CanonicalValue::map()
                .with("op", "train")
                .with("config", config.to_canonical())
                .with("fv", fv.to_canonical())
                .with("subject", *subject as i64)
                .with_opt("expect_version", expect_version.map(|v| v as i64))
                .build(),
            Update::Record { config, expected, results, at_ms } => CanonicalValue::map()
                .with("op", "record")
                .with("config", config.to_canonical())
                .with("expected", *expected as i64)
                .with("results", results.to_canonical())
                .with("at_ms", *at_ms as i64)
                .build(),
        }
    }

    fn from_canonical(v: &CanonicalValue) -> Result<Self, StorageError> {
        let config = || PipelineConfig::from_canonical(v.field("config")?);
        match v.field("op")?.as_str()? {
            "install" => Ok(Update::Install { set: TrainingSet::from_canonical(v.field("set")?)? }),
            "train" => Ok(Update::Train {
                config: config()?,
                fv: FeatureVector::from_canonical(v.field("fv")?)?,
                subject: v.field("subject")?.as_u64()?,
                expect_version: v.opt_field("expect_version")?.map(CanonicalValue::as_u64).transpose()?,
            }),
            "record" => Ok(Update::Record {
                config: config()?,
                expected: v.field("expected")?.as_u64()?,
                results: ResultSet::from_canonical(v.field("results")?)?,
                at_ms: v.field("at_ms")?.as_u64()?,
            }),
            op => Err(StorageError::Schema(format!("unknown update `{op}`"))),
        }
    }
}

/// What applying an update did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateOutcome {
    /// Resulting version of the affected object.
    pub version: u64,
    /// False when the update was already reflected and nothing changed.
    pub applied: bool,
}

impl UpdateOutcome {
    pub fn to_canonical(self) -> CanonicalValue {
        CanonicalValue::map().with("version", self.version as i64).with("applied", i64::from(self.applied)).build()
    }
}

/// The durable objects of one service instance, with a decode cache.
pub struct ServiceState {
    store: Box<dyn ObjectStore>,
    sets: HashMap<String, TrainingSet>,
    dbs: HashMap<String, Database>,
    /// Training updates that ran the incremental mean on this instance.
    pub local_trains: u64,
    /// Training sets adopted from peers.
    pub transfers: u64,
}

fn corrupt(name: &str, e: StorageError) -> Fault {
    Fault::new(codes::INTERNAL, format!("stored object {name} unreadable: {e}"))
}

impl ServiceState {
    pub fn new(store: Box<dyn ObjectStore>) -> Self {
        ServiceState { store, sets: HashMap::new(), dbs: HashMap::new(), local_trains: 0, transfers: 0 }
    }

    pub fn store(&self) -> &dyn ObjectStore {
        self.store.as_ref()
    }

    pub fn store_mut(&mut self) -> &mut dyn ObjectStore {
        self.store.as_mut()
    }

    pub fn training_set(&mut self, config: &PipelineConfig) -> Result<Option<&TrainingSet>, Fault> {
        let name = training_set_file(config);
        if !self.sets.contains_key(&name) {
            let Some(bytes) = self.store.get(&name)? else { return Ok(None) };
            let set = restore_bytes(&bytes)
                .and_then(|v| TrainingSet::from_canonical(&v))
                .map_err(|e| corrupt(&name, e))?;
            self.sets.insert(name.clone(), set);
        }
        Ok(self.sets.get(&name))
    }

    pub fn database(&mut self, config: &PipelineConfig) -> Result<Option<&Database>, Fault> {
        let name = database_file(config);
        if !self.dbs.contains_key(&name) {
            let Some(bytes) = self.store.get(&name)? else { return Ok(None) };
            let db = restore_bytes(&bytes).and_then(|v| Database::from_canonical(&v)).map_err(|e| corrupt(&name, e))?;
            self.dbs.insert(name.clone(), db);
        }
        Ok(self.dbs.get(&name))
    }

    fn save(&mut self, name: &str, value: &CanonicalValue) -> Result<(), Fault> {
        let bytes = encode_object(value, true)?;
        self.store.put(name, &bytes)?;
        Ok(())
    }

    pub fn apply(&mut self, update: &Update) -> Result<UpdateOutcome, Fault> {
        match update {
            Update::Install { set } => {
                if let Some(have) = self.training_set(&set.config)? {
                    if have.version >= set.version {
                        return Ok(UpdateOutcome { version: have.version, applied: false });
                    }
                }
                let name = training_set_file(&set.config);
                self.save(&name, &set.to_canonical())?;
                self.sets.insert(name, set.clone());
                self.transfers += 1;
                Ok(UpdateOutcome { version: set.version, applied: true })
            }
            Update::Train { config, fv, subject, expect_version } => {
                let mut set = self.training_set(config)?.cloned().unwrap_or_else(|| TrainingSet::new(*config));
                if let Some(expect) = *expect_version {
                    if set.version > expect {
                        return Ok(UpdateOutcome { version: set.version, applied: false });
                    }
                    if set.version < expect {
                        return Err(Fault::new(
                            codes::CONFLICT,
                            format!("training set {config} is at version {}, request expects {expect}", set.version),
                        ));
                    }
                }
                let version = set.train(fv, *subject)?;
                let name = training_set_file(config);
                self.save(&name, &set.to_canonical())?;
                self.sets.insert(name, set);
                self.local_trains += 1;
                Ok(UpdateOutcome { version, applied: true })
            }
            Update::Record { config, expected, results, at_ms } => {
                let mut db = self
                    .database(config)?
                    .cloned()
                    .unwrap_or_else(|| Database::new(config.canonical_name(), *at_ms));
                db.record_result(*expected, results, *at_ms);
                let t = db.totals();
                let name = database_file(config);
                self.save(&name, &db.to_canonical())?;
                self.dbs.insert(name, db);
                Ok(UpdateOutcome { version: t.good_guesses + t.bad_guesses, applied: true })
            }
        }
    }

    /// Every object file by name.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<u8>>, StoreError> {
        let mut out = BTreeMap::new();
        for name in self.store.list() {
            if let Some(bytes) = self.store.get(&name)? {
                out.insert(name, bytes);
            }
        }
        Ok(out)
    }

    /// Makes the object files exactly `objects`.
    pub fn install_snapshot(&mut self, objects: &BTreeMap<String, Vec<u8>>) -> Result<(), StoreError> {
        self.sets.clear();
        self.dbs.clear();
        for name in self.store.list() {
            if !objects.contains_key(&name) {
                self.store.remove(&name)?;
            }
        }
        for (name, bytes) in objects {
            if self.store.get(name)?.as_deref() != Some(bytes.as_slice()) {
                self.store.put(name, bytes)?;
            }
        }
        Ok(())
    }
}
