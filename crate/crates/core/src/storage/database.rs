use std::collections::BTreeMap;
use std::sync::Mutex;

use super::codec::{Canonical, CanonicalValue};
use super::StorageError;
use crate::recognition::ResultSet;

/// Identification counters for one expected subject.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SubjectStats {
    pub good_guesses: u64,
    pub bad_guesses: u64,
    pub second_guesses: u64,
}

/// Classification statistics kept by the speaker identification front-end,
/// one instance per pipeline configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Database {
    pub config_name: String,
    pub created_ms: u64,
    pub updated_ms: u64,
    pub subjects: BTreeMap<u64, SubjectStats>,
}

impl Database {
    pub fn new(config_name: impl Into<String>, now_ms: u64) -> Self {
        Database { config_name: config_name.into(), created_ms: now_ms, updated_ms: now_ms, subjects: BTreeMap::new() }
    }

    /// Counts one identification of `expected`: good if it ranked first, bad
    /// otherwise; second-guess if it is within the top two.
    pub fn record_result(&mut self, expected: u64, results: &ResultSet, at_ms: u64) {
        let entries = results.entries();
        let stats = self.subjects.entry(expected).or_default();
        if entries.first().map(|r| r.subject_id) == Some(expected) {
            stats.good_guesses += 1;
        } else {
            stats.bad_guesses += 1;
        }
        if entries.iter().take(2).any(|r| r.subject_id == expected) {
            stats.second_guesses += 1;
        }
        self.updated_ms = self.updated_ms.max(at_ms);
    }

    pub fn totals(&self) -> SubjectStats {
        self.subjects.values().fold(SubjectStats::default(), |acc, s| SubjectStats {
            good_guesses: acc.good_guesses + s.good_guesses,
            bad_guesses: acc.bad_guesses + s.bad_guesses,
            second_guesses: acc.second_guesses + s.second_guesses,
        })
    }

    /// Fraction of first-rank hits, `None` before any identification.
    pub fn accuracy(&self) -> Option<f64> {
        let t = self.totals();
        let total = t.good_guesses + t.bad_guesses;
        (total > 0).then(|| t.good_guesses as f64 / total as f64)
    }
}

impl Canonical for Database {
    fn to_canonical(&self) -> CanonicalValue {
        let subjects = self
            .subjects
            .iter()
            .map(|(id, s)| {
                CanonicalValue::map()
                    .with("subject_id", *id as i64)
                    .with("good_guesses", s.good_guesses as i64)
                    .with("bad_guesses", s.bad_guesses as i64)
                    .with("second_guesses", s.second_guesses as i64)
                    .build()
            })
            .collect();
        CanonicalValue::map()
            .with("config_name", self.config_name.as_str())
            .with("created_ms", self.created_ms as i64)
            .with("updated_ms", self.updated_ms as i64)
            .with("subjects", CanonicalValue::List(subjects))
            .build()
    }

    fn from_canonical(v: &CanonicalValue) -> Result<Self, StorageError> {
        let mut subjects = BTreeMap::new();
        for s in v.field("subjects")?.as_list()? {
            subjects.insert(
                s.field("subject_id")?.as_u64()?,
                SubjectStats {
                    good_guesses: s.field("good_guesses")?.as_u64()?,
                    bad_guesses: s.field("bad_guesses")?.as_u64()?,
                    second_guesses: s.field("second_guesses")?.as_u64()?,
                },
            );
        }
        Ok(Database {
            config_name: v.field("config_name")?.as_str()?.to_owned(),
            created_ms: v.field("created_ms")?.as_u64()?,
            updated_ms: v.field("updated_ms")?.as_u64()?,
            subjects,
        })
    }
}

/// A [`Database`] behind a per-instance lock.
#[derive(Debug)]
pub struct SharedDatabase(Mutex<Database>);

impl SharedDatabase {
    pub fn new(db: Database) -> Self {
        SharedDatabase(Mutex::new(db))
    }

    pub fn record_result(&self, expected: u64, results: &ResultSet, at_ms: u64) {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).record_result(expected, results, at_ms);
    }

    pub fn snapshot(&self) -> Database {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}
