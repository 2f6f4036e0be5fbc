use std::collections::BTreeMap;

use super::config::PipelineConfig;
use super::features::FeatureVector;
use super::RecognitionError;
use crate::storage::{Canonical, CanonicalValue, StorageError};

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub mean: Vec<f64>,
    pub count: u64,
}

/// Per-subject running means for one pipeline configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub config: PipelineConfig,
    pub clusters: BTreeMap<u64, Cluster>,
    pub version: u64,
}

impl TrainingSet {
    pub fn new(config: PipelineConfig) -> Self {
        TrainingSet { config, clusters: BTreeMap::new(), version: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    fn check_vector(&self, fv: &FeatureVector) -> Result<(), RecognitionError> {
        let expected = self.config.feature.output_len();
        if fv.method != self.config.feature || fv.len() != expected {
            return Err(RecognitionError::Dimension(format!(
                "{} vector of length {} for configuration expecting {} of length {expected}",
                fv.method,
                fv.len(),
                self.config.feature
            )));
        }
        Ok(())
    }

    /// Folds `fv` into the subject's running mean and bumps the version.
    pub fn train(&mut self, fv: &FeatureVector, subject_id: u64) -> Result<u64, RecognitionError> {
        self.check_vector(fv)?;
        match self.clusters.get_mut(&subject_id) {
            Some(cluster) => {
                let n = cluster.count as f64;
                for (m, x) in cluster.mean.iter_mut().zip(&fv.values) {
                    *m = (*m * n + x) / (n + 1.0);
                }
                cluster.count += 1;
            }
            None => {
                self.clusters.insert(subject_id, Cluster { mean: fv.values.clone(), count: 1 });
            }
        }
        self.version += 1;
        Ok(self.version)
    }

    pub fn classify(&self, fv: &FeatureVector) -> Result<ResultSet, RecognitionError> {
        if self.clusters.is_empty() {
            return Err(RecognitionError::NotTrained(self.config.canonical_name()));
        }
        self.check_vector(fv)?;
        let results = self
            .clusters
            .iter()
            .map(|(id, c)| RecognitionResult { subject_id: *id, distance: self.config.classifier.distance(&c.mean, &fv.values) })
            .collect();
        Ok(ResultSet::from_unsorted(results))
    }
}

pub fn train(mut ts: TrainingSet, fv: &FeatureVector, subject_id: u64) -> Result<TrainingSet, RecognitionError> {
    ts.train(fv, subject_id)?;
    Ok(ts)
}

pub fn classify(ts: &TrainingSet, fv: &FeatureVector) -> Result<ResultSet, RecognitionError> {
    ts.classify(fv)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecognitionResult {
    pub subject_id: u64,
    pub distance: f64,
}

/// Results ordered by ascending distance, ties by ascending subject id.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultSet(Vec<RecognitionResult>);

impl ResultSet {
    pub fn from_unsorted(mut results: Vec<RecognitionResult>) -> Self {
        results.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.subject_id.cmp(&b.subject_id)));
        ResultSet(results)
    }

    pub fn entries(&self) -> &[RecognitionResult] {
        &self.0
    }

    pub fn best(&self) -> Option<&RecognitionResult> {
        self.0.first()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Canonical for RecognitionResult {
    fn to_canonical(&self) -> CanonicalValue {
        CanonicalValue::map().with("subject_id", self.subject_id as i64).with("distance", self.distance).build()
    }

    fn from_canonical(v: &CanonicalValue) -> Result<Self, StorageError> {
        Ok(RecognitionResult { subject_id: v.field("subject_id")?.as_u64()?, distance: v.field("distance")?.as_f64()? })
    }
}

impl Canonical for ResultSet {
    fn to_canonical(&self) -> CanonicalValue {
        CanonicalValue::List(self.0.iter().map(Canonical::to_canonical).collect())
    }

    fn from_canonical(v: &CanonicalValue) -> Result<Self, StorageError> {
        let results = v.as_list()?.iter().map(RecognitionResult::from_canonical).collect::<Result<Vec<_>, _>>()?;
        Ok(ResultSet::from_unsorted(results))
    }
}

impl Canonical for TrainingSet {
    fn to_canonical(&self) -> CanonicalValue {
        let clusters = self
            .clusters
            .iter()
            .map(|(id, c)| {
                CanonicalValue::map()
                    .with("subject_id", *id as i64)
                    .with("mean", c.mean.clone())
                    .with("count", c.count as i64)
                    .build()
            })
            .collect();
        CanonicalValue::map()
            .with("config", self.config.to_canonical())
            .with("version", self.version as i64)
            .with("clusters", CanonicalValue::List(clusters))
            .build()
    }

    fn from_canonical(v: &CanonicalValue) -> Result<Self, StorageError> {
        let config = PipelineConfig::from_canonical(v.field("config")?)?;
        let dim = config.feature.output_len();
        let mut clusters = BTreeMap::new();
        for c in v.field("clusters")?.as_list()? {
            let mean = c.field("mean")?.as_f64_array()?.to_vec();
            let count = c.field("count")?.as_u64()?;
            if mean.len() != dim || count == 0 {
                return Err(StorageError::Schema(format!("cluster of length {} / count {count}", mean.len())));
            }
            clusters.insert(c.field("subject_id")?.as_u64()?, Cluster { mean, count });
        }
        Ok(TrainingSet { config, clusters, version: v.field("version")?.as_u64()? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recognition::FeatureMethod;
    use proptest::prelude::*;

    fn config() -> PipelineConfig {
        "RAW:MINMAX(2):EUCLIDEAN".parse().unwrap()
    }

    fn fv(values: [f64; 4]) -> FeatureVector {
        FeatureVector::new(values.to_vec(), FeatureMethod::MinMax { k: 2 }).unwrap()
    }

    #[test]
    fn first_train_creates_cluster() {
        let v = fv([1.0, 2.0, 3.0, 4.0]);
        let ts = train(TrainingSet::new(config()), &v, 7).unwrap();
        assert_eq!(ts.clusters.len(), 1);
        assert_eq!(ts.clusters[&7], Cluster { mean: v.values.clone(), count: 1 });
        assert_eq!(ts.version, 1);
    }

    #[test]
    fn identical_vectors_keep_mean() {
        let v = fv([0.1, -0.7, 0.3, 1e-3]);
        let mut ts = TrainingSet::new(config());
        ts.train(&v, 7).unwrap();
        ts.train(&v, 7).unwrap();
        assert_eq!(ts.clusters[&7], Cluster { mean: v.values.clone(), count: 2 });
        assert_eq!(ts.version, 2);
    }

    #[test]
    fn dimension_mismatch_leaves_set_untouched() {
        let mut ts = TrainingSet::new(config());
        let wrong = FeatureVector::new(vec![0.0; 6], FeatureMethod::MinMax { k: 3 }).unwrap();
        assert!(matches!(ts.train(&wrong, 1), Err(RecognitionError::Dimension(_))));
        assert_eq!(ts, TrainingSet::new(config()));
    }

    #[test]
    fn classify_untrained() {
        let ts = TrainingSet::new(config());
        assert!(matches!(ts.classify(&fv([0.0; 4])), Err(RecognitionError::NotTrained(_))));
    }

    #[test]
    fn classify_exact_match_first() {
        let mut ts = TrainingSet::new(config());
        ts.train(&fv([1.0, 1.0, 1.0, 1.0]), 1).unwrap();
        ts.train(&fv([0.0, 0.0, 0.0, 0.0]), 2).unwrap();
        let rs = ts.classify(&fv([0.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(rs.best().unwrap(), &RecognitionResult { subject_id: 2, distance: 0.0 });
        assert_eq!(rs.len(), 2);
    }

    #[test]
    fn ties_break_by_subject() {
        let mut ts = TrainingSet::new(config());
        ts.train(&fv([1.0, 0.0, 0.0, 0.0]), 9).unwrap();
        ts.train(&fv([-1.0, 0.0, 0.0, 0.0]), 4).unwrap();
        let rs = ts.classify(&fv([0.0; 4])).unwrap();
        let ids: Vec<_> = rs.entries().iter().map(|r| r.subject_id).collect();
        assert_eq!(ids, vec![4, 9]);
    }

    fn vec4() -> impl Strategy<Value = [f64; 4]> {
        prop::array::uniform4(-1.0f64..1.0)
    }

    proptest! {
        #[test]
        fn running_mean_matches_batch_mean(vs in prop::collection::vec(vec4(), 1..60)) {
            let mut ts = TrainingSet::new(config());
            for v in &vs {
                ts.train(&fv(*v), 3).unwrap();
            }
            let c = &ts.clusters[&3];
            prop_assert_eq!(c.count, vs.len() as u64);
            for d in 0..4 {
                let mean = vs.iter().map(|v| v[d]).sum::<f64>() / vs.len() as f64;
                prop_assert!((c.mean[d] - mean).abs() <= 1e-12, "dim {} got {} want {}", d, c.mean[d], mean);
            }
        }

        #[test]
        fn ranking_matches_exhaustive_and_ignores_insertion_order(
            items in prop::collection::vec((0u64..20, vec4()), 1..30),
            probe in vec4(),
            chebyshev in any::<bool>(),
        ) {
            let mut cfg = config();
            if chebyshev { cfg.classifier = crate::recognition::Classifier::Chebyshev; }
            let mut fwd = TrainingSet::new(cfg);
            for (id, v) in &items { fwd.train(&fv(*v), *id).unwrap(); }
            let mut rev = TrainingSet::new(cfg);
            // Per-subject order must be kept for identical means.
            let mut by_subject: BTreeMap<u64, Vec<[f64; 4]>> = BTreeMap::new();
            for (id, v) in &items { by_subject.entry(*id).or_default().push(*v); }
            for (id, vs) in by_subject.iter().rev() {
                for v in vs { rev.train(&fv(*v), *id).unwrap(); }
            }
            let probe = fv(probe);
            let a = fwd.classify(&probe).unwrap();
            let b = rev.classify(&probe).unwrap();
            prop_assert_eq!(&a, &b);

            // Exhaustive oracle: compute every distance, pick minimum by (distance, id).
            let mut all: Vec<(f64, u64)> = fwd.clusters.iter().map(|(id, c)| {
                let d: Vec<f64> = c.mean.iter().zip(&probe.values).map(|(x, y)| (x - y).abs()).collect();
                let dist = if chebyshev { d.iter().cloned().fold(0.0, f64::max) } else { d.iter().map(|x| x * x).sum::<f64>().sqrt() };
                (dist, *id)
            }).collect();
            all.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
            let got: Vec<(f64, u64)> = a.entries().iter().map(|r| (r.distance, r.subject_id)).collect();
            prop_assert_eq!(got, all);
        }
    }

    #[test]
    fn canonical_round_trip() {
        let mut ts = TrainingSet::new(config());
        ts.train(&fv([0.5, 0.25, 0.0, -1.0]), 1).unwrap();
        ts.train(&fv([0.1, 0.2, 0.3, 0.4]), 2).unwrap();
        let bytes = ts.to_bytes().unwrap();
        let back = TrainingSet::from_bytes(&bytes).unwrap();
        assert_eq!(back, ts);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}
