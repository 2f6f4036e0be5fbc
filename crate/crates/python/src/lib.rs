//! Python bindings: pipeline configurations, in-process training and
//! classification, the synthetic corpus, the canonical codec, service calls
//! and log recovery.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyTypeError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyBytes, PyDict, PyFloat, PyInt, PyList, PyString, PyTuple};

use dmarf_core::messaging::{CallError, Endpoint};
use dmarf_core::recognition::{features_from_bytes, SourceFormat};
use dmarf_core::storage::{self, Canonical, CanonicalValue};
use dmarf_core::{recognition, synth, wal};

create_exception!(dmarf, DmarfError, PyException, "Domain failure reported by the library or a service.");
create_exception!(dmarf, UnavailableError, DmarfError, "A service could not be reached.");

fn domain(e: impl std::fmt::Display) -> PyErr {
    DmarfError::new_err(e.to_string())
}

fn call_error(e: CallError) -> PyErr {
    match e {
        CallError::Unavailable(m) => UnavailableError::new_err(m),
        other => DmarfError::new_err(other.to_string()),
    }
}

/// A `PRE:FEAT:CLS` pipeline configuration.
#[pyclass(name = "PipelineConfig", module = "dmarf", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyPipelineConfig(recognition::PipelineConfig);

#[pymethods]
impl PyPipelineConfig {
    #[new]
    #[pyo3(signature = (text = "NORMALIZE:FFT:EUCLIDEAN"))]
    fn new(text: &str) -> PyResult<Self> {
        text.parse().map(Self).map_err(domain)
    }

    /// The eighteen configurations of the default grid.
    #[staticmethod]
    fn default_grid() -> Vec<Self> {
        recognition::PipelineConfig::default_grid().into_iter().map(Self).collect()
    }

    /// File-name stem of this configuration's training set.
    #[getter]
    fn canonical_name(&self) -> String {
        self.0.canonical_name()
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("PipelineConfig('{}')", self.0)
    }

    fn __hash__(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.0.to_string().hash(&mut h);
        h.finish()
    }
}

/// Feature vector of a PCM16 WAV file under `config`.
#[pyfunction]
fn features(wav: &[u8], config: &PyPipelineConfig) -> PyResult<Vec<f64>> {
    Ok(features_from_bytes(wav, SourceFormat::WavPcm16, &config.0).map_err(domain)?.values)
}

/// Per-subject mean feature vectors for one configuration.
#[pyclass(name = "TrainingSet", module = "dmarf")]
struct PyTrainingSet(recognition::TrainingSet);

#[pymethods]
impl PyTrainingSet {
    #[new]
    fn new(config: &PyPipelineConfig) -> Self {
        Self(recognition::TrainingSet::new(config.0))
    }

    /// Adds one WAV sample for `subject`; returns the new version.
    fn train(&mut self, py: Python<'_>, wav: &[u8], subject: u64) -> PyResult<u64> {
        let set = &mut self.0;
        py.detach(|| {
            let fv = features_from_bytes(wav, SourceFormat::WavPcm16, &set.config)?;
            set.train(&fv, subject)
        })
        .map_err(domain)
    }

    /// `(subject, distance)` pairs, nearest first.
    fn classify(&self, py: Python<'_>, wav: &[u8]) -> PyResult<Vec<(u64, f64)>> {
        let set = &self.0;
        let results = py
            .detach(|| {
                let fv = features_from_bytes(wav, SourceFormat::WavPcm16, &set.config)?;
                set.classify(&fv)
            })
            .map_err(domain)?;
        Ok(results.entries().iter().map(|r| (r.subject_id, r.distance)).collect())
    }

    #[getter]
    fn version(&self) -> u64 {
        self.0.version
    }

    #[getter]
    fn config(&self) -> PyPipelineConfig {
        PyPipelineConfig(self.0.config)
    }

    #[getter]
    fn subjects(&self) -> Vec<u64> {
        self.0.clusters.keys().copied().collect()
    }

    /// The compressed object-file bytes, as a service stores them.
    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = storage::encode_object(&self.0.to_canonical(), true).map_err(domain)?;
        Ok(PyBytes::new(py, &bytes))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        let value = storage::restore_bytes(data).map_err(domain)?;
        recognition::TrainingSet::from_canonical(&value).map(Self).map_err(domain)
    }

    fn __len__(&self) -> usize {
        self.0.clusters.len()
    }

    fn __repr__(&self) -> String {
        format!("TrainingSet('{}', subjects={}, version={})", self.0.config, self.0.clusters.len(), self.0.version)
    }
}

/// Synthetic labeled corpus: `(file_name, subject, wav_bytes)` triples.
#[pyfunction]
#[pyo3(signature = (speakers = 4, samples = 10, seed = None))]
fn synth_corpus<'py>(py: Python<'py>, speakers: usize, samples: usize, seed: Option<u64>) -> PyResult<Vec<Bound<'py, PyTuple>>> {
    let mut opts = synth::SynthOptions { speakers, samples, ..Default::default() };
    if let Some(seed) = seed {
        opts.seed = seed;
    }
    synth::generate(&opts)
        .into_iter()
        .map(|s| (s.file_name, s.subject, PyBytes::new(py, &s.wav)).into_pyobject(py))
        .collect()
}

fn to_py<'py>(py: Python<'py>, v: &CanonicalValue) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        CanonicalValue::I64(i) => i.into_pyobject(py)?.into_any(),
        CanonicalValue::F64(f) => PyFloat::new(py, *f).into_any(),
        CanonicalValue::Str(s) => PyString::new(py, s).into_any(),
        CanonicalValue::Bytes(b) => PyBytes::new(py, b).into_any(),
        CanonicalValue::F64Array(xs) => PyList::new(py, xs)?.into_any(),
        CanonicalValue::List(items) => {
            PyList::new(py, items.iter().map(|i| to_py(py, i)).collect::<PyResult<Vec<_>>>()?)?.into_any()
        }
        CanonicalValue::Map(m) => {
            let d = PyDict::new(py);
            for (k, v) in m {
                d.set_item(k, to_py(py, v)?)?;
            }
            d.into_any()
        }
    })
}

fn from_py(obj: &Bound<'_, PyAny>) -> PyResult<CanonicalValue> {
    if obj.is_instance_of::<PyBool>() || obj.is_instance_of::<PyInt>() {
        return Ok(CanonicalValue::I64(obj.extract()?));
    }
    if obj.is_instance_of::<PyFloat>() {
        return Ok(CanonicalValue::F64(obj.extract()?));
    }
    if let Ok(s) = obj.cast::<PyString>() {
        return Ok(CanonicalValue::Str(s.to_str()?.to_owned()));
    }
    if let Ok(b) = obj.cast::<PyBytes>() {
        return Ok(CanonicalValue::Bytes(b.as_bytes().to_vec()));
    }
    if let Ok(d) = obj.cast::<PyDict>() {
        let mut m = BTreeMap::new();
        for (k, v) in d.iter() {
            let key: String = k.extract().map_err(|_| PyTypeError::new_err("map keys must be str"))?;
            m.insert(key, from_py(&v)?);
        }
        return Ok(CanonicalValue::Map(m));
    }
    if let Ok(items) = obj.try_iter() {
        return Ok(CanonicalValue::List(items.map(|i| from_py(&i?)).collect::<PyResult<_>>()?));
    }
    Err(PyTypeError::new_err(format!("cannot encode {}", obj.get_type().name()?)))
}

/// Canonical encoding of a value built from int, float, str, bytes, list
/// and dict.
#[pyfunction]
fn encode<'py>(py: Python<'py>, value: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyBytes>> {
    let bytes = storage::serialize(&from_py(value)?).map_err(domain)?;
    Ok(PyBytes::new(py, &bytes))
}

#[pyfunction]
fn decode<'py>(py: Python<'py>, data: &[u8]) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &storage::deserialize(data).map_err(domain)?)
}

/// One request to a running service at `host:port`.
#[pyfunction]
#[pyo3(signature = (endpoint, method, args = None, timeout_ms = 5000))]
fn call<'py>(
    py: Python<'py>,
    endpoint: &str,
    method: &str,
    args: Option<&Bound<'py, PyAny>>,
    timeout_ms: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let endpoint: Endpoint = endpoint.parse().map_err(domain)?;
    let args = match args {
        Some(a) => from_py(a)?,
        None => CanonicalValue::map().build(),
    };
    let reply = py
        .detach(|| dmarf_core::messaging::call(&endpoint, method, &args, Duration::from_millis(timeout_ms)))
        .map_err(call_error)?;
    to_py(py, &reply)
}

/// Replays a write-ahead log; returns `(applied, rolled_back)` ids.
#[pyfunction]
fn recover(log_path: PathBuf) -> PyResult<(Vec<u64>, Vec<u64>)> {
    let report = wal::recover(&log_path).map_err(domain)?;
    Ok((report.applied, report.rolled_back))
}

#[pymodule]
fn dmarf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPipelineConfig>()?;
    m.add_class::<PyTrainingSet>()?;
    m.add_function(wrap_pyfunction!(features, m)?)?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(call, m)?)?;
    m.add_function(wrap_pyfunction!(recover, m)?)?;
    m.add("DmarfError", m.py().get_type::<DmarfError>())?;
    m.add("UnavailableError", m.py().get_type::<UnavailableError>())?;
    Ok(())
}
