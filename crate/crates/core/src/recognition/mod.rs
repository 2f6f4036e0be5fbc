//! The recognition pipeline proper: sample decoding, preprocessing, feature
//! extraction and nearest-mean classification. Everything here is pure.

mod config;
mod features;
mod lpc;
mod preprocess;
mod sample;
mod training;

pub use config::{Classifier, PipelineConfig};
pub use features::{extract_features, FeatureMethod, FeatureVector};
pub use lpc::{autocorrelation, hamming, levinson_durbin};
pub use preprocess::{preprocess, PreprocessMethod};
pub use sample::{encode_wav_pcm16, load_sample, Sample, SourceFormat, RAW_F64_SAMPLE_RATE};
pub use training::{classify, train, Cluster, RecognitionResult, ResultSet, TrainingSet};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecognitionError {
    #[error("malformed input: {0}")]
    Format(String),
    #[error("empty sample")]
    EmptySample,
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no training data for configuration `{0}`")]
    NotTrained(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Runs load, preprocess and extract in one process.
pub fn features_from_bytes(
    bytes: &[u8],
    format: SourceFormat,
    config: &PipelineConfig,
) -> Result<FeatureVector, RecognitionError> {
    let sample = load_sample(bytes, format)?;
    let sample = preprocess(&sample, &config.preprocess)?;
    extract_features(&sample, &config.feature)
}
