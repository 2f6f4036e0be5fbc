use std::fmt;
use std::str::FromStr;

use super::features::FeatureMethod;
use super::preprocess::{PreprocessMethod, DEFAULT_SILENCE_THRESHOLD};
use super::RecognitionError;
use crate::storage::{Canonical, CanonicalValue, StorageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Classifier {
    Euclidean,
    Chebyshev,
}

impl Classifier {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            Classifier::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Classifier::Chebyshev => diffs.fold(0.0, f64::max),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Classifier::Euclidean => "EUCLIDEAN",
            Classifier::Chebyshev => "CHEBYSHEV",
        }
    }
}

/// A (preprocessing, features, classifier) triple. Its canonical name keys the
/// training-set file on disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub preprocess: PreprocessMethod,
    pub feature: FeatureMethod,
    pub classifier: Classifier,
}

impl PipelineConfig {
    pub fn new(
        preprocess: PreprocessMethod,
        feature: FeatureMethod,
        classifier: Classifier,
    ) -> Result<Self, RecognitionError> {
        preprocess.validate()?;
        feature.validate()?;
        Ok(PipelineConfig { preprocess, feature, classifier })
    }

    /// File-name-safe identifier; injective over valid configurations.
    pub fn canonical_name(&self) -> String {
        let pre = match self.preprocess {
            PreprocessMethod::Raw => "raw".to_owned(),
            PreprocessMethod::Normalize => "normalize".to_owned(),
            PreprocessMethod::SilenceRemove { threshold } => format!("silence-{threshold}"),
        };
        let feat = match self.feature {
            FeatureMethod::Fft { window_size, feature_count } => format!("fft-{window_size}-{feature_count}"),
            FeatureMethod::Lpc { order, window_size } => format!("lpc-{order}-{window_size}"),
            FeatureMethod::MinMax { k } => format!("minmax-{k}"),
        };
        format!("{pre}.{feat}.{}", self.classifier.name().to_ascii_lowercase())
    }

    /// The 3 x 3 x 2 grid of default-parameter configurations.
    pub fn default_grid() -> Vec<PipelineConfig> {
        let pres = [
            PreprocessMethod::Raw,
            PreprocessMethod::Normalize,
            PreprocessMethod::SilenceRemove { threshold: DEFAULT_SILENCE_THRESHOLD },
        ];
        let feats = [FeatureMethod::fft(), FeatureMethod::lpc(), FeatureMethod::minmax()];
        let mut grid = Vec::with_capacity(18);
        for preprocess in pres {
            for feature in feats {
                for classifier in [Classifier::Euclidean, Classifier::Chebyshev] {
                    grid.push(PipelineConfig { preprocess, feature, classifier });
                }
            }
        }
        grid
    }
}

impl fmt::Display for PipelineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.preprocess, self.feature, self.classifier.name())
    }
}

impl fmt::Display for PreprocessMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PreprocessMethod::Raw => f.write_str("RAW"),
            PreprocessMethod::Normalize => f.write_str("NORMALIZE"),
            PreprocessMethod::SilenceRemove { threshold } if *threshold == DEFAULT_SILENCE_THRESHOLD => {
                f.write_str("SILENCE_REMOVE")
            }
            PreprocessMethod::SilenceRemove { threshold } => write!(f, "SILENCE_REMOVE({threshold})"),
        }
    }
}

impl FromStr for PreprocessMethod {
    type Err = RecognitionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_preprocess(s)
    }
}

impl FromStr for FeatureMethod {
    type Err = RecognitionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_feature(s)
    }
}

/// Splits `NAME(a,b)` into the upper-cased name and its arguments.
fn split_call(s: &str) -> Result<(String, Vec<&str>), RecognitionError> {
    let s = s.trim();
    match s.find('(') {
        None => Ok((s.to_ascii_uppercase(), Vec::new())),
        Some(open) => {
            let inner = s[open + 1..]
                .strip_suffix(')')
                .ok_or_else(|| RecognitionError::InvalidParameter(format!("unbalanced parentheses in `{s}`")))?;
            Ok((s[..open].trim().to_ascii_uppercase(), inner.split(',').map(str::trim).collect()))
        }
    }
}

fn num<T: FromStr>(s: &str, what: &str) -> Result<T, RecognitionError> {
    s.parse().map_err(|_| RecognitionError::InvalidParameter(format!("bad {what} `{s}`")))
}

fn parse_preprocess(s: &str) -> Result<PreprocessMethod, RecognitionError> {
    let (name, args) = split_call(s)?;
    match (name.as_str(), args.as_slice()) {
        ("RAW", []) => Ok(PreprocessMethod::Raw),
        ("NORMALIZE", []) => Ok(PreprocessMethod::Normalize),
        ("SILENCE_REMOVE", []) => Ok(PreprocessMethod::SilenceRemove { threshold: DEFAULT_SILENCE_THRESHOLD }),
        ("SILENCE_REMOVE", [t]) => Ok(PreprocessMethod::SilenceRemove { threshold: num(t, "threshold")? }),
        _ => Err(RecognitionError::InvalidParameter(format!("unknown preprocessing `{s}`"))),
    }
    .and_then(|m| m.validate().map(|_| m))
}

fn parse_feature(s: &str) -> Result<FeatureMethod, RecognitionError> {
    let (name, args) = split_call(s)?;
    let m = match (name.as_str(), args.as_slice()) {
        ("FFT", []) => FeatureMethod::fft(),
        ("FFT", [w, n]) => FeatureMethod::Fft { window_size: num(w, "window size")?, feature_count: num(n, "feature count")? },
        ("LPC", []) => FeatureMethod::lpc(),
        ("LPC", [p, w]) => FeatureMethod::Lpc { order: num(p, "order")?, window_size: num(w, "window size")? },
        ("MINMAX", []) => FeatureMethod::minmax(),
        ("MINMAX", [k]) => FeatureMethod::MinMax { k: num(k, "k")? },
        _ => return Err(RecognitionError::InvalidParameter(format!("unknown feature method `{s}`"))),
    };
    m.validate()?;
    Ok(m)
}

impl FromStr for PipelineConfig {
    type Err = RecognitionError;

    /// Parses `PRE:FEAT:CLS`, e.g. `NORMALIZE:FFT:EUCLIDEAN` or
    /// `SILENCE_REMOVE(0.05):LPC(12,256):CHEBYSHEV`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [pre, feat, cls] = parts.as_slice() else {
            return Err(RecognitionError::InvalidParameter(format!("config `{s}` is not PRE:FEAT:CLS")));
        };
        let classifier = match cls.trim().to_ascii_uppercase().as_str() {
            "EUCLIDEAN" => Classifier::Euclidean,
            "CHEBYSHEV" => Classifier::Chebyshev,
            other => return Err(RecognitionError::InvalidParameter(format!("unknown classifier `{other}`"))),
        };
        PipelineConfig::new(parse_preprocess(pre)?, parse_feature(feat)?, classifier)
    }
}

impl Canonical for PipelineConfig {
    fn to_canonical(&self) -> CanonicalValue {
        CanonicalValue::Str(self.to_string())
    }

    fn from_canonical(v: &CanonicalValue) -> Result<Self, StorageError> {
        v.as_str()?.parse().map_err(|e: RecognitionError| StorageError::Schema(e.to_string()))
    }
}
