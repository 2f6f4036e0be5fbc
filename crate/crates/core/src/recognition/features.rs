use std::fmt;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::lpc::{autocorrelation, hamming, levinson_durbin};
use super::{RecognitionError, Sample};
use crate::storage::{Canonical, CanonicalValue, StorageError};

pub const DEFAULT_FFT_WINDOW: usize = 512;
pub const DEFAULT_FFT_FEATURES: usize = 256;
pub const DEFAULT_LPC_ORDER: usize = 20;
pub const DEFAULT_LPC_WINDOW: usize = 512;
pub const DEFAULT_MINMAX_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureMethod {
    /// Mean magnitude spectrum over non-overlapping rectangular windows.
    Fft { window_size: usize, feature_count: usize },
    /// Linear prediction coefficients of the Hamming-weighted signal.
    Lpc { order: usize, window_size: usize },
    /// The `k` smallest then the `k` largest amplitudes, ascending.
    MinMax { k: usize },
}

impl FeatureMethod {
    pub fn fft() -> Self {
        FeatureMethod::Fft { window_size: DEFAULT_FFT_WINDOW, feature_count: DEFAULT_FFT_FEATURES }
    }

    pub fn lpc() -> Self {
        FeatureMethod::Lpc { order: DEFAULT_LPC_ORDER, window_size: DEFAULT_LPC_WINDOW }
    }

    pub fn minmax() -> Self {
        FeatureMethod::MinMax { k: DEFAULT_MINMAX_K }
    }

    pub fn validate(&self) -> Result<(), RecognitionError> {
        let bad = |m: String| Err(RecognitionError::InvalidParameter(m));
        match *self {
            FeatureMethod::Fft { window_size, feature_count } => {
                if window_size < 2 {
                    return bad(format!("FFT window {window_size} too small"));
                }
                if feature_count == 0 || feature_count > window_size / 2 {
                    return bad(format!("FFT feature count {feature_count} not in 1..={}", window_size / 2));
                }
            }
            FeatureMethod::Lpc { order, window_size } => {
                if order == 0 || order >= window_size {
                    return bad(format!("LPC order {order} must be in 1..{window_size}"));
                }
            }
            FeatureMethod::MinMax { k } => {
                if k == 0 {
                    return bad("MinMax k must be at least 1".into());
                }
            }
        }
        Ok(())
    }

    /// Length of the vectors this method produces.
    pub fn output_len(&self) -> usize {
        match *self {
            FeatureMethod::Fft { feature_count, .. } => feature_count,
            FeatureMethod::Lpc { order, .. } => order,
            FeatureMethod::MinMax { k } => 2 * k,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FeatureMethod::Fft { .. } => "FFT",
            FeatureMethod::Lpc { .. } => "LPC",
            FeatureMethod::MinMax { .. } => "MINMAX",
        }
    }
}

impl fmt::Display for FeatureMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Default parameters are left implicit.
        match *self {
            m if m == FeatureMethod::fft() => f.write_str("FFT"),
            m if m == FeatureMethod::lpc() => f.write_str("LPC"),
            m if m == FeatureMethod::minmax() => f.write_str("MINMAX"),
            FeatureMethod::Fft { window_size, feature_count } => write!(f, "FFT({window_size},{feature_count})"),
            FeatureMethod::Lpc { order, window_size } => write!(f, "LPC({order},{window_size})"),
            FeatureMethod::MinMax { k } => write!(f, "MINMAX({k})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub method: FeatureMethod,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, method: FeatureMethod) -> Result<Self, RecognitionError> {
        if values.len() != method.output_len() {
            return Err(RecognitionError::Dimension(format!(
                "{} values for {method}, expected {}",
                values.len(),
                method.output_len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RecognitionError::Numerical("non-finite feature value".into()));
        }
        Ok(FeatureVector { values, method })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn extract_features(sample: &Sample, method: &FeatureMethod) -> Result<FeatureVector, RecognitionError> {
    method.validate()?;
    let values = match *method {
        FeatureMethod::Fft { window_size, feature_count } => fft_features(&sample.samples, window_size, feature_count),
        FeatureMethod::Lpc { order, window_size } => lpc_features(&sample.samples, order, window_size)?,
        FeatureMethod::MinMax { k } => minmax_features(&sample.samples, k),
    };
    FeatureVector::new(values, *method)
}

fn padded(x: &[f64], min_len: usize) -> std::borrow::Cow<'_, [f64]> {
    if x.len() >= min_len {
        std::borrow::Cow::Borrowed(x)
    } else {
        let mut v = x.to_vec();
        v.resize(min_len, 0.0);
        std::borrow::Cow::Owned(v)
    }
}

fn fft_features(x: &[f64], window_size: usize, feature_count: usize) -> Vec<f64> {
    let x = padded(x, window_size);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_size);
    let mut acc = vec![0.0; feature_count];
    let mut buf = vec![Complex::new(0.0, 0.0); window_size];
    let mut windows = 0usize;
    // Trailing samples that do not fill a window are ignored.
    for frame in x.chunks_exact(window_size) {
        for (b, s) in buf.iter_mut().zip(frame) {
            *b = Complex::new(*s, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm();
        }
        windows += 1;
    }
    let n = windows as f64;
    acc.iter().map(|a| a / n).collect()
}

fn lpc_features(x: &[f64], order: usize, window_size: usize) -> Result<Vec<f64>, RecognitionError> {
    let x = padded(x, window_size);
    let weighted: Vec<f64> = x.iter().zip(hamming(x.len())).map(|(s, w)| s * w).collect();
    levinson_durbin(&autocorrelation(&weighted, order), order)
}

fn minmax_features(x: &[f64], k: usize) -> Vec<f64> {
    let mut sorted = padded(x, k).into_owned();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    sorted[..k].iter().chain(&sorted[n - k..]).copied().collect()
}

impl Canonical for FeatureMethod {
    fn to_canonical(&self) -> CanonicalValue {
        CanonicalValue::Str(self.to_string())
    }

    fn from_canonical(v: &CanonicalValue) -> Result<Self, StorageError> {
        v.as_str()?.parse::<FeatureMethod>().map_err(|e| StorageError::Schema(e.to_string()))
    }
}

impl Canonical for FeatureVector {
    fn to_canonical(&self) -> CanonicalValue {
        CanonicalValue::map().with("method", self.method.to_canonical()).with("values", self.values.clone()).build()
    }

    fn from_canonical(v: &CanonicalValue) -> Result<Self, StorageError> {
        let method = FeatureMethod::from_canonical(v.field("method")?)?;
        FeatureVector::new(v.field("values")?.as_f64_array()?.to_vec(), method)
            .map_err(|e| StorageError::Schema(e.to_string()))
    }
}
