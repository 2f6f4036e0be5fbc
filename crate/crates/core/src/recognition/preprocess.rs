use super::{RecognitionError, Sample};

pub const DEFAULT_SILENCE_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PreprocessMethod {
    Raw,
    Normalize,
    /// Normalize, then drop amplitudes below `threshold` in magnitude.
    SilenceRemove { threshold: f64 },
}

impl PreprocessMethod {
    pub fn validate(&self) -> Result<(), RecognitionError> {
        match self {
            PreprocessMethod::SilenceRemove { threshold } if !(0.0..=1.0).contains(threshold) => {
                Err(RecognitionError::InvalidParameter(format!("silence threshold {threshold} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

pub fn preprocess(sample: &Sample, method: &PreprocessMethod) -> Result<Sample, RecognitionError> {
    method.validate()?;
    match *method {
        PreprocessMethod::Raw => Ok(sample.clone()),
        PreprocessMethod::Normalize => Ok(normalize(sample)),
        PreprocessMethod::SilenceRemove { threshold } => {
            let mut s = normalize(sample);
            s.samples.retain(|a| a.abs() >= threshold);
            if s.samples.is_empty() {
                return Err(RecognitionError::EmptySample);
            }
            Ok(s)
        }
    }
}

fn normalize(sample: &Sample) -> Sample {
    let peak = sample.samples.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let mut out = sample.clone();
    if peak > 0.0 {
        for a in &mut out.samples {
            *a /= peak;
        }
    }
    out
}
