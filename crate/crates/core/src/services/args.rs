use crate::messaging::Fault;
use crate::recognition::{PipelineConfig, SourceFormat};
use crate::storage::{Canonical, CanonicalValue};

/// Typed access to a request's argument map.
pub(crate) struct Args<'a>(pub &'a CanonicalValue);

impl<'a> Args<'a> {
    fn get(&self, key: &str) -> Result<Option<&'a CanonicalValue>, Fault> {
        Ok(self.0.opt_field(key)?)
    }

    fn need(&self, key: &str) -> Result<&'a CanonicalValue, Fault> {
        self.get(key)?.ok_or_else(|| Fault::bad_request(format!("missing argument `{key}`")))
    }

    pub fn has(&self, key: &str) -> bool {
        matches!(self.get(key), Ok(Some(_)))
    }

    pub fn str(&self, key: &str) -> Result<&'a str, Fault> {
        Ok(self.need(key)?.as_str()?)
    }

    pub fn opt_str(&self, key: &str) -> Result<Option<&'a str>, Fault> {
        Ok(self.get(key)?.map(CanonicalValue::as_str).transpose()?)
    }

    pub fn u64(&self, key: &str) -> Result<u64, Fault> {
        Ok(self.need(key)?.as_u64()?)
    }

    pub fn opt_u64(&self, key: &str) -> Result<Option<u64>, Fault> {
        Ok(self.get(key)?.map(CanonicalValue::as_u64).transpose()?)
    }

    pub fn bytes(&self, key: &str) -> Result<&'a [u8], Fault> {
        Ok(self.need(key)?.as_bytes()?)
    }

    pub fn value<T: Canonical>(&self, key: &str) -> Result<T, Fault> {
        Ok(T::from_canonical(self.need(key)?)?)
    }

    pub fn opt_value<T: Canonical>(&self, key: &str) -> Result<Option<T>, Fault> {
        Ok(self.get(key)?.map(T::from_canonical).transpose()?)
    }

    pub fn config(&self) -> Result<PipelineConfig, Fault> {
        Ok(self.str("config")?.parse::<PipelineConfig>()?)
    }

    /// Sample encoding, WAV PCM16 unless given.
    pub fn format(&self) -> Result<SourceFormat, Fault> {
        match self.opt_str("format")? {
            None => Ok(SourceFormat::WavPcm16),
            Some(f) => Ok(f.parse()?),
        }
    }
}
