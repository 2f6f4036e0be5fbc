//! Deterministic tag-length-value encoding of [`CanonicalValue`].
//!
//! Layout: one tag byte followed by the body. Integers, lengths and counts are
//! 8-byte big-endian; floats are IEEE-754 big-endian. Map keys are written in
//! bytewise ascending order, so equal values always encode to equal bytes.

use std::collections::BTreeMap;

use super::StorageError;

const TAG_I64: u8 = 0x01;
const TAG_F64: u8 = 0x02;
const TAG_STR: u8 = 0x03;
const TAG_BYTES: u8 = 0x04;
const TAG_F64_ARRAY: u8 = 0x05;
const TAG_LIST: u8 = 0x06;
const TAG_MAP: u8 = 0x07;

/// Nesting bound for decoding untrusted input.
const MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum CanonicalValue {
    I64(i64),
    F64(f64),
    Str(String),
    Bytes(Vec<u8>),
    F64Array(Vec<f64>),
    List(Vec<CanonicalValue>),
    Map(BTreeMap<String, CanonicalValue>),
}

impl CanonicalValue {
    pub fn map() -> MapBuilder {
        MapBuilder::default()
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            CanonicalValue::I64(_) => "I64",
            CanonicalValue::F64(_) => "F64",
            CanonicalValue::Str(_) => "STR",
            CanonicalValue::Bytes(_) => "BYTES",
            CanonicalValue::F64Array(_) => "F64_ARRAY",
            CanonicalValue::List(_) => "LIST",
            CanonicalValue::Map(_) => "MAP",
        }
    }

    pub fn as_map(&self) -> Result<&BTreeMap<String, CanonicalValue>, StorageError> {
        match self {
            CanonicalValue::Map(m) => Ok(m),
            other => Err(StorageError::Schema(format!("expected MAP, got {}", other.type_name()))),
        }
    }

    pub fn as_i64(&self) -> Result<i64, StorageError> {
        match self {
            CanonicalValue::I64(v) => Ok(*v),
            other => Err(StorageError::Schema(format!("expected I64, got {}", other.type_name()))),
        }
    }

    pub fn as_u64(&self) -> Result<u64, StorageError> {
        let v = self.as_i64()?;
        u64::try_from(v).map_err(|_| StorageError::Schema(format!("expected non-negative integer, got {v}")))
    }

    pub fn as_f64(&self) -> Result<f64, StorageError> {
        match self {
            CanonicalValue::F64(v) => Ok(*v),
            other => Err(StorageError::Schema(format!("expected F64, got {}", other.type_name()))),
        }
    }

    pub fn as_str(&self) -> Result<&str, StorageError> {
        match self {
            CanonicalValue::Str(s) => Ok(s),
            other => Err(StorageError::Schema(format!("expected STR, got {}", other.type_name()))),
        }
    }

    pub fn as_bytes(&self) -> Result<&[u8], StorageError> {
        match self {
            CanonicalValue::Bytes(b) => Ok(b),
            other => Err(StorageError::Schema(format!("expected BYTES, got {}", other.type_name()))),
        }
    }

    pub fn as_f64_array(&self) -> Result<&[f64], StorageError> {
        match self {
            CanonicalValue::F64Array(v) => Ok(v),
            other => Err(StorageError::Schema(format!("expected F64_ARRAY, got {}", other.type_name()))),
        }
    }

    pub fn as_list(&self) -> Result<&[CanonicalValue], StorageError> {
        match self {
            CanonicalValue::List(v) => Ok(v),
            other => Err(StorageError::Schema(format!("expected LIST, got {}", other.type_name()))),
        }
    }

    /// Looks up a required map field.
    pub fn field(&self, key: &str) -> Result<&CanonicalValue, StorageError> {
        self.as_map()?
            .get(key)
            .ok_or_else(|| StorageError::Schema(format!("missing field `{key}`")))
    }

    /// Looks up an optional map field.
    pub fn opt_field(&self, key: &str) -> Result<Option<&CanonicalValue>, StorageError> {
        Ok(self.as_map()?.get(key))
    }
}

impl From<i64> for CanonicalValue {
    fn from(v: i64) -> Self {
        CanonicalValue::I64(v)
    }
}

impl From<f64> for CanonicalValue {
    fn from(v: f64) -> Self {
        CanonicalValue::F64(v)
    }
}

impl From<&str> for CanonicalValue {
    fn from(v: &str) -> Self {
        CanonicalValue::Str(v.to_owned())
    }
}

impl From<String> for CanonicalValue {
    fn from(v: String) -> Self {
        CanonicalValue::Str(v)
    }
}

impl From<Vec<u8>> for CanonicalValue {
    fn from(v: Vec<u8>) -> Self {
        CanonicalValue::Bytes(v)
    }
}

impl From<Vec<f64>> for CanonicalValue {
    fn from(v: Vec<f64>) -> Self {
        CanonicalValue::F64Array(v)
    }
}

#[derive(Debug, Default)]
pub struct MapBuilder(BTreeMap<String, CanonicalValue>);

impl MapBuilder {
    pub fn with(mut self, key: &str, value: impl Into<CanonicalValue>) -> Self {
        self.0.insert(key.to_owned(), value.into());
        self
    }

    pub fn with_opt(self, key: &str, value: Option<impl Into<CanonicalValue>>) -> Self {
        match value {
            Some(v) => self.with(key, v),
            None => self,
        }
    }

    pub fn build(self) -> CanonicalValue {
        CanonicalValue::Map(self.0)
    }
}

/// Types with an explicit canonical representation.
pub trait Canonical: Sized {
    fn to_canonical(&self) -> CanonicalValue;
    fn from_canonical(value: &CanonicalValue) -> Result<Self, StorageError>;

    fn to_bytes(&self) -> Result<Vec<u8>, StorageError> {
        serialize(&self.to_canonical())
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, StorageError> {
        Self::from_canonical(&deserialize(bytes)?)
    }
}

pub fn serialize(value: &CanonicalValue) -> Result<Vec<u8>, StorageError> {
    let mut out = Vec::new();
    encode_into(value, &mut out)?;
    Ok(out)
}

fn put_len(out: &mut Vec<u8>, len: usize) {
    out.extend_from_slice(&(len as u64).to_be_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) -> Result<(), StorageError> {
    if !v.is_finite() {
        return Err(StorageError::Encode(format!("non-finite float {v}")));
    }
    out.extend_from_slice(&v.to_be_bytes());
    Ok(())
}

fn encode_into(value: &CanonicalValue, out: &mut Vec<u8>) -> Result<(), StorageError> {
    match value {
        CanonicalValue::I64(v) => {
            out.push(TAG_I64);
            out.extend_from_slice(&v.to_be_bytes());
        }
        CanonicalValue::F64(v) => {
            out.push(TAG_F64);
            put_f64(out, *v)?;
        }
        CanonicalValue::Str(s) => {
            out.push(TAG_STR);
            put_len(out, s.len());
            out.extend_from_slice(s.as_bytes());
        }
        CanonicalValue::Bytes(b) => {
            out.push(TAG_BYTES);
            put_len(out, b.len());
            out.extend_from_slice(b);
        }
        CanonicalValue::F64Array(values) => {
            out.push(TAG_F64_ARRAY);
            put_len(out, values.len());
            out.reserve(values.len() * 8);
            for v in values {
                put_f64(out, *v)?;
            }
        }
        CanonicalValue::List(items) => {
            out.push(TAG_LIST);
            put_len(out, items.len());
            for item in items {
                encode_into(item, out)?;
            }
        }
        CanonicalValue::Map(entries) => {
            out.push(TAG_MAP);
            put_len(out, entries.len());
            // BTreeMap<String, _> iterates in bytewise key order.
            for (key, item) in entries {
                put_len(out, key.len());
                out.extend_from_slice(key.as_bytes());
                encode_into(item, out)?;
            }
        }
    }
    Ok(())
}

/// Decodes exactly one value; trailing bytes and non-canonical input are rejected.
pub fn deserialize(bytes: &[u8]) -> Result<CanonicalValue, StorageError> {
    let mut reader = Reader { buf: bytes, pos: 0 };
    let value = reader.value(0)?;
    if reader.pos != bytes.len() {
        return Err(StorageError::Corrupt(format!(
            "{} trailing bytes after value",
            bytes.len() - reader.pos
        )));
    }
    Ok(value)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], StorageError> {
        if self.buf.len() - self.pos < n {
            return Err(StorageError::Corrupt(format!(
                "unexpected end of input at offset {} (need {n} bytes)",
                self.pos
            )));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u64(&mut self) -> Result<u64, StorageError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads a length and checks it against the bytes left, given a minimum
    /// encoded size per element.
    fn len(&mut self, min_elem: usize) -> Result<usize, StorageError> {
        let n = self.u64()?;
        let remaining = (self.buf.len() - self.pos) as u64;
        if n.saturating_mul(min_elem as u64) > remaining {
            return Err(StorageError::Corrupt(format!("length {n} exceeds remaining input")));
        }
        Ok(n as usize)
    }

    fn f64(&mut self) -> Result<f64, StorageError> {
        let v = f64::from_bits(self.u64()?);
        if !v.is_finite() {
            return Err(StorageError::Corrupt("non-finite float".into()));
        }
        Ok(v)
    }

    fn string(&mut self) -> Result<String, StorageError> {
        let n = self.len(1)?;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| StorageError::Corrupt("invalid UTF-8 string".into()))
    }

    fn value(&mut self, depth: usize) -> Result<CanonicalValue, StorageError> {
        if depth > MAX_DEPTH {
            return Err(StorageError::Corrupt("nesting too deep".into()));
        }
        let tag = self.take(1)?[0];
        Ok(match tag {
            TAG_I64 => CanonicalValue::I64(self.u64()? as i64),
            TAG_F64 => CanonicalValue::F64(self.f64()?),
            TAG_STR => CanonicalValue::Str(self.string()?),
            TAG_BYTES => {
                let n = self.len(1)?;
                CanonicalValue::Bytes(self.take(n)?.to_vec())
            }
            TAG_F64_ARRAY => {
                let n = self.len(8)?;
                let mut values = Vec::with_capacity(n);
                for _ in 0..n {
                    values.push(self.f64()?);
                }
                CanonicalValue::F64Array(values)
            }
            TAG_LIST => {
                let n = self.len(1)?;
                let mut items = Vec::with_capacity(n);
                for _ in 0..n {
                    items.push(self.value(depth + 1)?);
                }
                CanonicalValue::List(items)
            }
            TAG_MAP => {
                let n = self.len(9)?;
                let mut entries = BTreeMap::new();
                let mut last: Option<String> = None;
                for _ in 0..n {
                    let key = self.string()?;
                    if let Some(prev) = &last {
                        if prev.as_bytes() >= key.as_bytes() {
                            return Err(StorageError::Corrupt(format!(
                                "map keys out of order or duplicated at `{key}`"
                            )));
                        }
                    }
                    let item = self.value(depth + 1)?;
                    entries.insert(key.clone(), item);
                    last = Some(key);
                }
                CanonicalValue::Map(entries)
            }
            other => return Err(StorageError::Corrupt(format!("unknown tag 0x{other:02x}"))),
        })
    }
}
