//! Wire frame: `"DMRF" | version u8 | kind u8 | request_id u64 |
//! method_len u32 | method | payload_len u32 | payload`, all big-endian. On a
//! stream each frame is preceded by its total length as a u32.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"DMRF";
pub const VERSION: u8 = 1;
pub const MAX_FRAME_LEN: usize = 256 << 20;

const FIXED_LEN: usize = 4 + 1 + 1 + 8 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Request = 0,
    Reply = 1,
    Fault = 2,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameKind,
    pub request_id: u64,
    pub method: String,
    /// Canonical encoding of the argument or result value.
    pub payload: Vec<u8>,
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Frame {
    pub fn request(request_id: u64, method: &str, payload: Vec<u8>) -> Self {
        Frame { kind: FrameKind::Request, request_id, method: method.to_owned(), payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FIXED_LEN + self.method.len() + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.kind as u8);
        out.extend_from_slice(&self.request_id.to_be_bytes());
        out.extend_from_slice(&(self.method.len() as u32).to_be_bytes());
        out.extend_from_slice(self.method.as_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        let short = || FrameError::Malformed(format!("{} bytes is too short", bytes.len()));
        if bytes.len() < 4 {
            return Err(short());
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(FrameError::BadMagic(magic));
        }
        if bytes.len() < FIXED_LEN {
            return Err(short());
        }
        if bytes[4] != VERSION {
            return Err(FrameError::BadVersion(bytes[4]));
        }
        let kind = match bytes[5] {
            0 => FrameKind::Request,
            1 => FrameKind::Reply,
            2 => FrameKind::Fault,
            k => return Err(FrameError::Malformed(format!("unknown frame kind {k}"))),
        };
        let request_id = u64::from_be_bytes(bytes[6..14].try_into().unwrap());
        let method_len = u32::from_be_bytes(bytes[14..18].try_into().unwrap()) as usize;
        let method_end = 18usize.checked_add(method_len).filter(|e| e + 4 <= bytes.len()).ok_or_else(short)?;
        let method = std::str::from_utf8(&bytes[18..method_end])
            .map_err(|_| FrameError::Malformed("method name is not UTF-8".into()))?
            .to_owned();
        let payload_len = u32::from_be_bytes(bytes[method_end..method_end + 4].try_into().unwrap()) as usize;
        let payload_start = method_end + 4;
        if bytes.len() - payload_start != payload_len {
            return Err(FrameError::Malformed(format!(
                "payload length {payload_len} but {} bytes remain",
                bytes.len() - payload_start
            )));
        }
        Ok(Frame { kind, request_id, method, payload: bytes[payload_start..].to_vec() })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), FrameError> {
        let body = self.encode();
        let mut buf = Vec::with_capacity(4 + body.len());
        buf.extend_from_slice(&(body.len() as u32).to_be_bytes());
        buf.extend_from_slice(&body);
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    /// Reads one length-prefixed frame.
    pub fn read_from(r: &mut impl Read) -> Result<Self, FrameError> {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        Self::read_body(r, u32::from_be_bytes(len) as usize)
    }

    pub(crate) fn read_body(r: &mut impl Read, len: usize) -> Result<Self, FrameError> {
        if len > MAX_FRAME_LEN {
            return Err(FrameError::Malformed(format!("frame of {len} bytes exceeds limit")));
        }
        // Check the magic before committing to a large buffer.
        let mut head = [0u8; 4];
        if len < 4 {
            return Err(FrameError::Malformed(format!("frame of {len} bytes")));
        }
        r.read_exact(&mut head)?;
        if head != MAGIC {
            return Err(FrameError::BadMagic(head));
        }
        let mut body = vec![0u8; len];
        body[..4].copy_from_slice(&head);
        r.read_exact(&mut body[4..])?;
        Self::decode(&body)
    }
}
