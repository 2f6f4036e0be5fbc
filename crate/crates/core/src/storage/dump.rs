use std::fs::OpenOptions;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::codec::{deserialize, serialize, CanonicalValue};
use super::handles::TrackedFile;
use super::StorageError;

/// Default directory for object dumps, relative to the working directory.
pub const DATA_DIR: &str = "data";

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

static TEMP_SEQ: AtomicU64 = AtomicU64::new(0);

/// `<dir>/<name>.gzbin` for compressed objects, `<dir>/<name>.bin` otherwise.
pub fn object_path(dir: &Path, name: &str, compressed: bool) -> PathBuf {
    dir.join(format!("{name}.{}", if compressed { "gzbin" } else { "bin" }))
}

/// Encodes `value` and atomically replaces `path` with it.
pub fn dump(value: &CanonicalValue, path: &Path, compressed: bool) -> Result<(), StorageError> {
    let bytes = encode_object(value, compressed)?;
    write_atomic(path, &bytes)
}

/// Encodes `value` as object-file bytes, gzip-compressed when asked.
pub fn encode_object(value: &CanonicalValue, compressed: bool) -> Result<Vec<u8>, StorageError> {
    let raw = serialize(value)?;
    if !compressed {
        return Ok(raw);
    }
    let mut enc = GzEncoder::new(Vec::with_capacity(raw.len() / 2), Compression::default());
    enc.write_all(&raw).and_then(|_| enc.finish()).map_err(|e| StorageError::Encode(e.to_string()))
}

/// Writes `bytes` to a temporary sibling, syncs it, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| StorageError::Encode(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(
        ".{file_name}.tmp.{}.{}",
        std::process::id(),
        TEMP_SEQ.fetch_add(1, Ordering::Relaxed)
    ));

    let result = (|| {
        let mut file = TrackedFile::open_with(&tmp, OpenOptions::new().write(true).create_new(true))
            .map_err(|e| StorageError::io(&tmp, e))?;
        file.write_all(bytes).map_err(|e| StorageError::io(&tmp, e))?;
        file.sync_all().map_err(|e| StorageError::io(&tmp, e))?;
        drop(file);
        std::fs::rename(&tmp, path).map_err(|e| StorageError::io(path, e))?;
        sync_dir(dir);
        Ok(())
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

fn sync_dir(dir: &Path) {
    if let Ok(d) = TrackedFile::open(dir) {
        let _ = d.sync_all();
    }
}

/// Raw bytes of an object file; `Ok(None)` if it does not exist.
pub fn read_object_bytes(path: &Path) -> Result<Option<Vec<u8>>, StorageError> {
    let mut file = match TrackedFile::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(StorageError::io(path, e)),
    };
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| StorageError::io(path, e))?;
    Ok(Some(buf))
}

/// Inverse of [`dump`]. Compression is detected from the gzip magic bytes.
pub fn restore(path: &Path) -> Result<CanonicalValue, StorageError> {
    let bytes = read_object_bytes(path)?.ok_or_else(|| StorageError::NotFound(path.display().to_string()))?;
    restore_bytes(&bytes)
}

/// Decodes the contents of an object file (plain or gzip).
pub fn restore_bytes(bytes: &[u8]) -> Result<CanonicalValue, StorageError> {
    if bytes.starts_with(&GZIP_MAGIC) {
        let mut raw = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut raw)
            .map_err(|e| StorageError::Corrupt(format!("gzip: {e}")))?;
        deserialize(&raw)
    } else {
        deserialize(bytes)
    }
}
