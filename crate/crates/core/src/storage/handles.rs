//! File handles opened by this crate are counted so leaks show up in tests.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::ops::{Deref, DerefMut};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

static OPEN_HANDLES: AtomicUsize = AtomicUsize::new(0);

/// Number of crate-opened files currently alive in this process.
pub fn open_handles() -> usize {
    OPEN_HANDLES.load(Ordering::SeqCst)
}

#[derive(Debug)]
pub(crate) struct TrackedFile(File);

impl TrackedFile {
    pub(crate) fn open_with(path: &Path, opts: &OpenOptions) -> io::Result<Self> {
        let file = opts.open(path)?;
        OPEN_HANDLES.fetch_add(1, Ordering::SeqCst);
        Ok(TrackedFile(file))
    }

    pub(crate) fn open(path: &Path) -> io::Result<Self> {
        Self::open_with(path, OpenOptions::new().read(true))
    }
}

impl Drop for TrackedFile {
    fn drop(&mut self) {
        OPEN_HANDLES.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Deref for TrackedFile {
    type Target = File;
    fn deref(&self) -> &File {
        &self.0
    }
}

impl DerefMut for TrackedFile {
    fn deref_mut(&mut self) -> &mut File {
        &mut self.0
    }
}

impl Read for TrackedFile {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.0.read(buf)
    }
}

impl Write for TrackedFile {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.write(buf)
    }
    fn flush(&mut self) -> io::Result<()> {
        self.0.flush()
    }
}
