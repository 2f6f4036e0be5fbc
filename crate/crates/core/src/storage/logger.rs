use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use chrono::{SecondsFormat, Utc};

use super::handles::TrackedFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogStream {
    Stdout,
    Stderr,
}

/// Appends `[<timestamp>]: <message>` lines to `<module>-<transport>.log`.
///
/// The file is opened and closed per entry, so concurrent processes can share
/// it and nothing stays open between calls. Entries are mirrored to the
/// console unless that is switched off.
#[derive(Debug)]
pub struct Logger {
    path: PathBuf,
    console: bool,
    degraded: AtomicBool,
    lock: Mutex<()>,
}

impl Logger {
    /// Logger writing into the current working directory.
    pub fn open(module: &str, transport: &str) -> Self {
        Self::open_in(Path::new("."), module, transport)
    }

    pub fn open_in(dir: &Path, module: &str, transport: &str) -> Self {
        Logger {
            path: dir.join(format!("{module}-{transport}.log")),
            console: true,
            degraded: AtomicBool::new(false),
            lock: Mutex::new(()),
        }
    }

    pub fn with_console(mut self, console: bool) -> Self {
        self.console = console;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn info(&self, message: impl AsRef<str>) {
        self.log(LogStream::Stdout, message.as_ref());
    }

    pub fn warn(&self, message: impl AsRef<str>) {
        self.log(LogStream::Stderr, message.as_ref());
    }

    pub fn log(&self, stream: LogStream, message: &str) {
        // Stamped under the lock so file order matches timestamp order.
        let _guard = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        let line = format!("[{}]: {}\n", Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true), message);

        if self.console {
            match stream {
                LogStream::Stdout => print!("{line}"),
                LogStream::Stderr => eprint!("{line}"),
            }
        }

        if self.degraded.load(Ordering::Relaxed) {
            return;
        }
        let written = TrackedFile::open_with(&self.path, OpenOptions::new().create(true).append(true))
            .and_then(|mut f| f.write_all(line.as_bytes()));
        if let Err(e) = written {
            // Console-only from here on; warn once.
            self.degraded.store(true, Ordering::Relaxed);
            eprintln!("warning: cannot write log file {}: {e}; logging to console only", self.path.display());
        }
    }

    pub fn is_degraded(&self) -> bool {
        self.degraded.load(Ordering::Relaxed)
    }
}
