use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::{mpsc, Mutex};
use std::thread;

use crate::messaging::{Endpoint, ServiceKind};
use crate::replication::Mode;

/// What to start: one service instance in a given role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaunchSpec {
    pub kind: ServiceKind,
    pub endpoint: Endpoint,
    pub role: Mode,
    /// For a backup, the primary to attach to.
    pub primary: Option<Endpoint>,
}

/// A started instance the monitor can reap or kill.
pub trait Supervised: Send {
    fn pid(&self) -> Option<u32>;
    /// True once the instance has terminated. Reaps it if it has.
    fn exited(&mut self) -> bool;
    fn kill(&mut self);
}

pub trait Launcher: Send + Sync {
    fn launch(&self, spec: &LaunchSpec) -> io::Result<Box<dyn Supervised>>;
}

impl Supervised for Child {
    fn pid(&self) -> Option<u32> {
        Some(self.id())
    }

    fn exited(&mut self) -> bool {
        !matches!(self.try_wait(), Ok(None))
    }

    fn kill(&mut self) {
        let _ = Child::kill(self);
        let _ = self.wait();
    }
}

struct SpawnRequest {
    args: Vec<OsString>,
    stderr: PathBuf,
    reply: mpsc::Sender<io::Result<Child>>,
}

/// Starts services as child processes running `<exe> serve ...`.
///
/// Children are spawned from one long-lived thread. On Linux they receive
/// SIGKILL when that thread's process goes away, so a dead monitor leaves no
/// orphans behind.
pub struct ProcessLauncher {
    data_root: PathBuf,
    hosts: Option<PathBuf>,
    monitor: Option<String>,
    extra: Vec<String>,
    tx: Mutex<mpsc::Sender<SpawnRequest>>,
}

impl ProcessLauncher {
    pub fn new(exe: impl Into<PathBuf>, data_root: impl Into<PathBuf>) -> io::Result<Self> {
        let exe = exe.into();
        let (tx, rx) = mpsc::channel::<SpawnRequest>();
        thread::Builder::new().name("spawner".into()).spawn(move || {
            for req in rx {
                let _ = req.reply.send(spawn(&exe, &req.args, &req.stderr));
            }
        })?;
        Ok(ProcessLauncher { data_root: data_root.into(), hosts: None, monitor: None, extra: Vec::new(), tx: Mutex::new(tx) })
    }

    pub fn hosts(mut self, path: impl Into<PathBuf>) -> Self {
        self.hosts = Some(path.into());
        self
    }

    pub fn monitor(mut self, url: impl Into<String>) -> Self {
        self.monitor = Some(url.into());
        self
    }

    /// Extra arguments appended to every `serve` command line.
    pub fn args<I: IntoIterator<Item = S>, S: Into<String>>(mut self, args: I) -> Self {
        self.extra.extend(args.into_iter().map(Into::into));
        self
    }

    pub fn data_dir(&self, kind: ServiceKind, endpoint: &Endpoint) -> PathBuf {
        self.data_root.join(format!("{}-{}", kind.key(), endpoint.port().unwrap_or(0)))
    }

    fn command_line(&self, spec: &LaunchSpec) -> io::Result<Vec<OsString>> {
        let Endpoint::Tcp { host, port } = &spec.endpoint else {
            return Err(io::Error::new(io::ErrorKind::Unsupported, "only TCP endpoints can be spawned"));
        };
        let mut args: Vec<OsString> = vec!["serve".into(), "--kind".into(), spec.kind.key().into()];
        args.extend(["--role".into(), spec.role.as_str().to_ascii_lowercase().into()]);
        args.extend(["--host".into(), host.into(), "--port".into(), port.to_string().into()]);
        args.extend(["--data".into(), self.data_dir(spec.kind, &spec.endpoint).into_os_string()]);
        if let Some(h) = &self.hosts {
            args.extend(["--hosts".into(), h.clone().into_os_string()]);
        }
        if let Some(m) = &self.monitor {
            args.extend(["--monitor".into(), m.into()]);
        }
        if let Some(p) = &spec.primary {
            args.extend(["--primary".into(), p.authority().into()]);
        }
        args.extend(self.extra.iter().map(OsString::from));
        Ok(args)
    }
}

impl Launcher for ProcessLauncher {
    fn launch(&self, spec: &LaunchSpec) -> io::Result<Box<dyn Supervised>> {
        let args = self.command_line(spec)?;
        std::fs::create_dir_all(&self.data_root)?;
        let stderr = self.data_root.join(format!("{}-{}.stderr", spec.kind.key(), spec.endpoint.port().unwrap_or(0)));
        let (reply, rx) = mpsc::channel();
        self.tx
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .send(SpawnRequest { args, stderr, reply })
            .map_err(|_| io::Error::other("spawner thread is gone"))?;
        let child = rx.recv().map_err(|_| io::Error::other("spawner thread is gone"))??;
        Ok(Box::new(child))
    }
}

fn spawn(exe: &Path, args: &[OsString], stderr: &Path) -> io::Result<Child> {
    let err = OpenOptions::new().create(true).append(true).open(stderr)?;
    let mut cmd = Command::new(exe);
    cmd.args(args).stdin(Stdio::null()).stdout(Stdio::null()).stderr(err);
    #[cfg(target_os = "linux")]
    {
        use std::os::unix::process::CommandExt;
        // SAFETY: prctl is async-signal-safe and touches no Rust state.
        unsafe {
            cmd.pre_exec(|| {
                libc::prctl(libc::PR_SET_PDEATHSIG, libc::SIGKILL);
                Ok(())
            });
        }
    }
    cmd.spawn()
}
