//! The `dmarf` command line.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use clap::{Args as ClapArgs, Parser, Subcommand};

use crate::messaging::{call, call_with_failover, codes, load_hosts, CallError, Endpoint, Registry, ServiceKind, HOSTS_FILE};
use crate::monitor::{serve_http, Monitor, MonitorConfig, ProcessLauncher, ServiceStatus, DEFAULT_PORT};
use crate::recognition::{PipelineConfig, SourceFormat};
use crate::replication::Mode;
use crate::services::{self, methods, NodeConfig, ServiceError, Timing};
use crate::storage::{CanonicalValue, Logger};
use crate::synth::{parse_manifest, write_corpus, Phase, SynthOptions, DEFAULT_SEED, MANIFEST_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;
pub const EXIT_UNAVAILABLE: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Unavailable(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Domain(_) => EXIT_DOMAIN,
            CliError::Unavailable(_) => EXIT_UNAVAILABLE,
        }
    }
}

impl From<CallError> for CliError {
    fn from(e: CallError) -> Self {
        if is_unavailable(&e) {
            CliError::Unavailable(e.to_string())
        } else {
            CliError::Domain(format!("{}: {e}", e.code()))
        }
    }
}

fn is_unavailable(e: &CallError) -> bool {
    match e {
        CallError::Unavailable(_) | CallError::Protocol(_) => true,
        CallError::Fault(f) => f.code == codes::UNAVAILABLE || f.code == codes::NOT_PRIMARY,
    }
}

#[derive(Debug, Parser)]
#[command(name = "dmarf", version, about = "Distributed modular audio recognition framework")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one service instance.
    Serve(ServeArgs),
    /// Run the supervising monitor and its HTTP control plane.
    Monitor(MonitorArgs),
    /// Train one sample through the SpeakerIdent front end.
    Train(TrainArgs),
    /// Identify the speaker of one sample.
    Ident(IdentArgs),
    /// Train and test everything listed in a manifest.
    Batch(BatchArgs),
    /// Kill a running service process.
    Chaos(ChaosArgs),
    /// Write a synthetic labeled corpus and manifest.
    Synth(SynthArgs),
    /// Show the monitor's view of the cluster.
    Status(StatusArgs),
}

#[derive(Debug, ClapArgs)]
struct ClientOpts {
    /// Hosts file listing service endpoints.
    #[arg(long, default_value = HOSTS_FILE)]
    hosts: PathBuf,
    /// Call this endpoint instead of the registry's.
    #[arg(long)]
    endpoint: Option<Endpoint>,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
}

impl ClientOpts {
    fn registry(&self, kind: ServiceKind) -> Registry {
        let mut reg = load_hosts(&self.hosts, None);
        if let Some(ep) = &self.endpoint {
            reg.set_endpoints(kind, vec![ep.clone()]);
        }
        reg
    }

    fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

#[derive(Debug, ClapArgs)]
struct ServeArgs {
    #[arg(long)]
    kind: ServiceKind,
    #[arg(long, default_value = "primary")]
    role: Mode,
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long, default_value = HOSTS_FILE)]
    hosts: PathBuf,
    /// Data directory. Defaults to `dmarf-data/<kind>-<port>`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Monitor base URL for event notifications.
    #[arg(long)]
    monitor: Option<String>,
    /// Primary to attach to when serving as a backup.
    #[arg(long)]
    primary: Option<Endpoint>,
    #[arg(long, default_value_t = 3000)]
    idle_ms: u64,
    #[arg(long, default_value_t = 1000)]
    ping_ms: u64,
    #[arg(long, default_value_t = 500)]
    gossip_ms: u64,
    #[arg(long, default_value_t = 1000)]
    checkpoint_ms: u64,
    #[arg(long, default_value_t = 1000)]
    wal_max: usize,
    #[arg(long, default_value_t = 5000)]
    call_timeout_ms: u64,
    /// Write objects without the write-ahead log.
    #[arg(long)]
    basic: bool,
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, ClapArgs)]
struct MonitorArgs {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    #[arg(long, default_value = HOSTS_FILE)]
    hosts: PathBuf,
    /// Start every configured service as a child process.
    #[arg(long)]
    spawn: bool,
    /// Root of the children's data directories and of the monitor log.
    #[arg(long, default_value = "dmarf-data")]
    data: PathBuf,
    #[arg(long, default_value_t = 1000)]
    interval_ms: u64,
    #[arg(long, default_value_t = 1000)]
    backoff_ms: u64,
    #[arg(long, default_value_t = 30_000)]
    backoff_max_ms: u64,
    #[arg(long, default_value_t = 10_000)]
    backoff_reset_ms: u64,
    #[arg(long, default_value_t = 10_000)]
    startup_ms: u64,
    /// Extra argument for spawned `serve` commands; repeatable.
    #[arg(long = "serve-arg", allow_hyphen_values = true)]
    serve_args: Vec<String>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, ClapArgs)]
struct TrainArgs {
    file: PathBuf,
    #[arg(long)]
    subject: u64,
    #[arg(long)]
    config: PipelineConfig,
    #[command(flatten)]
    client: ClientOpts,
}

#[derive(Debug, ClapArgs)]
struct IdentArgs {
    file: PathBuf,
    #[arg(long)]
    config: PipelineConfig,
    /// The true subject, counted into the statistics database.
    #[arg(long)]
    expected: Option<u64>,
    #[command(flatten)]
    client: ClientOpts,
}

#[derive(Debug, ClapArgs)]
struct BatchArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// How long to keep retrying an item while its service is unavailable.
    #[arg(long, default_value_t = 30_000)]
    retry_ms: u64,
    #[command(flatten)]
    client: ClientOpts,
}

#[derive(Debug, ClapArgs)]
struct ChaosArgs {
    #[arg(long)]
    kill: ServiceKind,
    /// Delay before the kill, in milliseconds.
    #[arg(long, default_value_t = 0)]
    after: u64,
    #[arg(long, default_value = HOSTS_FILE)]
    hosts: PathBuf,
    /// Kill the instance at this endpoint instead of the current primary.
    #[arg(long)]
    endpoint: Option<Endpoint>,
}

#[derive(Debug, ClapArgs)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    speakers: usize,
    #[arg(long, default_value_t = 10)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Manifest configuration; repeatable. Defaults to NORMALIZE:FFT:EUCLIDEAN.
    #[arg(long)]
    config: Vec<PipelineConfig>,
    /// List every default configuration in the manifest.
    #[arg(long, conflicts_with = "config")]
    all_configs: bool,
}

#[derive(Debug, ClapArgs)]
struct StatusArgs {
    #[arg(long, default_value_t = format!("http://127.0.0.1:{DEFAULT_PORT}"))]
    monitor: String,
    /// Print the raw JSON.
    #[arg(long)]
    json: bool,
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Serve(a) => serve(a),
        Command::Monitor(a) => monitor(a),
        Command::Train(a) => train(a),
        Command::Ident(a) => ident(a),
        Command::Batch(a) => batch(a),
        Command::Chaos(a) => chaos(a),
        Command::Synth(a) => synth(a),
        Command::Status(a) => status(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("dmarf: {e}");
            e.exit_code()
        }
    }
}

static TERMINATE: AtomicBool = AtomicBool::new(false);

extern "C" fn on_signal(_: libc::c_int) {
    TERMINATE.store(true, Ordering::SeqCst);
}

/// Sets `flag` once SIGINT or SIGTERM arrives.
fn forward_termination(flag: Arc<AtomicBool>) {
    // SAFETY: the handler only stores to an atomic.
    unsafe {
        libc::signal(libc::SIGINT, on_signal as *const () as libc::sighandler_t);
        libc::signal(libc::SIGTERM, on_signal as *const () as libc::sighandler_t);
    }
    thread::spawn(move || loop {
        if TERMINATE.load(Ordering::SeqCst) {
            flag.store(true, Ordering::SeqCst);
            return;
        }
        thread::sleep(Duration::from_millis(50));
    });
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let registry = load_hosts(&a.hosts, None);
    let configured = match a.role {
        Mode::Primary => Some(registry.primary(a.kind)),
        Mode::Backup => registry.backup(a.kind),
    };
    let fallback = Registry::default_endpoint(a.kind);
    let (cfg_host, cfg_port) = match configured.as_ref().unwrap_or(&fallback) {
        Endpoint::Tcp { host, port } => (host.clone(), *port + if configured.is_none() { 100 } else { 0 }),
        Endpoint::Loop(_) => ("localhost".to_owned(), fallback.port().unwrap_or(0)),
    };
    let endpoint = Endpoint::tcp(a.host.unwrap_or(cfg_host), a.port.unwrap_or(cfg_port));
    let data = a
        .data
        .unwrap_or_else(|| PathBuf::from("dmarf-data").join(format!("{}-{}", a.kind.key(), endpoint.port().unwrap_or(0))));
    let mut cfg = NodeConfig::new(a.kind, endpoint, data);
    cfg.mode = a.role;
    cfg.registry = registry;
    cfg.monitor = a.monitor;
    cfg.primary = a.primary;
    cfg.recoverable = services::is_stateful(a.kind) && !a.basic;
    cfg.console_log = !a.quiet;
    cfg.timing = Timing {
        call_timeout: Duration::from_millis(a.call_timeout_ms),
        idle: Duration::from_millis(a.idle_ms),
        ping: Duration::from_millis(a.ping_ms),
        gossip: Duration::from_millis(a.gossip_ms),
        checkpoint_interval: Duration::from_millis(a.checkpoint_ms),
        wal_max_entries: a.wal_max,
    };
    let svc = services::start(cfg).map_err(|e| match e {
        ServiceError::Bind { .. } => CliError::Unavailable(e.to_string()),
        other => CliError::Domain(other.to_string()),
    })?;
    let stop = Arc::new(AtomicBool::new(false));
    forward_termination(Arc::clone(&stop));
    let watcher = {
        let stop = Arc::clone(&stop);
        let ep = svc.endpoint();
        thread::spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                thread::sleep(Duration::from_millis(50));
            }
            let _ = call(&ep, methods::SHUTDOWN, &CanonicalValue::map().build(), Duration::from_secs(1));
        })
    };
    svc.wait();
    stop.store(true, Ordering::SeqCst);
    let _ = watcher.join();
    Ok(())
}

fn monitor(a: MonitorArgs) -> Result<(), CliError> {
    let registry = load_hosts(&a.hosts, None);
    let cfg = MonitorConfig {
        interval: Duration::from_millis(a.interval_ms),
        backoff_base: Duration::from_millis(a.backoff_ms),
        backoff_max: Duration::from_millis(a.backoff_max_ms),
        backoff_reset: Duration::from_millis(a.backoff_reset_ms),
        startup_timeout: Duration::from_millis(a.startup_ms),
        services: Vec::new(),
    }
    .with_registry(&registry);
    std::fs::create_dir_all(&a.data).map_err(|e| CliError::Domain(format!("{}: {e}", a.data.display())))?;
    let log = Logger::open_in(&a.data, "monitor", "http").with_console(!a.quiet);
    let addr: SocketAddr = format!("{}:{}", a.bind, a.port)
        .parse()
        .map_err(|e| CliError::Usage(format!("bad bind address: {e}")))?;
    let launcher = if a.spawn {
        let exe = std::env::current_exe().map_err(|e| CliError::Domain(e.to_string()))?;
        let mut l = ProcessLauncher::new(exe, &a.data)
            .map_err(|e| CliError::Domain(e.to_string()))?
            .monitor(format!("http://{addr}"))
            .args(a.serve_args);
        if a.hosts.exists() {
            l = l.hosts(&a.hosts);
        }
        Some(Arc::new(l) as Arc<dyn crate::monitor::Launcher>)
    } else {
        None
    };
    let m = Monitor::new(cfg, launcher, log);
    let http = serve_http(Arc::clone(&m), addr).map_err(|e| CliError::Unavailable(format!("cannot bind {addr}: {e}")))?;
    m.logger().info(format!("monitor listening on {}", http.url()));
    if a.spawn {
        m.spawn_all();
    }
    let heartbeat = m.start();
    let stop = Arc::new(AtomicBool::new(false));
    forward_termination(Arc::clone(&stop));
    while !stop.load(Ordering::SeqCst) {
        thread::sleep(Duration::from_millis(50));
    }
    m.logger().info("monitor stopping");
    m.shutdown(true);
    let _ = heartbeat.join();
    http.stop();
    Ok(())
}

fn read_sample(path: &Path) -> Result<(Vec<u8>, SourceFormat), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
    let wav = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) || bytes.starts_with(b"RIFF");
    Ok((bytes, if wav { SourceFormat::WavPcm16 } else { SourceFormat::RawF64 }))
}

fn train_request(bytes: Vec<u8>, format: SourceFormat, subject: u64, config: &PipelineConfig, expect: Option<u64>) -> CanonicalValue {
    CanonicalValue::map()
        .with("bytes", bytes)
        .with("format", format.as_str())
        .with("subject", subject as i64)
        .with("config", config.to_string())
        .with_opt("expect_version", expect.map(|v| v as i64))
        .build()
}

fn ident_request(bytes: Vec<u8>, format: SourceFormat, config: &PipelineConfig, expected: Option<u64>) -> CanonicalValue {
    CanonicalValue::map()
        .with("bytes", bytes)
        .with("format", format.as_str())
        .with("config", config.to_string())
        .with_opt("expected", expected.map(|v| v as i64))
        .build()
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let (bytes, format) = read_sample(&a.file)?;
    let reg = a.client.registry(ServiceKind::SpeakerIdent);
    let req = train_request(bytes, format, a.subject, &a.config, None);
    let reply = call_with_failover(&reg, ServiceKind::SpeakerIdent, methods::TRAIN, &req, a.client.timeout())?;
    let version = reply.field("version").and_then(CanonicalValue::as_u64).unwrap_or(0);
    println!("trained subject {} with {} (version {version})", a.subject, a.config);
    Ok(())
}

fn ident(a: IdentArgs) -> Result<(), CliError> {
    let (bytes, format) = read_sample(&a.file)?;
    let reg = a.client.registry(ServiceKind::SpeakerIdent);
    let req = ident_request(bytes, format, &a.config, a.expected);
    let reply = call_with_failover(&reg, ServiceKind::SpeakerIdent, methods::IDENTIFY, &req, a.client.timeout())?;
    let subject = reply.field("subject_id").and_then(CanonicalValue::as_u64).map_err(|e| CliError::Domain(e.to_string()))?;
    let distance = reply.field("distance").and_then(CanonicalValue::as_f64).unwrap_or(f64::NAN);
    println!("subject {subject} distance {distance:.6}");
    Ok(())
}

/// Calls with retries while the target is unavailable, for at most `window`.
fn call_retrying(
    reg: &Registry,
    method: &str,
    req: &CanonicalValue,
    timeout: Duration,
    window: Duration,
) -> Result<CanonicalValue, CallError> {
    let deadline = Instant::now() + window;
    loop {
        match call_with_failover(reg, ServiceKind::SpeakerIdent, method, req, timeout) {
            Err(e) if is_unavailable(&e) && Instant::now() < deadline => thread::sleep(Duration::from_millis(200)),
            other => return other,
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
struct Tally {
    good: u64,
    bad: u64,
}

fn batch(a: BatchArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.manifest).map_err(|e| CliError::Domain(format!("{}: {e}", a.manifest.display())))?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&text, base).map_err(|e| CliError::Usage(format!("{}: {e}", a.manifest.display())))?;
    let reg = a.client.registry(ServiceKind::SpeakerIdent);
    let window = Duration::from_millis(a.retry_ms);
    let mut order: Vec<String> = Vec::new();
    let mut tallies: BTreeMap<String, Tally> = BTreeMap::new();
    let mut trained: BTreeMap<String, u64> = BTreeMap::new();
    let (mut failed, mut unavailable) = (0u64, 0u64);
    for e in &entries {
        let key = e.config.to_string();
        if !order.contains(&key) {
            order.push(key.clone());
        }
        let (bytes, format) = match read_sample(&e.path) {
            Ok(s) => s,
            Err(err) => {
                eprintln!("failed: {} {}: {err}", e.phase, e.path.display());
                failed += 1;
                continue;
            }
        };
        let result = match e.phase {
            Phase::Train => {
                let n = trained.entry(key.clone()).or_default();
                let req = train_request(bytes, format, e.subject, &e.config, Some(*n));
                let r = call_retrying(&reg, methods::TRAIN, &req, a.client.timeout(), window);
                if r.is_ok() {
                    *n += 1;
                }
                r.map(|_| ())
            }
            Phase::Test => {
                let req = ident_request(bytes, format, &e.config, Some(e.subject));
                call_retrying(&reg, methods::IDENTIFY, &req, a.client.timeout(), window).map(|reply| {
                    let t = tallies.entry(key.clone()).or_default();
                    if reply.field("subject_id").and_then(CanonicalValue::as_u64).ok() == Some(e.subject) {
                        t.good += 1;
                    } else {
                        t.bad += 1;
                    }
                })
            }
        };
        if let Err(err) = result {
            eprintln!("failed: {} {}: {err}", e.phase, e.path.display());
            failed += 1;
            unavailable += u64::from(is_unavailable(&err));
        }
    }
    println!("config,good,bad,accuracy%");
    for key in &order {
        let t = tallies.get(key).copied().unwrap_or_default();
        let total = t.good + t.bad;
        let pct = if total == 0 { 0.0 } else { 100.0 * t.good as f64 / total as f64 };
        println!("{key},{},{},{pct:.2}", t.good, t.bad);
    }
    eprintln!("batch: {} items, {failed} failed", entries.len());
    match (failed, unavailable) {
        (0, _) => Ok(()),
        (_, 0) => Err(CliError::Domain(format!("{failed} items failed"))),
        _ => Err(CliError::Unavailable(format!("{failed} items failed, {unavailable} unavailable"))),
    }
}

fn chaos(a: ChaosArgs) -> Result<(), CliError> {
    let candidates = match a.endpoint {
        Some(ep) => vec![ep],
        None => load_hosts(&a.hosts, None).endpoints(a.kill),
    };
    let empty = CanonicalValue::map().build();
    let pings: Vec<(Endpoint, CanonicalValue)> = candidates
        .into_iter()
        .filter_map(|ep| call(&ep, methods::PING, &empty, Duration::from_secs(1)).ok().map(|p| (ep, p)))
        .collect();
    let is_primary = |p: &CanonicalValue| p.field("mode").and_then(CanonicalValue::as_str).ok() == Some(Mode::Primary.as_str());
    let (ep, reply) = pings
        .iter()
        .find(|(_, p)| is_primary(p))
        .or_else(|| pings.first())
        .ok_or_else(|| CliError::Unavailable(format!("no running {} instance found", a.kill)))?;
    let pid = reply.field("pid").and_then(CanonicalValue::as_u64).map_err(|e| CliError::Domain(e.to_string()))?;
    thread::sleep(Duration::from_millis(a.after));
    // SAFETY: plain syscall on a pid reported by the service itself.
    if unsafe { libc::kill(pid as libc::pid_t, libc::SIGKILL) } != 0 {
        return Err(CliError::Domain(format!("kill {pid}: {}", std::io::Error::last_os_error())));
    }
    println!("killed {} pid {pid} at {ep}", a.kill);
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let opts = SynthOptions { speakers: a.speakers, samples: a.samples, seed: a.seed, ..Default::default() };
    if opts.speakers == 0 || opts.samples == 0 {
        return Err(CliError::Usage("--speakers and --samples must be positive".into()));
    }
    let configs = if a.all_configs {
        PipelineConfig::default_grid()
    } else if a.config.is_empty() {
        vec!["NORMALIZE:FFT:EUCLIDEAN".parse().expect("valid default config")]
    } else {
        a.config
    };
    let manifest = write_corpus(&a.out, &opts, &configs).map_err(|e| CliError::Domain(format!("{}: {e}", a.out.display())))?;
    println!("wrote {} samples and {} to {}", opts.speakers * opts.samples, MANIFEST_FILE, a.out.display());
    println!("manifest: {}", manifest.display());
    Ok(())
}

fn status(a: StatusArgs) -> Result<(), CliError> {
    let url = format!("{}/status", a.monitor.trim_end_matches('/'));
    let body = ureq::get(&url)
        .call()
        .and_then(|mut r| r.body_mut().read_to_string())
        .map_err(|e| CliError::Unavailable(format!("{url}: {e}")))?;
    if a.json {
        println!("{body}");
        return Ok(());
    }
    let rows: Vec<ServiceStatus> = serde_json::from_str(&body).map_err(|e| CliError::Domain(format!("{url}: {e}")))?;
    println!("{:<18} {:<22} {:<8} {:<11} {:>8} {:>8}", "KIND", "ENDPOINT", "ROLE", "LIVENESS", "RESTARTS", "WAL");
    for s in rows {
        let wal = s.wal.map(|w| w.entries.to_string()).unwrap_or_else(|| "-".into());
        println!(
            "{:<18} {:<22} {:<8} {:<11} {:>8} {:>8}",
            s.kind,
            s.endpoint,
            s.role.as_str(),
            s.liveness.to_string(),
            s.restart_count,
            wal
        );
    }
    Ok(())
}
