//! End-to-end checks shared by the integration tests and the acceptance
//! runner. Each panics on failure and returns a short summary on success.

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use dmarf_core::messaging::{call, call_with_failover, Endpoint, Frame, FrameKind, ServiceKind};
use dmarf_core::monitor::Liveness;
use dmarf_core::recognition::{
    extract_features, features_from_bytes, load_sample, FeatureMethod, PipelineConfig, Sample, SourceFormat,
};
use dmarf_core::replication::Mode;
use dmarf_core::services::{start, training_set_file, NodeConfig, RunningService, Timing};
use dmarf_core::storage::{deserialize, encode_object, serialize, write_atomic, Canonical, CanonicalValue, Database, Logger};
use dmarf_core::wal::{log_file_name, read_transactions, recover, replay_to, scan, RecordKind, WalOptions, WriteAheadLog};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles::{canonical_value, dft_mean_magnitudes, lpc_dense, max_abs_diff};
use super::procs::{kill9, pid_of, MonitorOpts, MonitorProc};
use super::{corpus, fast_timing, recognize_args, result_set, train_args, wait_until, Cluster, Oracle};

const T: Duration = Duration::from_secs(10);

fn fast_wal() -> WalOptions {
    WalOptions { sync: false, ..WalOptions::default() }
}

fn objects(dir: &Path, names: &[&str]) -> BTreeMap<String, Option<Vec<u8>>> {
    names.iter().map(|n| (n.to_string(), fs::read(dir.join(n)).ok())).collect()
}

fn put_objects(dir: &Path, objs: &BTreeMap<String, Option<Vec<u8>>>) {
    for (name, bytes) in objs {
        match bytes {
            Some(b) => fs::write(dir.join(name), b).unwrap(),
            None => {
                let _ = fs::remove_file(dir.join(name));
            }
        }
    }
}

// ---- write-ahead log ------------------------------------------------------

/// Commits 1..5 with a checkpoint after 3, then a crash during txn 6.
pub fn wal_checkpoint_rule() -> String {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let log = d.join(log_file_name("classification"));
    let snapshot = |i: u64| format!("trained state {i}").into_bytes();
    let mut wal = WriteAheadLog::open(&log, WalOptions::default()).unwrap();
    for i in 1..=5u64 {
        assert_eq!(wal.write_object(&format!("obj{i}.gzbin"), &snapshot(i)).unwrap(), i);
        if i == 3 {
            assert_eq!(wal.checkpoint().unwrap(), 3);
        }
    }
    // Txn 6 overwrites obj2 and dies mid-dump.
    let before = fs::read(d.join("obj2.gzbin")).unwrap();
    assert_eq!(wal.begin("obj2.gzbin", Some(&before)).unwrap(), 6);
    fs::write(d.join("obj2.gzbin"), b"torn").unwrap();
    drop(wal);

    // Damage beyond the checkpoint is repaired; below it nothing is touched.
    fs::remove_file(d.join("obj4.gzbin")).unwrap();
    fs::write(d.join("obj5.gzbin"), b"stale").unwrap();
    fs::write(d.join("obj1.gzbin"), b"edited").unwrap();

    let report = recover(&log).unwrap();
    assert_eq!(report.applied, [4, 5]);
    assert_eq!(report.rolled_back, [6]);
    assert_eq!(fs::read(d.join("obj4.gzbin")).unwrap(), snapshot(4));
    assert_eq!(fs::read(d.join("obj5.gzbin")).unwrap(), snapshot(5));
    assert_eq!(fs::read(d.join("obj2.gzbin")).unwrap(), before);
    assert_eq!(before, snapshot(2));
    assert_eq!(fs::read(d.join("obj3.gzbin")).unwrap(), snapshot(3));
    assert_eq!(fs::read(d.join("obj1.gzbin")).unwrap(), b"edited");
    format!("applied={:?} rolled_back={:?}", report.applied, report.rolled_back)
}

/// Crashes at every byte of log growth and at every object write of a
/// scripted run; recovery must land each object on its last committed
/// snapshot in the surviving log prefix, and a second recovery must change
/// nothing.
pub fn wal_every_prefix_recovers() -> String {
    const NAMES: [&str; 2] = ["x.bin", "y.bin"];
    let live = tempfile::tempdir().unwrap();
    let log = live.path().join("svc-wal.bin");
    fs::write(live.path().join("x.bin"), b"x initial").unwrap();
    let initial = objects(live.path(), &NAMES);

    let mut wal = WriteAheadLog::open(&log, fast_wal()).unwrap();
    let mut states = vec![(Vec::new(), initial.clone())];
    let capture = |states: &mut Vec<(Vec<u8>, BTreeMap<String, Option<Vec<u8>>>)>| {
        states.push((fs::read(&log).unwrap(), objects(live.path(), &NAMES)));
    };
    // (end offset of the COMMIT record, object, after bytes)
    let mut commits: Vec<(usize, &str, Vec<u8>)> = Vec::new();
    for i in 0..9usize {
        let name = NAMES[i % 2];
        let path = live.path().join(name);
        let before = fs::read(&path).ok();
        let id = wal.begin(name, before.as_deref()).unwrap();
        capture(&mut states);
        if i == 5 {
            // Failed dump: nothing written, transaction aborted.
            wal.abort(id).unwrap();
            capture(&mut states);
            continue;
        }
        let after = format!("{name} version {i}").into_bytes();
        write_atomic(&path, &after).unwrap();
        capture(&mut states);
        if i == 8 {
            break; // left in flight with its dump on disk
        }
        wal.commit(id, &after).unwrap();
        capture(&mut states);
        commits.push((fs::metadata(&log).unwrap().len() as usize, name, after));
        if i == 2 {
            wal.checkpoint().unwrap();
            capture(&mut states);
        }
    }
    drop(wal);

    let mut crash_points = vec![states[0].clone()];
    for pair in states.windows(2) {
        let ((prev_log, prev_objs), (log_bytes, objs)) = (&pair[0], &pair[1]);
        if log_bytes.len() > prev_log.len() {
            assert!(log_bytes.starts_with(prev_log));
            for len in prev_log.len() + 1..=log_bytes.len() {
                crash_points.push((log_bytes[..len].to_vec(), prev_objs.clone()));
            }
        } else {
            crash_points.push((log_bytes.clone(), objs.clone()));
        }
    }

    for (log_bytes, objs) in &crash_points {
        let mut expected = initial.clone();
        for (end, name, after) in &commits {
            if *end <= log_bytes.len() {
                expected.insert(name.to_string(), Some(after.clone()));
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("svc-wal.bin");
        fs::write(&path, log_bytes).unwrap();
        put_objects(dir.path(), objs);
        recover(&path).unwrap();
        let once = objects(dir.path(), &NAMES);
        assert_eq!(once, expected, "crash with {} log bytes", log_bytes.len());
        let again = recover(&path).unwrap();
        assert!(again.applied.is_empty() && again.rolled_back.is_empty(), "second recovery did work: {again:?}");
        assert_eq!(objects(dir.path(), &NAMES), once);
    }
    format!("{} crash points, recovery idempotent at each", crash_points.len())
}

/// Garbage collection must not change what recovery produces.
pub fn wal_gc_preserves_recovery() -> String {
    let names: Vec<String> = (0..5).map(|i| format!("set{i}.gzbin")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let live = tempfile::tempdir().unwrap();
    let log = live.path().join("svc-wal.bin");
    let mut wal = WriteAheadLog::open(&log, WalOptions { max_entries: 10_000, ..fast_wal() }).unwrap();
    for i in 0..400usize {
        wal.write_object(&names[i % names.len()], format!("v{i}").as_bytes()).unwrap();
        if i == 150 {
            wal.checkpoint().unwrap();
        }
    }
    let before = fs::read(live.path().join(&names[0])).unwrap();
    wal.begin(&names[0], Some(&before)).unwrap();
    fs::write(live.path().join(&names[0]), b"half written").unwrap();
    drop(wal);

    let copy = tempfile::tempdir().unwrap();
    fs::copy(&log, copy.path().join("svc-wal.bin")).unwrap();
    put_objects(copy.path(), &objects(live.path(), &refs));

    let mut wal = WriteAheadLog::open(&log, WalOptions { max_entries: 100, ..fast_wal() }).unwrap();
    let report = wal.gc().unwrap();
    assert_eq!(wal.stats().in_flight, 1);
    assert!(wal.stats().entries <= 100);
    drop(wal);

    recover(&log).unwrap();
    recover(&copy.path().join("svc-wal.bin")).unwrap();
    let (a, b) = (objects(live.path(), &refs), objects(copy.path(), &refs));
    assert_eq!(a, b);
    assert_eq!(a[&names[0]].as_deref(), Some(before.as_slice()));
    format!("gc removed {} txns; recovered objects identical", report.removed_count())
}

/// Entry cap after 1,500 commits, both on demand and while running.
pub fn wal_cap() -> String {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("a-wal.bin");
    let mut wal = WriteAheadLog::open(&log, WalOptions { max_entries: 2000, ..fast_wal() }).unwrap();
    for i in 1..=1500u64 {
        wal.write_object(&format!("o{}.bin", i % 7), &i.to_be_bytes()).unwrap();
    }
    drop(wal);
    let mut wal = WriteAheadLog::open(&log, fast_wal()).unwrap();
    assert_eq!(wal.stats().entries, 1500);
    let report = wal.gc().unwrap();
    assert_eq!(report.removed_count(), 500);
    assert!(report.removed.iter().all(|r| r.txn_id <= 500));
    drop(wal);
    let kept: Vec<u64> = read_transactions(&scan(&fs::read(&log).unwrap()).records).unwrap().into_keys().collect();
    assert_eq!(kept, (501..=1500).collect::<Vec<_>>());

    let log = dir.path().join("b-wal.bin");
    let mut wal = WriteAheadLog::open(&log, fast_wal()).unwrap();
    let mut peak = 0;
    for i in 1..=1500u64 {
        wal.write_object(&format!("o{}.bin", i % 7), &i.to_be_bytes()).unwrap();
        peak = peak.max(wal.stats().entries);
    }
    let live = read_transactions(&scan(&fs::read(&log).unwrap()).records).unwrap();
    assert!(peak <= 1000, "peak {peak}");
    assert!(live.len() <= 1000);
    assert_eq!(live.keys().next_back(), Some(&1500));
    format!("explicit gc kept 501..=1500; running log peaked at {peak} entries")
}

/// Checkpoint spacing in a live Classification log under steady training.
pub fn checkpoint_cadence() -> String {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = NodeConfig::new(ServiceKind::Classification, Endpoint::tcp("127.0.0.1", 0), dir.path());
    cfg.timing = Timing { checkpoint_interval: Duration::from_millis(1000), ..fast_timing() };
    let svc = start(cfg).unwrap();
    let config: PipelineConfig = "NORMALIZE:MINMAX:EUCLIDEAN".parse().unwrap();
    let (_, corpus) = corpus();
    let fvs: Vec<_> =
        corpus.iter().map(|s| (features_from_bytes(&s.wav, SourceFormat::WavPcm16, &config).unwrap(), s.subject)).collect();
    let began = Instant::now();
    let mut n = 0;
    while began.elapsed() < Duration::from_millis(5500) {
        let (fv, subject) = &fvs[n % fvs.len()];
        let args = CanonicalValue::map()
            .with("fv", fv.to_canonical())
            .with("subject", *subject as i64)
            .with("config", config.to_string())
            .build();
        call(&svc.endpoint(), "train", &args, T).unwrap();
        n += 1;
        std::thread::sleep(Duration::from_millis(10));
    }
    let bytes = fs::read(dir.path().join(log_file_name("classification"))).unwrap();
    svc.stop();
    let stamps: Vec<u64> =
        scan(&bytes).records.iter().filter(|r| r.record.kind == RecordKind::Checkpoint).map(|r| r.record.ts_ms).collect();
    let gaps: Vec<u64> = stamps.windows(2).map(|w| w[1] - w[0]).collect();
    assert!(gaps.len() >= 3, "only {} checkpoints in 5.5 s", stamps.len());
    assert!(gaps.iter().all(|g| (975..=2000).contains(g)), "gaps {gaps:?}");
    format!("{n} trains, checkpoint gaps {gaps:?} ms")
}

/// Object states at chosen instants, from timestamps under test control.
pub fn point_in_time() -> String {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("svc-wal.bin");
    fs::write(dir.path().join("a.bin"), b"a0").unwrap();
    let now = Arc::new(AtomicU64::new(0));
    let clock = Arc::clone(&now);
    let mut wal = WriteAheadLog::open(&log, fast_wal()).unwrap().with_clock(move || clock.load(Ordering::SeqCst));
    for (t, name, bytes) in [(100, "a.bin", "a1"), (200, "a.bin", "a2"), (250, "b.bin", "b1"), (300, "a.bin", "a3")] {
        now.store(t, Ordering::SeqCst);
        wal.write_object(name, bytes.as_bytes()).unwrap();
    }
    now.store(400, Ordering::SeqCst);
    let id = wal.begin("b.bin", Some(b"b1")).unwrap();
    drop(wal);
    let _ = id;

    let at = |t| {
        replay_to(&log, t)
            .unwrap()
            .into_iter()
            .map(|(k, v)| (k, v.map(|b| String::from_utf8(b).unwrap())))
            .collect::<BTreeMap<_, _>>()
    };
    let s = |a: &str, b: Option<&str>| BTreeMap::from([("a.bin".to_owned(), Some(a.to_owned())), ("b.bin".to_owned(), b.map(str::to_owned))]);
    assert_eq!(at(0), s("a0", None));
    assert_eq!(at(150), s("a1", None));
    assert_eq!(at(260), s("a2", Some("b1")));
    assert_eq!(at(u64::MAX), s("a3", Some("b1")));

    fs::remove_file(dir.path().join("a.bin")).unwrap();
    recover(&log).unwrap();
    let recovered = objects(dir.path(), &["a.bin", "b.bin"]);
    let full: BTreeMap<String, Option<Vec<u8>>> = replay_to(&log, u64::MAX).unwrap();
    assert_eq!(recovered, full);
    "t=0, 150, 260 and +inf match the scripted timeline".into()
}

// ---- properties -----------------------------------------------------------

pub fn codec_round_trip(cases: u32) -> String {
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner
        .run(&canonical_value(), |v| {
            let bytes = serialize(&v).unwrap();
            let back = deserialize(&bytes).unwrap();
            prop_assert_eq!(&back, &v);
            prop_assert_eq!(serialize(&back).unwrap(), bytes);
            Ok(())
        })
        .unwrap();
    format!("{cases} random values")
}

pub fn frame_round_trip(cases: u32) -> String {
    let kind = prop_oneof![Just(FrameKind::Request), Just(FrameKind::Reply), Just(FrameKind::Fault)];
    let frame = (kind, any::<u64>(), ".{0,24}", prop::collection::vec(any::<u8>(), 0..256))
        .prop_map(|(kind, request_id, method, payload)| Frame { kind, request_id, method, payload });
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner
        .run(&frame, |f| {
            prop_assert_eq!(&Frame::decode(&f.encode()).unwrap(), &f);
            let mut wire = Vec::new();
            f.write_to(&mut wire).unwrap();
            prop_assert_eq!(&Frame::read_from(&mut Cursor::new(wire)).unwrap(), &f);
            Ok(())
        })
        .unwrap();
    format!("{cases} random frames")
}

fn test_signals() -> Vec<Sample> {
    let (_, corpus) = corpus();
    let mut out: Vec<Sample> = corpus.iter().step_by(7).map(|s| load_sample(&s.wav, SourceFormat::WavPcm16).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for len in [300usize, 1000, 2048] {
        let noise: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        out.push(Sample::new(noise, 8000, SourceFormat::RawF64).unwrap());
    }
    out
}

pub fn fft_matches_dft() -> String {
    let mut worst = 0.0f64;
    for sample in test_signals() {
        for (window, bins) in [(512, 256), (64, 32), (100, 50)] {
            let method = FeatureMethod::Fft { window_size: window, feature_count: bins };
            let got = extract_features(&sample, &method).unwrap();
            let want = dft_mean_magnitudes(&sample.samples, window, bins);
            worst = worst.max(max_abs_diff(&got.values, &want));
        }
    }
    assert!(worst <= 1e-9, "max |fft - dft| = {worst:e}");
    format!("max |fft - dft| = {worst:.2e}")
}

pub fn lpc_matches_dense_solve() -> String {
    let mut worst = 0.0f64;
    for sample in test_signals() {
        for (order, window) in [(20, 512), (12, 256), (4, 64)] {
            let got = extract_features(&sample, &FeatureMethod::Lpc { order, window_size: window }).unwrap();
            let want = lpc_dense(&sample.samples, order, window);
            worst = worst.max(max_abs_diff(&got.values, &want));
        }
    }
    assert!(worst <= 1e-8, "max |levinson - dense| = {worst:e}");
    format!("max |levinson - dense| = {worst:.2e}")
}

/// Lines from concurrent callers of one logger: well formed, one per call,
/// timestamps non-decreasing in file order, per-caller order kept.
pub fn log_monotonicity() -> String {
    let dir = tempfile::tempdir().unwrap();
    let logger = Arc::new(Logger::open_in(dir.path(), "classification", "tcp").with_console(false));
    std::thread::scope(|s| {
        for t in 0..4 {
            let logger = Arc::clone(&logger);
            s.spawn(move || {
                for i in 0..250 {
                    logger.info(format!("writer {t} line {i}"));
                }
            });
        }
    });
    let text = fs::read_to_string(logger.path()).unwrap();
    let re = regex::Regex::new(r"^\[(\d{4}-\d\d-\d\dT\d\d:\d\d:\d\d\.\d{3}Z)\]: writer (\d) line (\d+)$").unwrap();
    let mut last_ts = String::new();
    let mut next = [0usize; 4];
    let mut lines = 0;
    for line in text.lines() {
        let c = re.captures(line).unwrap_or_else(|| panic!("malformed line {line:?}"));
        assert!(c[1] >= *last_ts, "timestamp went backwards at {line:?}");
        last_ts = c[1].to_owned();
        let (t, i): (usize, usize) = (c[2].parse().unwrap(), c[3].parse().unwrap());
        assert_eq!(i, next[t]);
        next[t] += 1;
        lines += 1;
    }
    assert_eq!(lines, 1000);
    "1000 lines, timestamps non-decreasing".into()
}

// ---- services -------------------------------------------------------------

/// Every `recognize` through the distributed pipeline equals the in-process
/// composition, for each configuration of the default grid.
pub fn distributed_equals_local() -> String {
    let began = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cluster = Cluster::start(dir.path(), None);
    let (opts, corpus) = corpus();
    let grid = PipelineConfig::default_grid();
    let mut compared = 0;
    for config in &grid {
        let mut oracle = Oracle::new(*config);
        for s in corpus.iter().filter(|s| s.is_training(opts.samples)) {
            cluster.call(ServiceKind::Pipeline, "train", train_args(&s.wav, s.subject, config, None)).unwrap();
            oracle.train(&s.wav, s.subject);
        }
        for s in &corpus {
            let got = cluster.call(ServiceKind::Pipeline, "recognize", recognize_args(&s.wav, config)).unwrap();
            assert_eq!(result_set(&got), oracle.classify(&s.wav), "{config} {}", s.file_name);
            compared += 1;
        }
        let stored = cluster.service(ServiceKind::Classification).node().object_bytes(&training_set_file(config)).unwrap();
        assert_eq!(stored, encode_object(&oracle.set.to_canonical(), true).unwrap(), "{config} stored set");
    }
    let took = began.elapsed();
    assert!(took < Duration::from_secs(120), "took {took:?}");
    format!("{} configs, {compared} result sets identical, {:.1} s", grid.len(), took.as_secs_f64())
}

/// Accuracy of the separable corpus, first from the local oracle, then
/// through SpeakerIdent.
pub fn synthetic_accuracy() -> String {
    let config: PipelineConfig = "NORMALIZE:FFT:EUCLIDEAN".parse().unwrap();
    let (opts, corpus) = corpus();
    let (train, test): (Vec<_>, Vec<_>) = corpus.iter().partition(|s| s.is_training(opts.samples));
    let mut oracle = Oracle::new(config);
    for s in &train {
        oracle.train(&s.wav, s.subject);
    }
    let mut local = Database::new(config.canonical_name(), 0);
    for s in &test {
        local.record_result(s.subject, &oracle.classify(&s.wav), 0);
    }
    let local_acc = local.accuracy().unwrap();
    assert!(local_acc >= 0.9, "local oracle accuracy {local_acc}");

    let dir = tempfile::tempdir().unwrap();
    let cluster = Cluster::start(dir.path(), None);
    for s in &train {
        cluster.call(ServiceKind::SpeakerIdent, "train", train_args(&s.wav, s.subject, &config, None)).unwrap();
    }
    for s in &test {
        let args = CanonicalValue::map()
            .with("bytes", s.wav.clone())
            .with("config", config.to_string())
            .with("expected", s.subject as i64)
            .build();
        cluster.call(ServiceKind::SpeakerIdent, "identify", args).unwrap();
    }
    let stats = cluster.call(ServiceKind::SpeakerIdent, "stats", CanonicalValue::map().with("config", config.to_string()).build()).unwrap();
    let db = Database::from_canonical(&stats).unwrap();
    let acc = db.accuracy().unwrap();
    assert!(acc >= 0.9, "distributed accuracy {acc}");
    assert_eq!(db.subjects, local.subjects);
    format!("local {:.2}%, distributed {:.2}% over {} test samples", local_acc * 100.0, acc * 100.0, test.len())
}

fn classification_node(dir: &Path, peers: Vec<Endpoint>) -> RunningService {
    let mut cfg = NodeConfig::new(ServiceKind::Classification, Endpoint::tcp("127.0.0.1", 0), dir);
    cfg.timing = fast_timing();
    cfg.registry.set_peers(ServiceKind::Classification, peers);
    start(cfg).unwrap()
}

fn fv_args(wav: &[u8], config: &PipelineConfig) -> dmarf_core::storage::MapBuilder {
    let fv = features_from_bytes(wav, SourceFormat::WavPcm16, config).unwrap();
    CanonicalValue::map().with("fv", fv.to_canonical()).with("config", config.to_string())
}

fn counter(endpoint: &Endpoint, field: &str) -> u64 {
    super::ping(endpoint).unwrap().field(field).unwrap().as_u64().unwrap()
}

/// Train a configuration on node A only; node B's first request for it is
/// served by a transfer from A.
pub fn gossip_transfer() -> String {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let config: PipelineConfig = "SILENCE_REMOVE:LPC:CHEBYSHEV".parse().unwrap();
    let a = classification_node(d1.path(), vec![]);
    let b = classification_node(d2.path(), vec![a.endpoint()]);
    let (opts, corpus) = corpus();
    let training: Vec<_> = corpus.iter().filter(|s| s.is_training(opts.samples)).collect();
    for (i, s) in training.iter().enumerate() {
        let args = fv_args(&s.wav, &config).with("subject", s.subject as i64).with("expect_version", i as i64).build();
        call(&a.endpoint(), "train", &args, T).unwrap();
    }
    // B sees the same batch replayed from its start.
    let first = fv_args(&training[0].wav, &config).with("subject", training[0].subject as i64).with("expect_version", 0).build();
    let reply = call(&b.endpoint(), "train", &first, T).unwrap();
    assert_eq!(reply.field("applied").unwrap().as_i64().unwrap(), 0);
    assert_eq!(reply.field("version").unwrap().as_u64().unwrap(), training.len() as u64);
    assert_eq!(counter(&b.endpoint(), "transfers"), 1);
    assert_eq!(counter(&b.endpoint(), "local_trains"), 0);
    let file = training_set_file(&config);
    assert_eq!(a.node().object_bytes(&file), b.node().object_bytes(&file));
    for s in &corpus {
        let args = fv_args(&s.wav, &config).build();
        let (ra, rb) = (call(&a.endpoint(), "classify", &args, T).unwrap(), call(&b.endpoint(), "classify", &args, T).unwrap());
        assert_eq!(serialize(&ra).unwrap(), serialize(&rb).unwrap());
    }
    format!("1 transfer, 0 local trains on B, {} classify replies byte-identical", corpus.len())
}

// ---- fault drills ---------------------------------------------------------

fn drill_config() -> PipelineConfig {
    "NORMALIZE:FFT:EUCLIDEAN".parse().unwrap()
}

fn stored_set(endpoint: &Endpoint) -> Vec<u8> {
    let args = CanonicalValue::map().with("config", drill_config().to_string()).build();
    call(endpoint, "transfer", &args, T).unwrap().field("set").unwrap().as_bytes().unwrap().to_vec()
}

/// Sends one idempotent train, retrying through outages. Returns when the
/// update is acknowledged.
fn train_until_acked(send: impl Fn(&CanonicalValue) -> Result<CanonicalValue, dmarf_core::messaging::CallError>, args: &CanonicalValue) -> u64 {
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        match send(args) {
            Ok(reply) => return reply.field("version").unwrap().as_u64().unwrap(),
            Err(e) if Instant::now() < deadline => {
                let _ = e;
                std::thread::sleep(Duration::from_millis(25));
            }
            Err(e) => panic!("train never acknowledged: {e}"),
        }
    }
}

/// kill -9 of the Classification process at 20 random points of a
/// 100-train batch, with the monitor restarting it each time.
pub fn crash_kill_drill() -> String {
    let dir = tempfile::tempdir().unwrap();
    let m = MonitorProc::start(dir.path(), MonitorOpts::default());
    assert!(m.wait_all_up(Duration::from_secs(20)), "{}", m.dump());
    let ep = m.hosts.primary(ServiceKind::Classification);
    let config = drill_config();
    let (_, corpus) = corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut points: Vec<usize> = rand::seq::index::sample(&mut rng, 95, 20).into_vec();
    points.sort_unstable();
    let delays: Vec<u64> = (0..20).map(|_| rng.random_range(0..15)).collect();

    let acked = AtomicUsize::new(0);
    let kills = std::thread::scope(|s| {
        let chaos = s.spawn(|| {
            let mut killed = Vec::new();
            for (k, (&at, &delay)) in points.iter().zip(&delays).enumerate() {
                assert!(wait_until(Duration::from_secs(60), || acked.load(Ordering::SeqCst) >= at));
                let st = || m.status_of(ServiceKind::Classification, &ep);
                assert!(wait_until(Duration::from_secs(30), || st().liveness == Liveness::Up && st().restart_count == k as u32));
                std::thread::sleep(Duration::from_millis(delay));
                let pid = pid_of(&ep).expect("classification answers before a kill");
                kill9(pid);
                killed.push((acked.load(Ordering::SeqCst), pid));
            }
            killed
        });
        let mut oracle = Oracle::new(config);
        for i in 0..100usize {
            let s = &corpus[i % corpus.len()];
            let args = fv_args(&s.wav, &config).with("subject", s.subject as i64).with("expect_version", i as i64).build();
            let version = train_until_acked(|a| call(&ep, "train", a, Duration::from_secs(2)), &args);
            oracle.train(&s.wav, s.subject);
            assert_eq!(version, i as u64 + 1, "acknowledged version of train {i}");
            acked.store(i + 1, Ordering::SeqCst);
        }
        let killed = chaos.join().unwrap();
        assert!(
            wait_until(Duration::from_secs(30), || {
                let st = m.status_of(ServiceKind::Classification, &ep);
                st.liveness == Liveness::Up && st.restart_count == 20
            }),
            "{:?}",
            m.status_of(ServiceKind::Classification, &ep)
        );
        assert!(wait_until(T, || pid_of(&ep).is_some()));
        assert_eq!(stored_set(&ep), encode_object(&oracle.set.to_canonical(), true).unwrap(), "final training set");
        killed
    });
    let distinct: std::collections::BTreeSet<u32> = kills.iter().map(|k| k.1).collect();
    assert_eq!(distinct.len(), 20);
    format!("20 kills at trains {:?}; final set equals oracle, restart_count 20", kills.iter().map(|k| k.0).collect::<Vec<_>>())
}

/// Kill the Classification primary while a client trains through the
/// registry; the backup takes over and the restarted process rejoins as
/// the new backup.
pub fn failover_under_load() -> String {
    let dir = tempfile::tempdir().unwrap();
    let m = MonitorProc::start(dir.path(), MonitorOpts { classification_backup: true, ..MonitorOpts::default() });
    assert!(m.wait_all_up(Duration::from_secs(20)), "{}", m.dump());
    let (p, b) = (m.hosts.primary(ServiceKind::Classification), m.hosts.backup(ServiceKind::Classification).unwrap());
    let backup_of = |ep: &Endpoint| {
        super::ping(ep).and_then(|r| r.opt_field("backup").ok().flatten().and_then(|v| v.as_str().ok().map(str::to_owned)))
    };
    assert!(wait_until(T, || backup_of(&p) == Some(b.to_string())), "{}", m.dump());
    // Watchdog settings passed to every spawned service.
    let (idle, ping) = (Duration::from_millis(1000), Duration::from_millis(500));

    let config = drill_config();
    let (_, corpus) = corpus();
    let mut oracle = Oracle::new(config);
    let registry = m.hosts.registry.clone();
    let mut killed_at = None;
    let mut first_after = None;
    for i in 0..60usize {
        if i == 20 {
            kill9(pid_of(&p).unwrap());
            killed_at = Some(Instant::now());
        }
        let s = &corpus[i % corpus.len()];
        let args = fv_args(&s.wav, &config).with("subject", s.subject as i64).with("expect_version", i as i64).build();
        let version = train_until_acked(
            |a| call_with_failover(&registry, ServiceKind::Classification, "train", a, Duration::from_secs(2)),
            &args,
        );
        oracle.train(&s.wav, s.subject);
        assert_eq!(version, i as u64 + 1);
        if i == 20 {
            first_after = Some(killed_at.unwrap().elapsed());
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    let window = first_after.unwrap();
    let bound = idle + ping + Duration::from_secs(2);
    assert!(window <= bound, "unavailable for {window:?}, bound {bound:?}");

    let provisioned = wait_until(Duration::from_secs(10), || {
        let (sp, sb) = (m.status_of(ServiceKind::Classification, &p), m.status_of(ServiceKind::Classification, &b));
        sb.role == Mode::Primary && sb.liveness == Liveness::Up && sp.role == Mode::Backup && sp.liveness == Liveness::Up
            && backup_of(&b) == Some(p.to_string())
    });
    assert!(provisioned, "{:?}\n{}", m.statuses(), m.dump());
    let expected = encode_object(&oracle.set.to_canonical(), true).unwrap();
    assert_eq!(stored_set(&b), expected, "new primary lost an acknowledged update");
    // A backup refuses business calls; read its object file instead.
    let mirror = m.data.join(format!("classification-{}", p.port().unwrap())).join(training_set_file(&config));
    assert!(wait_until(T, || fs::read(&mirror).ok().as_ref() == Some(&expected)), "new backup not in sync");
    format!("unavailable {:.2} s (bound {:.1} s); old backup is primary, restarted process is its backup", window.as_secs_f64(), bound.as_secs_f64())
}
