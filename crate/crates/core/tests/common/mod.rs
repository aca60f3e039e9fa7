//! Shared helpers for integration tests: loading the committed scenarios,
//! running with an in-memory event log, and replaying that log with an
//! accounting model that shares no code with the simulator.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::path::{Path, PathBuf};

use tiersim::cache::{CacheEvent, WritePolicy};
use tiersim::config::{RawConfig, RunConfig};
use tiersim::events::{parse_header, parse_log, Event};
use tiersim::runner::{load_requests, simulate, RunResult};
use tiersim::sim::{DeviceRole, Origin, SimTime};

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn scenario_path(name: &str) -> PathBuf {
    repo_root().join("scenarios").join(format!("{name}.conf"))
}

pub const SCENARIOS: [&str; 3] = ["random_read", "mixed", "write_intensive"];
pub const BALANCERS: [&str; 3] = ["none-wb", "sib", "lbica"];

/// A committed scenario with some keys overridden.
pub fn scenario(name: &str, overrides: &[(&str, &str)]) -> RunConfig {
    let path = scenario_path(name);
    let text = std::fs::read_to_string(&path).expect("scenario file");
    let mut raw = RawConfig::parse(&text).expect("scenario parses");
    for (k, v) in overrides {
        raw.set(k, *v);
    }
    RunConfig::from_raw(&raw, path.parent().unwrap()).expect("scenario is valid")
}

pub fn config_from(text: &str) -> RunConfig {
    RunConfig::parse(text, Path::new(".")).expect("valid config")
}

pub struct LoggedRun {
    pub cfg: RunConfig,
    pub result: RunResult,
    pub log: String,
}

pub fn run_logged(cfg: &RunConfig) -> LoggedRun {
    let requests = load_requests(cfg).expect("workload");
    let mut buf = Vec::new();
    let result = simulate(cfg, &requests, Some(&mut buf)).expect("run succeeds");
    LoggedRun {
        cfg: cfg.clone(),
        result,
        log: String::from_utf8(buf).expect("utf-8 log"),
    }
}

pub fn run_plain(cfg: &RunConfig) -> RunResult {
    let requests = load_requests(cfg).expect("workload");
    simulate(cfg, &requests, None).expect("run succeeds")
}

/// What replaying an event log found.
#[derive(Debug, Default)]
pub struct Audit {
    pub violations: Vec<String>,
    pub apps: u64,
    pub device_requests: u64,
    /// Dirty periods that ended with a write-back.
    pub epochs_written_back: u64,
    /// Dirty periods still open at the end (block resident and dirty).
    pub epochs_resident: u64,
    pub promotions_under_wo: u64,
    pub cache_writes_under_ro: u64,
    pub wo_intervals: u64,
    pub ro_intervals: u64,
}

impl Audit {
    pub fn assert_clean(&self, what: &str) {
        assert!(
            self.violations.is_empty(),
            "{what}: {} violations, first: {:?}",
            self.violations.len(),
            &self.violations[..self.violations.len().min(5)]
        );
    }
}

fn initial_policy(log: &str) -> WritePolicy {
    let header: HashMap<String, String> = parse_header(log).into_iter().collect();
    match header.get("balancer").map(String::as_str) {
        Some("sib") => WritePolicy::WT,
        _ => WritePolicy::WB,
    }
}

/// Replays a log and checks request conservation and dirty-block
/// accounting: every application request completes exactly once, every
/// device request ends exactly once (completed or taken off a queue), and
/// every block that became dirty was written back exactly once or is still
/// resident and dirty at the end.
pub fn audit(log: &str) -> Audit {
    let events = parse_log(log).expect("log parses");
    let mut a = Audit::default();
    let mut policy = initial_policy(log);
    let mut arrived: HashMap<u64, SimTime> = HashMap::new();
    let mut done: HashSet<u64> = HashSet::new();
    let mut open_reqs: HashMap<u64, (DeviceRole, Origin)> = HashMap::new();
    let mut ended_reqs: HashSet<u64> = HashSet::new();
    let mut dirty: BTreeSet<u64> = BTreeSet::new();
    let mut dirty_removals = 0u64;
    let mut writebacks = 0u64;
    let mut resident_dirty: BTreeSet<u64> = BTreeSet::new();
    let mut last_t = SimTime(0);

    for e in &events {
        let t = match e {
            Event::Arrive { t, .. }
            | Event::Submit { t, .. }
            | Event::Complete { t, .. }
            | Event::AppDone { t, .. }
            | Event::Remove { t, .. }
            | Event::Cache { t, .. }
            | Event::Interval { t, .. }
            | Event::ResidentDirty { t, .. } => *t,
        };
        if t < last_t {
            a.violations.push(format!("time went backwards at {e:?}"));
        }
        last_t = t;
        match e {
            Event::Arrive { t, app, .. } => {
                if arrived.insert(*app, *t).is_some() {
                    a.violations.push(format!("app {app} arrived twice"));
                }
            }
            Event::AppDone { t, app, latency } => match arrived.get(app) {
                None => a.violations.push(format!("app {app} done before arriving")),
                Some(arr) => {
                    if !done.insert(*app) {
                        a.violations.push(format!("app {app} completed twice"));
                    }
                    if t.0 - arr.0 != *latency {
                        a.violations.push(format!("app {app} latency {latency} != {}", t.0 - arr.0));
                    }
                }
            },
            Event::Submit {
                req,
                app,
                dev,
                origin,
                lba,
                ..
            } => {
                a.device_requests += 1;
                if open_reqs.insert(*req, (*dev, *origin)).is_some() || ended_reqs.contains(req) {
                    a.violations.push(format!("request {req} submitted twice"));
                }
                if let Some(app) = app {
                    if !arrived.contains_key(app) || done.contains(app) {
                        a.violations.push(format!("request {req} serves app {app} outside its lifetime"));
                    }
                }
                match (*dev, *origin, policy) {
                    (_, Origin::P, WritePolicy::WO) => a.promotions_under_wo += 1,
                    (DeviceRole::Ssd, Origin::W, WritePolicy::RO) => a.cache_writes_under_ro += 1,
                    _ => {}
                }
                if *origin == Origin::E {
                    writebacks += 1;
                    if !dirty.remove(lba) {
                        a.violations.push(format!("write-back of block {lba} that was not dirty"));
                    } else {
                        a.epochs_written_back += 1;
                    }
                }
            }
            Event::Complete { req, dev, origin, .. } => {
                match open_reqs.remove(req) {
                    None => a.violations.push(format!("request {req} ended without being open")),
                    Some((d, o)) if (d, o) != (*dev, *origin) => {
                        a.violations.push(format!("request {req} changed identity"))
                    }
                    Some(_) => {}
                }
                ended_reqs.insert(*req);
            }
            Event::Remove { req, origin, .. } => {
                match open_reqs.remove(req) {
                    None => a.violations.push(format!("request {req} removed without being open")),
                    Some((d, o)) if (d, o) != (DeviceRole::Ssd, *origin) => {
                        a.violations.push(format!("request {req} removed from the wrong queue"))
                    }
                    Some(_) => {}
                }
                ended_reqs.insert(*req);
            }
            Event::Cache { event, .. } => match event {
                CacheEvent::Dirtied { lba, .. } => {
                    if !dirty.insert(*lba) {
                        a.violations.push(format!("block {lba} dirtied while already dirty"));
                    }
                }
                CacheEvent::Evicted { dirty: true, .. } | CacheEvent::Invalidated { dirty: true, .. } => {
                    dirty_removals += 1;
                }
                CacheEvent::PolicyChanged { from, to } => {
                    if *from != policy {
                        a.violations.push(format!("policy change from {from} while {policy} active"));
                    }
                    policy = *to;
                }
                _ => {}
            },
            Event::Interval { policy: p, .. } => {
                if *p != policy {
                    a.violations.push(format!("interval chose {p} but cache runs {policy}"));
                }
                match policy {
                    WritePolicy::WO => a.wo_intervals += 1,
                    WritePolicy::RO => a.ro_intervals += 1,
                    _ => {}
                }
            }
            Event::ResidentDirty { lba, .. } => {
                resident_dirty.insert(*lba);
            }
        }
    }

    a.apps = arrived.len() as u64;
    for app in arrived.keys() {
        if !done.contains(app) {
            a.violations.push(format!("app {app} never completed"));
        }
    }
    if !open_reqs.is_empty() {
        a.violations.push(format!("{} device requests never ended", open_reqs.len()));
    }
    if dirty != resident_dirty {
        a.violations.push(format!(
            "open dirty periods {:?} differ from blocks dirty at the end {:?}",
            dirty.iter().take(5).collect::<Vec<_>>(),
            resident_dirty.iter().take(5).collect::<Vec<_>>()
        ));
    }
    if dirty_removals != writebacks {
        a.violations.push(format!(
            "{dirty_removals} dirty blocks left the cache but {writebacks} write-backs were issued"
        ));
    }
    a.epochs_resident = resident_dirty.len() as u64;
    a
}

/// Interval statistics rebuilt from the log alone.
#[derive(Clone, Debug, PartialEq)]
pub struct Recount {
    pub index: u64,
    pub end: u64,
    pub served: [[u64; 4]; 2],
    pub submitted: [[u64; 4]; 2],
    pub ssd_qsize: u64,
    pub hdd_qsize: u64,
    /// In-queue SSD requests by origin at the boundary.
    pub ssd_inqueue: [u64; 4],
    pub bypass: u64,
}

fn d(role: DeviceRole) -> usize {
    match role {
        DeviceRole::Ssd => 0,
        DeviceRole::Hdd => 1,
    }
}

fn o(origin: Origin) -> usize {
    match origin {
        Origin::R => 0,
        Origin::W => 1,
        Origin::P => 2,
        Origin::E => 3,
    }
}

pub fn recount_intervals(log: &str) -> Vec<Recount> {
    let mut rows = Vec::new();
    let mut served = [[0u64; 4]; 2];
    let mut submitted = [[0u64; 4]; 2];
    let mut outstanding: HashMap<u64, (DeviceRole, Origin)> = HashMap::new();
    for e in parse_log(log).expect("log parses") {
        match e {
            Event::Submit { req, dev, origin, .. } => {
                submitted[d(dev)][o(origin)] += 1;
                outstanding.insert(req, (dev, origin));
            }
            Event::Complete { req, dev, origin, .. } => {
                served[d(dev)][o(origin)] += 1;
                outstanding.remove(&req);
            }
            Event::Remove { req, .. } => {
                outstanding.remove(&req);
            }
            Event::Interval { t, index, bypass, .. } => {
                let mut ssd_inqueue = [0u64; 4];
                let mut q = [0u64; 2];
                for (dev, origin) in outstanding.values() {
                    q[d(*dev)] += 1;
                    if *dev == DeviceRole::Ssd {
                        ssd_inqueue[o(*origin)] += 1;
                    }
                }
                rows.push(Recount {
                    index,
                    end: t.0,
                    served: std::mem::take(&mut served),
                    submitted: std::mem::take(&mut submitted),
                    ssd_qsize: q[0],
                    hdd_qsize: q[1],
                    ssd_inqueue,
                    bypass,
                });
            }
            _ => {}
        }
    }
    rows
}

/// Burst-interval SSD submissions of `run`, over the burst intervals of `reference`.
pub fn burst_ssd_submissions(run: &RunResult, reference: &RunResult) -> (u64, u64) {
    let burst: BTreeSet<u64> = reference
        .rows
        .iter()
        .filter(|r| r.burst)
        .map(|r| r.stats.interval_index)
        .collect();
    let sum = |res: &RunResult| {
        res.rows
            .iter()
            .filter(|r| burst.contains(&r.stats.interval_index))
            .map(|r| r.stats.submitted(DeviceRole::Ssd))
            .sum::<u64>()
    };
    (sum(run), sum(reference))
}

/// Brute-force write-back LRU: a recency list (front = most recent) with
/// dirty bits, scanned linearly.
pub struct LruModel {
    pub capacity: usize,
    pub blocks: VecDeque<(u64, bool)>,
}

impl LruModel {
    pub fn new(capacity: usize) -> Self {
        LruModel {
            capacity,
            blocks: VecDeque::new(),
        }
    }

    /// Returns (hit, dirty victim written back).
    pub fn access(&mut self, lba: u64, write: bool) -> (bool, Option<u64>) {
        if let Some(pos) = self.blocks.iter().position(|&(b, _)| b == lba) {
            let (_, dirty) = self.blocks.remove(pos).unwrap();
            self.blocks.push_front((lba, dirty || write));
            return (true, None);
        }
        let mut writeback = None;
        if self.blocks.len() == self.capacity {
            let (victim, dirty) = self.blocks.pop_back().unwrap();
            if dirty {
                writeback = Some(victim);
            }
        }
        self.blocks.push_front((lba, write));
        (false, writeback)
    }
}

