//! The experiment event loop: application arrivals are routed by the cache,
//! device requests are served by the engine, and at every interval boundary
//! the controller inspects the queues and may switch policy or move queued
//! cache requests to the disk subsystem.
//!
//! Same-instant ordering: completions (SSD, then HDD), then the interval
//! boundary, then arrivals.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::balancer::{BalancerKind, Controller, Lbica, NullWb, RatioVector, Sib, WorkloadClass};
use crate::cache::{CacheError, CacheState, FillOutcome, Submission, WritePolicy};
use crate::config::{RunConfig, WorkloadSource};
use crate::events::{Event, Removal};
use crate::sim::{AppRequest, Device, DeviceRole, Engine, IoRequest, Op, Origin, SimError, SimTime};
use crate::telemetry::{snapshot, IntervalCollector, IntervalStats, OriginCounts, TelemetryError};
use crate::workload::{self, TraceError, WorkloadError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("request stream is not sorted: request {id} arrives at {arrival}, before {previous}")]
    Unsorted {
        id: u64,
        arrival: SimTime,
        previous: SimTime,
    },
    #[error("{0} application requests never completed")]
    Incomplete(usize),
    #[error("writing event log: {0}")]
    EventLog(io::Error),
    #[error("writing {path}: {source}")]
    Output { path: PathBuf, source: io::Error },
    #[error("writing {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

/// One `intervals.csv` row.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalRow {
    pub stats: IntervalStats,
    /// Origin shares of the SSD queue at the boundary.
    pub ratios: RatioVector,
    pub burst: bool,
    pub class: WorkloadClass,
    /// Policy in force during the window.
    pub active_policy: WritePolicy,
    /// Policy chosen at the boundary, in force for the next window.
    pub policy: WritePolicy,
    /// Requests actually moved off the SSD queue at the boundary.
    pub bypass: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub balancer: BalancerKind,
    pub duration_us: u64,
    pub intervals: u64,
    pub burst_intervals: u64,
    pub app_requests: u64,
    pub latency_mean_us: f64,
    pub latency_median_us: u64,
    pub latency_p99_us: u64,
    pub latency_max_us: u64,
    pub submitted: OriginCounts,
    pub completed: OriginCounts,
    pub bypassed: u64,
    pub read_hits: u64,
    pub read_misses: u64,
    pub mean_ssd_qsize: f64,
    pub mean_hdd_qsize: f64,
    pub mean_ssd_qsize_burst: f64,
    pub mean_hdd_qsize_burst: f64,
    pub ssd_busy_us: u64,
    pub hdd_busy_us: u64,
}

impl RunSummary {
    pub fn hit_ratio(&self) -> f64 {
        let total = self.read_hits + self.read_misses;
        if total == 0 {
            0.0
        } else {
            self.read_hits as f64 / total as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub rows: Vec<IntervalRow>,
    pub summary: RunSummary,
    /// End-to-end latency of every application request, by request id.
    pub latencies: Vec<(u64, u64)>,
}

pub fn make_controller(cfg: &RunConfig) -> Box<dyn Controller> {
    match cfg.balancer {
        BalancerKind::NoneWb => Box::new(NullWb::new(cfg.theta_dom, cfg.qsize_smoothing)),
        BalancerKind::Sib => Box::new(Sib::new(cfg.theta_dom, cfg.qsize_smoothing)),
        BalancerKind::Lbica => Box::new(Lbica::new(
            cfg.theta_dom,
            cfg.qsize_smoothing,
            cfg.lbica_hold_policy,
        )),
    }
}

/// The application request stream a config describes.
pub fn load_requests(cfg: &RunConfig) -> Result<Vec<AppRequest>, RunError> {
    Ok(match &cfg.source {
        WorkloadSource::Scenario(phases) => workload::generate(phases, cfg.seed)?,
        WorkloadSource::Trace(path) => workload::load_trace_file(path)?,
    })
}

struct AppProgress {
    arrival: SimTime,
    legs: usize,
}

struct Sim<'w> {
    engine: Engine,
    cache: CacheState,
    collector: IntervalCollector,
    apps: HashMap<u64, AppProgress>,
    /// Disk read id -> block whose promotion waits on it.
    fills: HashMap<u64, u64>,
    /// Cache halves of write-through pairs still queued.
    mirrored: HashSet<u64>,
    latencies: Vec<(u64, u64)>,
    submitted: OriginCounts,
    completed: OriginCounts,
    read_hits: u64,
    read_misses: u64,
    bypassed: u64,
    log: Option<&'w mut dyn Write>,
}

fn dev(role: DeviceRole) -> usize {
    crate::telemetry::device_index(role)
}

impl Sim<'_> {
    fn emit(&mut self, e: Event) -> Result<(), RunError> {
        if let Some(w) = self.log.as_mut() {
            writeln!(w, "{e}").map_err(RunError::EventLog)?;
        }
        Ok(())
    }

    fn flush_cache_events(&mut self) -> Result<(), RunError> {
        let t = self.engine.clock();
        for event in self.cache.take_events() {
            self.emit(Event::Cache { t, event })?;
        }
        Ok(())
    }

    fn submit(&mut self, s: Submission, app: Option<u64>, arrival: SimTime) -> Result<u64, RunError> {
        let id = self.engine.allocate_id();
        let app = if s.origin.is_application() { app } else { None };
        let req = IoRequest::new(id, app, arrival, s.lba, s.op, s.origin, s.target)?;
        self.engine.submit(req)?;
        self.collector.record_submit(s.target, s.origin);
        self.submitted[dev(s.target)][s.origin.index()] += 1;
        self.emit(Event::Submit {
            t: self.engine.clock(),
            req: id,
            app,
            dev: s.target,
            op: s.op,
            origin: s.origin,
            lba: s.lba,
        })?;
        Ok(id)
    }

    fn leg_done(&mut self, app: u64) -> Result<(), RunError> {
        let progress = self.apps.get_mut(&app).expect("legs belong to live requests");
        progress.legs -= 1;
        if progress.legs == 0 {
            let arrival = progress.arrival;
            self.apps.remove(&app);
            let t = self.engine.clock();
            let latency = t.since(arrival);
            self.latencies.push((app, latency));
            self.emit(Event::AppDone { t, app, latency })?;
        }
        Ok(())
    }

    fn arrive(&mut self, req: &AppRequest) -> Result<(), RunError> {
        let now = self.engine.clock();
        self.emit(Event::Arrive {
            t: now,
            app: req.id,
            op: req.op(),
            lba: req.lba,
        })?;
        let plan = self.cache.access(req, now)?;
        self.flush_cache_events()?;
        if req.origin == Origin::R {
            match plan.immediate.first().map(|s| s.target) {
                Some(DeviceRole::Ssd) => self.read_hits += 1,
                _ => self.read_misses += 1,
            }
        }
        self.apps.insert(
            req.id,
            AppProgress {
                arrival: req.arrival,
                legs: plan.application_legs(),
            },
        );
        let write_through = plan
            .immediate
            .iter()
            .any(|s| s.origin == Origin::W && s.target == DeviceRole::Hdd)
            && plan
                .immediate
                .iter()
                .any(|s| s.origin == Origin::W && s.target == DeviceRole::Ssd);
        for s in &plan.immediate {
            let arrival = if s.origin.is_application() { req.arrival } else { now };
            let id = self.submit(*s, Some(req.id), arrival)?;
            if s.origin == Origin::R && s.target == DeviceRole::Hdd && plan.after_fill.is_some() {
                self.fills.insert(id, s.lba);
            }
            if write_through && s.origin == Origin::W && s.target == DeviceRole::Ssd {
                self.mirrored.insert(id);
            }
        }
        Ok(())
    }

    fn complete(&mut self, done: Vec<IoRequest>) -> Result<(), RunError> {
        for r in done {
            self.collector.record_completion(&r);
            self.completed[dev(r.target)][r.origin.index()] += 1;
            self.emit(Event::Complete {
                t: r.completed_at.unwrap_or(self.engine.clock()),
                req: r.id,
                app: r.app_id,
                dev: r.target,
                origin: r.origin,
                lba: r.lba,
            })?;
            self.mirrored.remove(&r.id);
            if let Some(app) = r.app_id {
                self.leg_done(app)?;
            }
            if let Some(lba) = self.fills.remove(&r.id) {
                let outcome = self.cache.complete_fill(lba);
                self.flush_cache_events()?;
                if let FillOutcome::Promote(s) = outcome {
                    let now = self.engine.clock();
                    self.submit(s, None, now)?;
                }
            }
        }
        Ok(())
    }

    /// Disposes of one request taken off the SSD tail.
    fn reroute(&mut self, r: IoRequest) -> Result<(), RunError> {
        let t = self.engine.clock();
        let action = match r.origin {
            Origin::R if self.cache.is_dirty(r.lba) => {
                let to = self.submit(
                    Submission {
                        target: DeviceRole::Ssd,
                        op: Op::Read,
                        origin: Origin::R,
                        lba: r.lba,
                    },
                    r.app_id,
                    r.arrival,
                )?;
                Removal::Requeued { to }
            }
            Origin::R => {
                let to = self.submit(
                    Submission {
                        target: DeviceRole::Hdd,
                        op: Op::Read,
                        origin: Origin::R,
                        lba: r.lba,
                    },
                    r.app_id,
                    r.arrival,
                )?;
                Removal::Rerouted { to }
            }
            Origin::W => {
                let writeback = self.cache.reroute_write(r.lba);
                self.flush_cache_events()?;
                if let Some(e) = writeback {
                    self.submit(e, None, t)?;
                }
                if self.mirrored.remove(&r.id) {
                    Removal::Dropped
                } else {
                    let to = self.submit(
                        Submission {
                            target: DeviceRole::Hdd,
                            op: Op::Write,
                            origin: Origin::W,
                            lba: r.lba,
                        },
                        r.app_id,
                        r.arrival,
                    )?;
                    Removal::Rerouted { to }
                }
            }
            Origin::P => {
                self.cache.discard_promotion(r.lba);
                self.flush_cache_events()?;
                Removal::Dropped
            }
            Origin::E => unreachable!("write-backs never queue on the cache device"),
        };
        self.emit(Event::Remove {
            t,
            req: r.id,
            app: r.app_id,
            origin: r.origin,
            lba: r.lba,
            action,
        })?;
        if action == Removal::Dropped {
            if let Some(app) = r.app_id {
                self.leg_done(app)?;
            }
        }
        Ok(())
    }

    fn boundary(&mut self, end: SimTime, controller: &mut dyn Controller) -> Result<IntervalRow, RunError> {
        self.engine.advance_to(end)?;
        let stats = self.collector.close_interval(end, &self.engine)?;
        let snap = snapshot(&self.engine);
        let outcome = controller.tick(&stats, &snap);
        let active_policy = self.cache.policy();
        self.cache.set_policy(outcome.decision.policy);
        self.flush_cache_events()?;
        let removal = self.engine.remove_tail(DeviceRole::Ssd, outcome.bypass as usize);
        let bypass = removal.removed.len() as u64;
        self.bypassed += bypass;
        // logged before the reroutes, whose submissions count toward the next window
        self.emit(Event::Interval {
            t: end,
            index: stats.interval_index,
            burst: outcome.decision.burst,
            class: outcome.decision.klass,
            policy: outcome.decision.policy,
            bypass,
        })?;
        for r in removal.removed {
            self.reroute(r)?;
        }
        Ok(IntervalRow {
            ratios: RatioVector::of_ssd_queue(&snap),
            stats,
            burst: outcome.decision.burst,
            class: outcome.decision.klass,
            active_policy,
            policy: outcome.decision.policy,
            bypass,
        })
    }
}

/// Runs `requests` (sorted by arrival) to completion under `cfg`. When `log`
/// is given, every event is written to it, one per line.
pub fn simulate(
    cfg: &RunConfig,
    requests: &[AppRequest],
    log: Option<&mut dyn Write>,
) -> Result<RunResult, RunError> {
    let l = cfg.latencies;
    let engine = Engine::new(
        Device::new(DeviceRole::Ssd, l.ssd_read_us, l.ssd_write_us)?,
        Device::new(DeviceRole::Hdd, l.hdd_read_us, l.hdd_write_us)?,
    );
    let mut controller = make_controller(cfg);
    let mut cache = CacheState::new(cfg.cache, controller.initial_policy())?;
    if let Some((start, count)) = cfg.prefill {
        cache.prefill(start, count)?;
        cache.take_events();
    }
    let mut sim = Sim {
        engine,
        cache,
        collector: IntervalCollector::new(),
        apps: HashMap::new(),
        fills: HashMap::new(),
        mirrored: HashSet::new(),
        latencies: Vec::with_capacity(requests.len()),
        submitted: OriginCounts::default(),
        completed: OriginCounts::default(),
        read_hits: 0,
        read_misses: 0,
        bypassed: 0,
        log,
    };
    if let Some(w) = sim.log.as_mut() {
        writeln!(
            w,
            "# config_hash={} scenario_hash={} balancer={}",
            cfg.config_hash(),
            cfg.scenario_hash(),
            cfg.balancer
        )
        .map_err(RunError::EventLog)?;
    }

    let interval = cfg.interval_us;
    let mut next_boundary = SimTime(interval);
    let mut rows = Vec::new();
    let mut next = 0usize;
    let mut previous = SimTime::ZERO;
    loop {
        let t_arrival = requests.get(next).map(|r| r.arrival);
        let t_completion = sim.engine.next_completion();
        let t_event = match (t_arrival, t_completion) {
            (Some(a), Some(c)) => a.min(c),
            (Some(a), None) => a,
            (None, Some(c)) => c,
            (None, None) => break,
        };
        if t_completion == Some(t_event) && t_event <= next_boundary {
            let done = sim.engine.step().expect("a completion is pending");
            sim.complete(done)?;
        } else if next_boundary <= t_event {
            rows.push(sim.boundary(next_boundary, controller.as_mut())?);
            next_boundary = next_boundary + interval;
        } else {
            let req = &requests[next];
            if req.arrival < previous {
                return Err(RunError::Unsorted {
                    id: req.id,
                    arrival: req.arrival,
                    previous,
                });
            }
            previous = req.arrival;
            sim.engine.advance_to(req.arrival)?;
            sim.arrive(req)?;
            next += 1;
        }
    }
    let end = sim.engine.clock();
    if end > sim.collector.window_start() {
        rows.push(sim.boundary(end, controller.as_mut())?);
    }
    if !sim.apps.is_empty() {
        return Err(RunError::Incomplete(sim.apps.len()));
    }
    for lba in sim.cache.dirty_blocks() {
        sim.emit(Event::ResidentDirty { t: end, lba })?;
    }
    if let Some(w) = sim.log.as_mut() {
        w.flush().map_err(RunError::EventLog)?;
    }

    let summary = summarize(cfg, &sim, &rows, end);
    Ok(RunResult {
        rows,
        summary,
        latencies: sim.latencies,
    })
}

fn mean(values: impl Iterator<Item = u64>) -> f64 {
    let (sum, n) = values.fold((0u128, 0u64), |(s, n), v| (s + v as u128, n + 1));
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}

/// Nearest-rank percentile of sorted data.
pub fn nearest_rank(sorted: &[u64], pct: u64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (pct as usize * sorted.len()).div_ceil(100).max(1);
    sorted[rank - 1]
}

fn summarize(cfg: &RunConfig, sim: &Sim<'_>, rows: &[IntervalRow], end: SimTime) -> RunSummary {
    let mut lat: Vec<u64> = sim.latencies.iter().map(|&(_, l)| l).collect();
    lat.sort_unstable();
    let burst = || rows.iter().filter(|r| r.burst);
    RunSummary {
        balancer: cfg.balancer,
        duration_us: end.micros(),
        intervals: rows.len() as u64,
        burst_intervals: burst().count() as u64,
        app_requests: lat.len() as u64,
        latency_mean_us: mean(lat.iter().copied()),
        latency_median_us: nearest_rank(&lat, 50),
        latency_p99_us: nearest_rank(&lat, 99),
        latency_max_us: lat.last().copied().unwrap_or(0),
        submitted: sim.submitted,
        completed: sim.completed,
        bypassed: sim.bypassed,
        read_hits: sim.read_hits,
        read_misses: sim.read_misses,
        mean_ssd_qsize: mean(rows.iter().map(|r| r.stats.ssd_qsize)),
        mean_hdd_qsize: mean(rows.iter().map(|r| r.stats.hdd_qsize)),
        mean_ssd_qsize_burst: mean(burst().map(|r| r.stats.ssd_qsize)),
        mean_hdd_qsize_burst: mean(burst().map(|r| r.stats.hdd_qsize)),
        ssd_busy_us: sim.engine.device(DeviceRole::Ssd).busy_time(),
        hdd_busy_us: sim.engine.device(DeviceRole::Hdd).busy_time(),
    }
}

const DEVICES: [(DeviceRole, &str); 2] = [(DeviceRole::Ssd, "ssd"), (DeviceRole::Hdd, "hdd")];

pub fn interval_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "config_hash",
        "interval",
        "start_us",
        "end_us",
        "ssd_qsize",
        "hdd_qsize",
        "cache_qtime",
        "disk_qtime",
        "ratio_r",
        "ratio_w",
        "ratio_p",
        "ratio_e",
        "burst",
        "class",
        "active_policy",
        "policy",
        "bypass",
        "ssd_submitted",
        "hdd_submitted",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for (_, d) in DEVICES {
        for o in Origin::ALL {
            h.push(format!("{d}_served_{}", o.as_str().to_lowercase()));
        }
    }
    for (_, d) in DEVICES {
        h.push(format!("{d}_max_latency_us"));
    }
    h
}

fn interval_record(hash: &str, r: &IntervalRow) -> Vec<String> {
    let s = &r.stats;
    let mut v = vec![
        hash.to_string(),
        s.interval_index.to_string(),
        s.window.0.to_string(),
        s.window.1.to_string(),
        s.ssd_qsize.to_string(),
        s.hdd_qsize.to_string(),
        s.cache_qtime.to_string(),
        s.disk_qtime.to_string(),
        format!("{:.4}", r.ratios.r),
        format!("{:.4}", r.ratios.w),
        format!("{:.4}", r.ratios.p),
        format!("{:.4}", r.ratios.e),
        r.burst.to_string(),
        r.class.to_string(),
        r.active_policy.to_string(),
        r.policy.to_string(),
        r.bypass.to_string(),
        s.submitted(DeviceRole::Ssd).to_string(),
        s.submitted(DeviceRole::Hdd).to_string(),
    ];
    for (role, _) in DEVICES {
        for o in Origin::ALL {
            v.push(s.served_counts[dev(role)][o.index()].to_string());
        }
    }
    for (role, _) in DEVICES {
        v.push(s.max_latency[dev(role)].to_string());
    }
    v
}

/// `metric,value` pairs of `summary.csv`, in file order.
pub fn summary_records(cfg: &RunConfig, s: &RunSummary) -> Vec<(String, String)> {
    let mut m: Vec<(String, String)> = vec![
        ("config_hash".into(), cfg.config_hash()),
        ("scenario_hash".into(), cfg.scenario_hash()),
        ("balancer".into(), s.balancer.to_string()),
        ("seed".into(), cfg.seed.to_string()),
        ("duration_us".into(), s.duration_us.to_string()),
        ("interval_us".into(), cfg.interval_us.to_string()),
        ("intervals".into(), s.intervals.to_string()),
        ("burst_intervals".into(), s.burst_intervals.to_string()),
        ("app_requests".into(), s.app_requests.to_string()),
        ("latency_mean_us".into(), format!("{:.3}", s.latency_mean_us)),
        ("latency_median_us".into(), s.latency_median_us.to_string()),
        ("latency_p99_us".into(), s.latency_p99_us.to_string()),
        ("latency_max_us".into(), s.latency_max_us.to_string()),
    ];
    for (kind, counts) in [("submitted", &s.submitted), ("completed", &s.completed)] {
        for (role, d) in DEVICES {
            for o in Origin::ALL {
                m.push((
                    format!("{d}_{kind}_{}", o.as_str().to_lowercase()),
                    counts[dev(role)][o.index()].to_string(),
                ));
            }
        }
    }
    m.extend([
        ("bypassed".into(), s.bypassed.to_string()),
        ("read_hits".into(), s.read_hits.to_string()),
        ("read_misses".into(), s.read_misses.to_string()),
        ("hit_ratio".into(), format!("{:.4}", s.hit_ratio())),
        ("mean_ssd_qsize".into(), format!("{:.3}", s.mean_ssd_qsize)),
        ("mean_hdd_qsize".into(), format!("{:.3}", s.mean_hdd_qsize)),
        ("mean_ssd_qsize_burst".into(), format!("{:.3}", s.mean_ssd_qsize_burst)),
        ("mean_hdd_qsize_burst".into(), format!("{:.3}", s.mean_hdd_qsize_burst)),
        ("ssd_busy_us".into(), s.ssd_busy_us.to_string()),
        ("hdd_busy_us".into(), s.hdd_busy_us.to_string()),
    ]);
    m
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> RunError + '_ {
    move |source| RunError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_intervals(path: &Path, cfg: &RunConfig, rows: &[IntervalRow]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(interval_header()).map_err(csv_err(path))?;
    let hash = cfg.config_hash();
    for r in rows {
        w.write_record(interval_record(&hash, r)).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| RunError::Output {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_summary(path: &Path, cfg: &RunConfig, s: &RunSummary) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["metric", "value"]).map_err(csv_err(path))?;
    for (k, v) in summary_records(cfg, s) {
        w.write_record([k, v]).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| RunError::Output {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs `cfg` and writes `intervals.csv`, `summary.csv` and, if asked,
/// `events.log` into `out`.
pub fn run_to_dir(cfg: &RunConfig, out: &Path, events_log: bool) -> Result<RunResult, RunError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RunError::Output { path, source }
    };
    fs::create_dir_all(out).map_err(io_err(out))?;
    let requests = load_requests(cfg)?;
    let result = if events_log {
        let path = out.join("events.log");
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        simulate(cfg, &requests, Some(&mut w))?
    } else {
        simulate(cfg, &requests, None)?
    };
    write_intervals(&out.join("intervals.csv"), cfg, &result.rows)?;
    write_summary(&out.join("summary.csv"), cfg, &result.summary)?;
    Ok(result)
}
