//! Load-balancing controllers invoked at every interval boundary.
//!
//! Three controllers share one interface:
//!
//! - [`NullWb`]: write-back cache, never intervenes.
//! - [`Sib`]: selective bypass on a write-through cache. Estimates the wait
//!   of each in-queue SSD request from the tail inward and redirects those
//!   the disk subsystem would serve sooner.
//! - [`Lbica`]: detects an SSD bottleneck from the queue times of both tiers,
//!   characterizes the workload from the origins of the requests queued on
//!   the SSD, and assigns the write policy that sheds the dominant kind of
//!   cache traffic. Write-intensive bursts keep write-back and bypass only
//!   the tail of the SSD queue.
//!
//! Every controller reports the same burst flag and workload class, so runs
//! with different balancers produce directly comparable interval rows.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::cache::WritePolicy;
use crate::sim::DeviceRole;
use crate::telemetry::{IntervalStats, QueueSnapshot};

/// Fractions of in-queue SSD requests by origin.
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct RatioVector {
    pub r: f64,
    pub w: f64,
    pub p: f64,
    pub e: f64,
}

impl RatioVector {
    pub fn new(r: f64, w: f64, p: f64, e: f64) -> Self {
        RatioVector { r, w, p, e }
    }

    /// Ratios from per-origin counts `[R, W, P, E]`; all zero for an empty queue.
    pub fn from_counts(counts: [u64; 4]) -> Self {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return RatioVector::default();
        }
        let t = total as f64;
        RatioVector {
            r: counts[0] as f64 / t,
            w: counts[1] as f64 / t,
            p: counts[2] as f64 / t,
            e: counts[3] as f64 / t,
        }
    }

    pub fn of_ssd_queue(snapshot: &QueueSnapshot) -> Self {
        Self::from_counts(snapshot.origin_counts(DeviceRole::Ssd))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum WorkloadClass {
    RandomRead,
    MixedReadWrite,
    RandomWrite,
    SequentialWrite,
    SequentialRead,
    Unclassified,
}

impl WorkloadClass {
    pub fn as_str(self) -> &'static str {
        match self {
            WorkloadClass::RandomRead => "random-read",
            WorkloadClass::MixedReadWrite => "mixed-read-write",
            WorkloadClass::RandomWrite => "random-write",
            WorkloadClass::SequentialWrite => "sequential-write",
            WorkloadClass::SequentialRead => "sequential-read",
            WorkloadClass::Unclassified => "unclassified",
        }
    }
}

impl fmt::Display for WorkloadClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WorkloadClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            WorkloadClass::RandomRead,
            WorkloadClass::MixedReadWrite,
            WorkloadClass::RandomWrite,
            WorkloadClass::SequentialWrite,
            WorkloadClass::SequentialRead,
            WorkloadClass::Unclassified,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
        .ok_or_else(|| format!("unknown workload class `{s}`"))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct PolicyDecision {
    pub policy: WritePolicy,
    pub tail_bypass: bool,
    pub bypass_depth: u64,
    pub klass: WorkloadClass,
    pub burst: bool,
}

/// The cache is the bottleneck when its queue time strictly exceeds the disk's.
pub fn detect_bottleneck(stats: &IntervalStats) -> bool {
    stats.cache_qtime > stats.disk_qtime
}

/// Maps in-queue ratios to a workload class. `theta_dom` is the share a
/// group's request types must reach to "mainly" make up the queue.
///
/// A promotion-dominated queue is a sequential read. Otherwise each pair
/// rule (W+E write-intensive, R+P random read, R+W mixed) fires when its
/// share reaches `theta_dom`; when two fire, the larger share wins. On an
/// exact tie the single-kind group wins over mixed, so a queue of pure hits
/// is a random read and a queue of pure writes is write-intensive.
pub fn classify(ratios: &RatioVector, theta_dom: f64) -> WorkloadClass {
    let RatioVector { r, w, p, e } = *ratios;
    if p >= theta_dom {
        return WorkloadClass::SequentialRead;
    }
    let write_intensive = if w > e {
        WorkloadClass::RandomWrite
    } else {
        WorkloadClass::SequentialWrite
    };
    // tie order: earlier entries win
    let rules = [
        (w + e, write_intensive),
        (r + p, WorkloadClass::RandomRead),
        (r + w, WorkloadClass::MixedReadWrite),
    ];
    let mut best: Option<(f64, WorkloadClass)> = None;
    for (share, class) in rules {
        if share >= theta_dom && best.is_none_or(|(b, _)| share > b) {
            best = Some((share, class));
        }
    }
    best.map_or(WorkloadClass::Unclassified, |(_, c)| c)
}

/// Policy for a characterized interval. Outside bursts the cache runs
/// write-back. `bypass_depth` is left at zero; callers fill it in with
/// [`compute_bypass_depth`] when `tail_bypass` is set.
pub fn assign_policy(klass: WorkloadClass, burst: bool) -> PolicyDecision {
    let (policy, tail_bypass) = if !burst {
        (WritePolicy::WB, false)
    } else {
        match klass {
            WorkloadClass::RandomRead => (WritePolicy::WO, false),
            WorkloadClass::MixedReadWrite => (WritePolicy::RO, false),
            WorkloadClass::RandomWrite
            | WorkloadClass::SequentialWrite
            | WorkloadClass::Unclassified => (WritePolicy::WB, true),
            WorkloadClass::SequentialRead => (WritePolicy::WB, false),
        }
    };
    PolicyDecision {
        policy,
        tail_bypass,
        bypass_depth: 0,
        klass,
        burst,
    }
}

/// Smallest number of tail requests to move from the SSD to the disk queue
/// so that the remaining cache queue time no longer exceeds the disk's:
/// the least `k` with `(ssd_q - k) * ssd_lat <= (hdd_q + k) * hdd_lat`.
pub fn compute_bypass_depth(stats: &IntervalStats) -> u64 {
    let ls = stats.ssd_latency_avg as u128;
    let lh = stats.hdd_latency_avg as u128;
    let excess = (stats.ssd_qsize as u128 * ls).saturating_sub(stats.hdd_qsize as u128 * lh);
    excess.div_ceil(ls + lh) as u64
}

/// Burst detector with optional smoothing over the last `window` intervals.
/// A window of 1 compares the instantaneous queue times.
#[derive(Clone, Debug)]
pub struct Detector {
    window: usize,
    history: VecDeque<(u64, u64)>,
}

impl Detector {
    pub fn new(window: usize) -> Self {
        Detector {
            window: window.max(1),
            history: VecDeque::new(),
        }
    }

    pub fn detect(&mut self, stats: &IntervalStats) -> bool {
        if self.window == 1 {
            return detect_bottleneck(stats);
        }
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back((stats.cache_qtime, stats.disk_qtime));
        let (cache, disk) = self
            .history
            .iter()
            .fold((0u128, 0u128), |(c, d), &(qc, qd)| (c + qc as u128, d + qd as u128));
        cache > disk
    }
}

impl Default for Detector {
    fn default() -> Self {
        Detector::new(1)
    }
}

/// What a controller wants done at an interval boundary.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TickOutcome {
    pub decision: PolicyDecision,
    /// Requests to move from the tail of the SSD queue to the disk subsystem.
    pub bypass: u64,
}

pub trait Controller {
    fn kind(&self) -> BalancerKind;

    /// Policy the cache starts the run with.
    fn initial_policy(&self) -> WritePolicy;

    fn tick(&mut self, stats: &IntervalStats, snapshot: &QueueSnapshot) -> TickOutcome;
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum BalancerKind {
    NoneWb,
    Sib,
    Lbica,
}

impl BalancerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BalancerKind::NoneWb => "none-wb",
            BalancerKind::Sib => "sib",
            BalancerKind::Lbica => "lbica",
        }
    }
}

impl fmt::Display for BalancerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BalancerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none-wb" => Ok(BalancerKind::NoneWb),
            "sib" => Ok(BalancerKind::Sib),
            "lbica" => Ok(BalancerKind::Lbica),
            other => Err(format!("unknown balancer `{other}` (expected none-wb, sib or lbica)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct NullWb {
    detector: Detector,
    theta_dom: f64,
}

impl NullWb {
    pub fn new(theta_dom: f64, smoothing: usize) -> Self {
        NullWb {
            detector: Detector::new(smoothing),
            theta_dom,
        }
    }
}

impl Controller for NullWb {
    fn kind(&self) -> BalancerKind {
        BalancerKind::NoneWb
    }

    fn initial_policy(&self) -> WritePolicy {
        WritePolicy::WB
    }

    fn tick(&mut self, stats: &IntervalStats, snapshot: &QueueSnapshot) -> TickOutcome {
        let burst = self.detector.detect(stats);
        let klass = classify(&RatioVector::of_ssd_queue(snapshot), self.theta_dom);
        TickOutcome {
            decision: PolicyDecision {
                policy: WritePolicy::WB,
                tail_bypass: false,
                bypass_depth: 0,
                klass,
                burst,
            },
            bypass: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sib {
    detector: Detector,
    theta_dom: f64,
}

impl Sib {
    pub fn new(theta_dom: f64, smoothing: usize) -> Self {
        Sib {
            detector: Detector::new(smoothing),
            theta_dom,
        }
    }

    /// Walks the SSD queue from the tail. A request at 1-based position `pos`
    /// waits an estimated `pos * ssd_lat`; it is bypassed while that exceeds
    /// the disk wait `(hdd_q + bypassed) * hdd_lat`. The request in service
    /// (position 1) is never bypassed.
    pub fn sib_tick(&self, stats: &IntervalStats, snapshot: &QueueSnapshot) -> u64 {
        let depth = snapshot.ssd_inqueue.len() as u64;
        let ls = stats.ssd_latency_avg as u128;
        let lh = stats.hdd_latency_avg as u128;
        let mut bypassed = 0u64;
        for pos in (2..=depth).rev() {
            let wait = pos as u128 * ls;
            if wait > (stats.hdd_qsize + bypassed) as u128 * lh {
                bypassed += 1;
            } else {
                break;
            }
        }
        bypassed
    }
}

impl Controller for Sib {
    fn kind(&self) -> BalancerKind {
        BalancerKind::Sib
    }

    fn initial_policy(&self) -> WritePolicy {
        WritePolicy::WT
    }

    fn tick(&mut self, stats: &IntervalStats, snapshot: &QueueSnapshot) -> TickOutcome {
        let burst = self.detector.detect(stats);
        let klass = classify(&RatioVector::of_ssd_queue(snapshot), self.theta_dom);
        TickOutcome {
            decision: PolicyDecision {
                policy: WritePolicy::WT,
                tail_bypass: false,
                bypass_depth: 0,
                klass,
                burst,
            },
            bypass: self.sib_tick(stats, snapshot),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Lbica {
    detector: Detector,
    theta_dom: f64,
    hold_policy: bool,
    current: WritePolicy,
}

impl Lbica {
    /// With `hold_policy`, a policy assigned in a burst interval stays in
    /// force until a later burst interval assigns another; otherwise every
    /// calm interval reverts the cache to write-back.
    pub fn new(theta_dom: f64, smoothing: usize, hold_policy: bool) -> Self {
        Lbica {
            detector: Detector::new(smoothing),
            theta_dom,
            hold_policy,
            current: WritePolicy::WB,
        }
    }

    pub fn current_policy(&self) -> WritePolicy {
        self.current
    }

    pub fn lbica_tick(&mut self, stats: &IntervalStats, snapshot: &QueueSnapshot) -> PolicyDecision {
        let burst = self.detector.detect(stats);
        let klass = classify(&RatioVector::of_ssd_queue(snapshot), self.theta_dom);
        let mut decision = assign_policy(klass, burst);
        if burst {
            if decision.tail_bypass {
                decision.bypass_depth = compute_bypass_depth(stats);
            }
        } else if self.hold_policy {
            decision.policy = self.current;
        }
        self.current = decision.policy;
        decision
    }
}

impl Controller for Lbica {
    fn kind(&self) -> BalancerKind {
        BalancerKind::Lbica
    }

    fn initial_policy(&self) -> WritePolicy {
        WritePolicy::WB
    }

    fn tick(&mut self, stats: &IntervalStats, snapshot: &QueueSnapshot) -> TickOutcome {
        let decision = self.lbica_tick(stats, snapshot);
        TickOutcome {
            decision,
            bypass: if decision.tail_bypass {
                decision.bypass_depth
            } else {
                0
            },
        }
    }
}
