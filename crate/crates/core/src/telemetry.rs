//! Per-interval queue statistics and in-queue request snapshots: the
//! simulated counterpart of sampling `iostat` and `blktrace`.

use thiserror::Error;

use crate::sim::{DeviceRole, Engine, IoRequest, Origin, SimTime};

/// Worst-case queue wait of each tier: pending requests times the average
/// service latency. Returns `(cache_qtime, disk_qtime)` in µs.
pub fn compute_queue_times(
    ssd_qsize: u64,
    ssd_latency_avg: u64,
    hdd_qsize: u64,
    hdd_latency_avg: u64,
) -> (u64, u64) {
    (ssd_qsize * ssd_latency_avg, hdd_qsize * hdd_latency_avg)
}

/// Point-in-time copy of both device queues, in service order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QueueSnapshot {
    pub taken_at: SimTime,
    pub ssd_inqueue: Vec<(u64, Origin)>,
    pub hdd_inqueue: Vec<(u64, Origin)>,
}

impl QueueSnapshot {
    pub fn inqueue(&self, role: DeviceRole) -> &[(u64, Origin)] {
        match role {
            DeviceRole::Ssd => &self.ssd_inqueue,
            DeviceRole::Hdd => &self.hdd_inqueue,
        }
    }

    /// Pending requests per origin, indexed by [`Origin::index`].
    pub fn origin_counts(&self, role: DeviceRole) -> [u64; 4] {
        let mut counts = [0u64; 4];
        for (_, o) in self.inqueue(role) {
            counts[o.index()] += 1;
        }
        counts
    }
}

pub fn snapshot(engine: &Engine) -> QueueSnapshot {
    let tags = |role| {
        engine
            .device(role)
            .pending()
            .map(|r: &IoRequest| (r.id, r.origin))
            .collect()
    };
    QueueSnapshot {
        taken_at: engine.clock(),
        ssd_inqueue: tags(DeviceRole::Ssd),
        hdd_inqueue: tags(DeviceRole::Hdd),
    }
}

/// Counts per device (SSD = 0, HDD = 1) and origin.
pub type OriginCounts = [[u64; 4]; 2];

pub fn device_index(role: DeviceRole) -> usize {
    match role {
        DeviceRole::Ssd => 0,
        DeviceRole::Hdd => 1,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntervalStats {
    pub interval_index: u64,
    /// `(start, end]`: completions strictly after `start` and up to `end`.
    pub window: (SimTime, SimTime),
    pub ssd_qsize: u64,
    pub hdd_qsize: u64,
    pub ssd_latency_avg: u64,
    pub hdd_latency_avg: u64,
    pub cache_qtime: u64,
    pub disk_qtime: u64,
    pub served_counts: OriginCounts,
    pub submitted_counts: OriginCounts,
    /// Largest `completed_at - arrival` per device within the window.
    pub max_latency: [u64; 2],
}

impl IntervalStats {
    pub fn served(&self, role: DeviceRole) -> u64 {
        self.served_counts[device_index(role)].iter().sum()
    }

    pub fn submitted(&self, role: DeviceRole) -> u64 {
        self.submitted_counts[device_index(role)].iter().sum()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TelemetryError {
    #[error("window ending at {end} overlaps the previous window ending at {start}")]
    Overlap { start: SimTime, end: SimTime },
    #[error("window end {end} is past the simulation clock {clock}")]
    Future { end: SimTime, clock: SimTime },
}

/// Streaming per-window counters.
#[derive(Clone, Debug, Default)]
pub struct IntervalCollector {
    next_index: u64,
    window_start: SimTime,
    served: OriginCounts,
    submitted: OriginCounts,
    max_latency: [u64; 2],
}

impl IntervalCollector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn window_start(&self) -> SimTime {
        self.window_start
    }

    pub fn record_submit(&mut self, role: DeviceRole, origin: Origin) {
        self.submitted[device_index(role)][origin.index()] += 1;
    }

    pub fn record_completion(&mut self, req: &IoRequest) {
        let d = device_index(req.target);
        self.served[d][req.origin.index()] += 1;
        if let Some(lat) = req.latency() {
            self.max_latency[d] = self.max_latency[d].max(lat);
        }
    }

    /// Emits the statistics of the window `(previous end, end]` and resets
    /// the windowed counters. Queue depths are read from `engine` as they
    /// stand now.
    pub fn close_interval(
        &mut self,
        end: SimTime,
        engine: &Engine,
    ) -> Result<IntervalStats, TelemetryError> {
        if end <= self.window_start {
            return Err(TelemetryError::Overlap {
                start: self.window_start,
                end,
            });
        }
        if end > engine.clock() {
            return Err(TelemetryError::Future {
                end,
                clock: engine.clock(),
            });
        }
        let ssd = engine.device(DeviceRole::Ssd);
        let hdd = engine.device(DeviceRole::Hdd);
        let ssd_qsize = ssd.qsize() as u64;
        let hdd_qsize = hdd.qsize() as u64;
        let (cache_qtime, disk_qtime) = compute_queue_times(
            ssd_qsize,
            ssd.average_latency(),
            hdd_qsize,
            hdd.average_latency(),
        );
        let stats = IntervalStats {
            interval_index: self.next_index,
            window: (self.window_start, end),
            ssd_qsize,
            hdd_qsize,
            ssd_latency_avg: ssd.average_latency(),
            hdd_latency_avg: hdd.average_latency(),
            cache_qtime,
            disk_qtime,
            served_counts: std::mem::take(&mut self.served),
            submitted_counts: std::mem::take(&mut self.submitted),
            max_latency: std::mem::take(&mut self.max_latency),
        };
        self.next_index += 1;
        self.window_start = end;
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Device, Op};

    fn engine() -> Engine {
        Engine::new(
            Device::new(DeviceRole::Ssd, 100, 100).unwrap(),
            Device::new(DeviceRole::Hdd, 5000, 5000).unwrap(),
        )
    }

    fn submit(e: &mut Engine, origin: Origin, target: DeviceRole) -> u64 {
        let id = e.allocate_id();
        let (op, app) = match origin {
            Origin::R => (Op::Read, Some(id)),
            Origin::W => (Op::Write, Some(id)),
            _ => (Op::Write, None),
        };
        let r = IoRequest::new(id, app, e.clock(), id, op, origin, target).unwrap();
        e.submit(r).unwrap();
        id
    }

    #[test]
    fn queue_time_examples() {
        assert_eq!(compute_queue_times(0, 100, 0, 5000), (0, 0));
        assert_eq!(compute_queue_times(10, 100, 1, 5000), (1000, 5000));
        assert_eq!(compute_queue_times(60, 100, 1, 5000), (6000, 5000));
    }

    #[test]
    fn empty_snapshot() {
        let s = snapshot(&engine());
        assert!(s.ssd_inqueue.is_empty() && s.hdd_inqueue.is_empty());
    }

    #[test]
    fn snapshot_copies_tags_in_order_and_is_immutable() {
        let mut e = engine();
        let a = submit(&mut e, Origin::R, DeviceRole::Ssd);
        let b = submit(&mut e, Origin::P, DeviceRole::Ssd);
        let c = submit(&mut e, Origin::P, DeviceRole::Ssd);
        let d = submit(&mut e, Origin::R, DeviceRole::Hdd);
        let s = snapshot(&e);
        assert_eq!(s.ssd_inqueue, vec![(a, Origin::R), (b, Origin::P), (c, Origin::P)]);
        assert_eq!(s.hdd_inqueue, vec![(d, Origin::R)]);
        let before = s.clone();
        while e.step().is_some() {}
        assert_eq!(s, before);
        assert_eq!(s.origin_counts(DeviceRole::Ssd), [1, 0, 2, 0]);
    }

    #[test]
    fn empty_window() {
        let mut e = engine();
        e.advance_to(SimTime(1000)).unwrap();
        let mut c = IntervalCollector::new();
        let s = c.close_interval(SimTime(1000), &e).unwrap();
        assert_eq!(s.served_counts, [[0; 4]; 2]);
        assert_eq!(s.max_latency, [0, 0]);
        assert_eq!((s.cache_qtime, s.disk_qtime), (0, 0));
    }

    #[test]
    fn single_completion_sets_max_latency() {
        let mut e = Engine::new(
            Device::new(DeviceRole::Ssd, 250, 250).unwrap(),
            Device::new(DeviceRole::Hdd, 5000, 5000).unwrap(),
        );
        let mut c = IntervalCollector::new();
        submit(&mut e, Origin::R, DeviceRole::Ssd);
        c.record_submit(DeviceRole::Ssd, Origin::R);
        for r in e.step().unwrap() {
            c.record_completion(&r);
        }
        let s = c.close_interval(SimTime(250), &e).unwrap();
        assert_eq!(s.max_latency[0], 250);
        assert_eq!(s.served(DeviceRole::Ssd), 1);
        assert_eq!(s.submitted(DeviceRole::Ssd), 1);
    }

    #[test]
    fn windows_must_advance() {
        let mut e = engine();
        e.advance_to(SimTime(200)).unwrap();
        let mut c = IntervalCollector::new();
        c.close_interval(SimTime(100), &e).unwrap();
        assert!(matches!(
            c.close_interval(SimTime(100), &e),
            Err(TelemetryError::Overlap { .. })
        ));
        assert!(matches!(
            c.close_interval(SimTime(300), &e),
            Err(TelemetryError::Future { .. })
        ));
        let s = c.close_interval(SimTime(200), &e).unwrap();
        assert_eq!(s.interval_index, 1);
        assert_eq!(s.window, (SimTime(100), SimTime(200)));
    }

    #[test]
    fn qtime_follows_queue_depth() {
        let mut e = engine();
        for _ in 0..3 {
            submit(&mut e, Origin::W, DeviceRole::Ssd);
        }
        submit(&mut e, Origin::R, DeviceRole::Hdd);
        e.advance_to(SimTime(50)).unwrap();
        let s = IntervalCollector::new().close_interval(SimTime(50), &e).unwrap();
        assert_eq!((s.ssd_qsize, s.hdd_qsize), (3, 1));
        assert_eq!((s.cache_qtime, s.disk_qtime), (300, 5000));
    }
}
