//! Event-driven substrate: simulated clock, single-server FIFO device queues,
//! and the block-request lifecycle (enqueue → service → completion).
//!
//! Every device serves one request at a time, in arrival order. Service time
//! is fixed per operation (read or write) and configured per device. The
//! only way a request leaves a queue other than by completing is
//! [`Device::remove_tail`], which never touches the request in service.

use std::collections::VecDeque;
use std::fmt;
use std::ops::Add;

use thiserror::Error;

/// Simulated time in microseconds.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn micros(self) -> u64 {
        self.0
    }

    /// Elapsed microseconds since `earlier`; zero if `earlier` is later.
    pub fn since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl Add<u64> for SimTime {
    type Output = SimTime;

    fn add(self, rhs: u64) -> SimTime {
        SimTime(self.0 + rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Read,
    Write,
}

impl Op {
    pub fn as_str(self) -> &'static str {
        match self {
            Op::Read => "R",
            Op::Write => "W",
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Why a block request exists.
///
/// `R` and `W` are application accesses (or a device leg of one); `P` writes
/// data fetched on a read miss into the cache; `E` writes a dirty block back
/// to the disk subsystem.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    R,
    W,
    P,
    E,
}

impl Origin {
    pub const ALL: [Origin; 4] = [Origin::R, Origin::W, Origin::P, Origin::E];

    pub fn index(self) -> usize {
        match self {
            Origin::R => 0,
            Origin::W => 1,
            Origin::P => 2,
            Origin::E => 3,
        }
    }

    pub fn is_application(self) -> bool {
        matches!(self, Origin::R | Origin::W)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Origin::R => "R",
            Origin::W => "W",
            Origin::P => "P",
            Origin::E => "E",
        }
    }

    pub fn parse(s: &str) -> Option<Origin> {
        match s {
            "R" => Some(Origin::R),
            "W" => Some(Origin::W),
            "P" => Some(Origin::P),
            "E" => Some(Origin::E),
            _ => None,
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DeviceRole {
    Ssd,
    Hdd,
}

impl DeviceRole {
    pub fn as_str(self) -> &'static str {
        match self {
            DeviceRole::Ssd => "SSD",
            DeviceRole::Hdd => "HDD",
        }
    }

    pub fn parse(s: &str) -> Option<DeviceRole> {
        match s {
            "SSD" => Some(DeviceRole::Ssd),
            "HDD" => Some(DeviceRole::Hdd),
            _ => None,
        }
    }
}

impl fmt::Display for DeviceRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("request {id} targets {target} but was submitted to {device}")]
    Misrouted {
        id: u64,
        target: DeviceRole,
        device: DeviceRole,
    },
    #[error("request {id}: origin {origin} cannot be a {op:?} on {target}")]
    IllegalOrigin {
        id: u64,
        origin: Origin,
        op: Op,
        target: DeviceRole,
    },
    #[error("{role} latency must be positive")]
    ZeroLatency { role: DeviceRole },
    #[error("clock cannot move backwards from {now} to {to}")]
    TimeReversal { now: SimTime, to: SimTime },
    #[error("cannot advance to {to}: a completion is due at {due}")]
    SkippedCompletion { to: SimTime, due: SimTime },
}

/// One block-level access as seen by a device.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IoRequest {
    pub id: u64,
    /// Application request this is a leg of; `None` for promotions and evictions.
    pub app_id: Option<u64>,
    pub arrival: SimTime,
    pub lba: u64,
    pub op: Op,
    pub origin: Origin,
    pub target: DeviceRole,
    pub enqueued_at: Option<SimTime>,
    pub service_start: Option<SimTime>,
    pub completed_at: Option<SimTime>,
}

impl IoRequest {
    /// Builds a request, rejecting origin/op/target combinations the cache
    /// engine can never produce.
    pub fn new(
        id: u64,
        app_id: Option<u64>,
        arrival: SimTime,
        lba: u64,
        op: Op,
        origin: Origin,
        target: DeviceRole,
    ) -> Result<Self, SimError> {
        let legal = match origin {
            Origin::R => op == Op::Read,
            Origin::W => op == Op::Write,
            Origin::P => op == Op::Write && target == DeviceRole::Ssd,
            Origin::E => op == Op::Write && target == DeviceRole::Hdd,
        };
        if !legal || origin.is_application() != app_id.is_some() {
            return Err(SimError::IllegalOrigin {
                id,
                origin,
                op,
                target,
            });
        }
        Ok(IoRequest {
            id,
            app_id,
            arrival,
            lba,
            op,
            origin,
            target,
            enqueued_at: None,
            service_start: None,
            completed_at: None,
        })
    }

    /// End-to-end latency seen by this device request, once completed.
    pub fn latency(&self) -> Option<u64> {
        self.completed_at.map(|c| c.since(self.arrival))
    }
}

/// An access issued by the workload, before the cache engine routes it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AppRequest {
    pub id: u64,
    pub arrival: SimTime,
    pub lba: u64,
    pub origin: Origin,
}

impl AppRequest {
    pub fn read(id: u64, arrival: SimTime, lba: u64) -> Self {
        AppRequest {
            id,
            arrival,
            lba,
            origin: Origin::R,
        }
    }

    pub fn write(id: u64, arrival: SimTime, lba: u64) -> Self {
        AppRequest {
            id,
            arrival,
            lba,
            origin: Origin::W,
        }
    }

    pub fn op(&self) -> Op {
        match self.origin {
            Origin::R => Op::Read,
            _ => Op::Write,
        }
    }
}

/// Outcome of [`Device::remove_tail`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TailRemoval {
    /// Removed requests, in their original queue order.
    pub removed: Vec<IoRequest>,
    /// How many were asked for.
    pub requested: usize,
}

impl TailRemoval {
    pub fn clamped(&self) -> bool {
        self.removed.len() < self.requested
    }
}

/// A single-server FIFO device.
#[derive(Clone, Debug)]
pub struct Device {
    role: DeviceRole,
    read_latency: u64,
    write_latency: u64,
    in_service: Option<IoRequest>,
    waiting: VecDeque<IoRequest>,
    busy_until: SimTime,
    busy_time: u64,
}

impl Device {
    pub fn new(role: DeviceRole, read_latency: u64, write_latency: u64) -> Result<Self, SimError> {
        if read_latency == 0 || write_latency == 0 {
            return Err(SimError::ZeroLatency { role });
        }
        Ok(Device {
            role,
            read_latency,
            write_latency,
            in_service: None,
            waiting: VecDeque::new(),
            busy_until: SimTime::ZERO,
            busy_time: 0,
        })
    }

    pub fn role(&self) -> DeviceRole {
        self.role
    }

    pub fn service_latency(&self, op: Op) -> u64 {
        match op {
            Op::Read => self.read_latency,
            Op::Write => self.write_latency,
        }
    }

    /// Mean of the configured read and write service times (integer µs).
    pub fn average_latency(&self) -> u64 {
        (self.read_latency + self.write_latency) / 2
    }

    /// Pending requests, in service included.
    pub fn qsize(&self) -> usize {
        self.waiting.len() + usize::from(self.in_service.is_some())
    }

    pub fn is_idle(&self) -> bool {
        self.in_service.is_none()
    }

    pub fn busy_until(&self) -> SimTime {
        self.busy_until
    }

    /// Total time spent serving requests so far.
    pub fn busy_time(&self) -> u64 {
        self.busy_time
    }

    /// Pending requests in service order: the one in service first.
    pub fn pending(&self) -> impl Iterator<Item = &IoRequest> {
        self.in_service.iter().chain(self.waiting.iter())
    }

    pub fn in_service(&self) -> Option<&IoRequest> {
        self.in_service.as_ref()
    }

    /// Enqueues `req` at `now`. An idle device starts serving it immediately.
    pub fn submit(&mut self, mut req: IoRequest, now: SimTime) -> Result<(), SimError> {
        if req.target != self.role {
            return Err(SimError::Misrouted {
                id: req.id,
                target: req.target,
                device: self.role,
            });
        }
        req.enqueued_at = Some(now.max(req.arrival));
        self.waiting.push_back(req);
        if self.in_service.is_none() {
            self.start_next(now);
        }
        Ok(())
    }

    fn start_next(&mut self, now: SimTime) {
        if let Some(mut next) = self.waiting.pop_front() {
            let start = now.max(next.enqueued_at.unwrap_or(now));
            let service = self.service_latency(next.op);
            next.service_start = Some(start);
            self.busy_until = start + service;
            self.in_service = Some(next);
        }
    }

    pub fn next_completion(&self) -> Option<SimTime> {
        self.in_service.as_ref().map(|_| self.busy_until)
    }

    /// Finishes the request in service (which must be due at `now`) and
    /// starts the next one.
    fn complete(&mut self, now: SimTime) -> Option<IoRequest> {
        if self.next_completion() != Some(now) {
            return None;
        }
        let mut done = self.in_service.take()?;
        let start = done.service_start.unwrap_or(now);
        done.completed_at = Some(now);
        self.busy_time += now.since(start);
        self.start_next(now);
        Some(done)
    }

    /// Removes up to `count` requests from the tail of the waiting queue.
    /// The request in service is never removable; asking for more than the
    /// waiting depth is clamped.
    pub fn remove_tail(&mut self, count: usize) -> TailRemoval {
        let take = count.min(self.waiting.len());
        let split = self.waiting.len() - take;
        let removed: Vec<IoRequest> = self.waiting.drain(split..).collect();
        TailRemoval {
            removed,
            requested: count,
        }
    }
}

/// The two-device storage stack and its clock.
#[derive(Clone, Debug)]
pub struct Engine {
    clock: SimTime,
    ssd: Device,
    hdd: Device,
    next_id: u64,
}

impl Engine {
    pub fn new(ssd: Device, hdd: Device) -> Self {
        debug_assert_eq!(ssd.role(), DeviceRole::Ssd);
        debug_assert_eq!(hdd.role(), DeviceRole::Hdd);
        Engine {
            clock: SimTime::ZERO,
            ssd,
            hdd,
            next_id: 0,
        }
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn device(&self, role: DeviceRole) -> &Device {
        match role {
            DeviceRole::Ssd => &self.ssd,
            DeviceRole::Hdd => &self.hdd,
        }
    }

    fn device_mut(&mut self, role: DeviceRole) -> &mut Device {
        match role {
            DeviceRole::Ssd => &mut self.ssd,
            DeviceRole::Hdd => &mut self.hdd,
        }
    }

    /// Hands out a fresh device-request id.
    pub fn allocate_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Submits to the device named by `role`; the request's own target must agree.
    pub fn submit_to(&mut self, role: DeviceRole, req: IoRequest) -> Result<(), SimError> {
        let now = self.clock;
        self.device_mut(role).submit(req, now)
    }

    /// Submits to the device the request targets.
    pub fn submit(&mut self, req: IoRequest) -> Result<(), SimError> {
        self.submit_to(req.target, req)
    }

    pub fn next_completion(&self) -> Option<SimTime> {
        match (self.ssd.next_completion(), self.hdd.next_completion()) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Moves the clock forward for an external event (arrival, interval
    /// boundary). Refuses to jump over a pending completion.
    pub fn advance_to(&mut self, to: SimTime) -> Result<(), SimError> {
        if to < self.clock {
            return Err(SimError::TimeReversal {
                now: self.clock,
                to,
            });
        }
        if let Some(due) = self.next_completion() {
            if due < to {
                return Err(SimError::SkippedCompletion { to, due });
            }
        }
        self.clock = to;
        Ok(())
    }

    /// Advances to the next service completion and returns every request
    /// finishing at that instant (SSD before HDD). `None` means nothing is
    /// pending: the end of the simulation.
    pub fn step(&mut self) -> Option<Vec<IoRequest>> {
        let t = self.next_completion()?;
        self.clock = t;
        let mut done = Vec::with_capacity(2);
        done.extend(self.ssd.complete(t));
        done.extend(self.hdd.complete(t));
        Some(done)
    }

    pub fn remove_tail(&mut self, role: DeviceRole, count: usize) -> TailRemoval {
        self.device_mut(role).remove_tail(count)
    }

    pub fn is_quiescent(&self) -> bool {
        self.ssd.qsize() == 0 && self.hdd.qsize() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(id: u64, op: Op, target: DeviceRole) -> IoRequest {
        let origin = match op {
            Op::Read => Origin::R,
            Op::Write => Origin::W,
        };
        IoRequest::new(id, Some(id), SimTime::ZERO, id, op, origin, target).unwrap()
    }

    fn engine(ssd_r: u64, ssd_w: u64) -> Engine {
        Engine::new(
            Device::new(DeviceRole::Ssd, ssd_r, ssd_w).unwrap(),
            Device::new(DeviceRole::Hdd, 5000, 5000).unwrap(),
        )
    }

    #[test]
    fn submit_one_read_to_empty_queue() {
        let mut e = engine(100, 100);
        e.submit(req(0, Op::Read, DeviceRole::Ssd)).unwrap();
        assert_eq!(e.device(DeviceRole::Ssd).qsize(), 1);
    }

    #[test]
    fn back_to_back_submissions_keep_fifo_order() {
        let mut e = engine(100, 100);
        for id in 0..5 {
            e.submit(req(id, Op::Read, DeviceRole::Ssd)).unwrap();
        }
        let ssd = e.device(DeviceRole::Ssd);
        assert_eq!(ssd.qsize(), 5);
        let ids: Vec<u64> = ssd.pending().map(|r| r.id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn misrouted_submission_is_rejected() {
        let mut e = engine(100, 100);
        let err = e
            .submit_to(DeviceRole::Hdd, req(7, Op::Read, DeviceRole::Ssd))
            .unwrap_err();
        assert!(matches!(err, SimError::Misrouted { id: 7, .. }));
        assert_eq!(e.device(DeviceRole::Hdd).qsize(), 0);
    }

    #[test]
    fn single_read_completes_after_service_time() {
        let mut e = engine(100, 100);
        e.submit(req(0, Op::Read, DeviceRole::Ssd)).unwrap();
        let done = e.step().unwrap();
        assert_eq!(done.len(), 1);
        assert_eq!(done[0].completed_at, Some(SimTime(100)));
        assert!(e.step().is_none());
    }

    #[test]
    fn two_reads_serialize() {
        let mut e = engine(100, 100);
        e.submit(req(0, Op::Read, DeviceRole::Ssd)).unwrap();
        e.submit(req(1, Op::Read, DeviceRole::Ssd)).unwrap();
        let t: Vec<u64> = std::iter::from_fn(|| e.step())
            .flatten()
            .map(|r| r.completed_at.unwrap().0)
            .collect();
        assert_eq!(t, vec![100, 200]);
    }

    #[test]
    fn mixed_read_write_schedule() {
        // Hand-computed FIFO schedule: read [0,100), write [100,300).
        let mut e = engine(100, 200);
        e.submit(req(0, Op::Read, DeviceRole::Ssd)).unwrap();
        e.submit(req(1, Op::Write, DeviceRole::Ssd)).unwrap();
        let done: Vec<IoRequest> = std::iter::from_fn(|| e.step()).flatten().collect();
        assert_eq!(done[0].completed_at, Some(SimTime(100)));
        assert_eq!(done[1].service_start, Some(SimTime(100)));
        assert_eq!(done[1].completed_at, Some(SimTime(300)));
        assert_eq!(e.device(DeviceRole::Ssd).busy_time(), 300);
    }

    #[test]
    fn remove_tail_semantics() {
        // a is in service as soon as it is submitted to an idle device.
        let mut d = Device::new(DeviceRole::Ssd, 100, 100).unwrap();
        for id in 0..3 {
            d.submit(req(id, Op::Read, DeviceRole::Ssd), SimTime::ZERO).unwrap();
        }
        let none = d.remove_tail(0);
        assert!(none.removed.is_empty());
        assert_eq!(d.qsize(), 3);

        let r = d.remove_tail(3);
        assert_eq!(r.removed.iter().map(|r| r.id).collect::<Vec<_>>(), vec![1, 2]);
        assert!(r.clamped());
        assert_eq!(d.pending().map(|r| r.id).collect::<Vec<_>>(), vec![0]);

        let mut d = Device::new(DeviceRole::Ssd, 100, 100).unwrap();
        for id in 0..4 {
            d.submit(req(id, Op::Read, DeviceRole::Ssd), SimTime::ZERO).unwrap();
        }
        let r = d.remove_tail(2);
        assert_eq!(r.removed.iter().map(|r| r.id).collect::<Vec<_>>(), vec![2, 3]);
        assert!(!r.clamped());
        assert_eq!(d.pending().map(|r| r.id).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn illegal_origin_combinations() {
        let t = SimTime::ZERO;
        assert!(IoRequest::new(0, None, t, 0, Op::Write, Origin::P, DeviceRole::Ssd).is_ok());
        assert!(IoRequest::new(0, None, t, 0, Op::Write, Origin::P, DeviceRole::Hdd).is_err());
        assert!(IoRequest::new(0, None, t, 0, Op::Write, Origin::E, DeviceRole::Hdd).is_ok());
        assert!(IoRequest::new(0, None, t, 0, Op::Read, Origin::E, DeviceRole::Hdd).is_err());
        assert!(IoRequest::new(0, None, t, 0, Op::Read, Origin::R, DeviceRole::Ssd).is_err());
        assert!(IoRequest::new(0, Some(1), t, 0, Op::Write, Origin::P, DeviceRole::Ssd).is_err());
    }

    #[test]
    fn advance_refuses_to_skip_completions() {
        let mut e = engine(100, 100);
        e.submit(req(0, Op::Read, DeviceRole::Ssd)).unwrap();
        assert!(e.advance_to(SimTime(50)).is_ok());
        assert!(matches!(
            e.advance_to(SimTime(150)),
            Err(SimError::SkippedCompletion { .. })
        ));
        assert!(matches!(
            e.advance_to(SimTime(10)),
            Err(SimError::TimeReversal { .. })
        ));
        assert!(e.advance_to(SimTime(100)).is_ok());
    }

    #[test]
    fn late_submission_starts_at_clock() {
        let mut e = engine(100, 100);
        e.advance_to(SimTime(1000)).unwrap();
        e.submit(req(0, Op::Read, DeviceRole::Ssd)).unwrap();
        let done = e.step().unwrap();
        assert_eq!(done[0].enqueued_at, Some(SimTime(1000)));
        assert_eq!(done[0].completed_at, Some(SimTime(1100)));
    }
}
