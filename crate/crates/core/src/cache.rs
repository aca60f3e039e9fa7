//! SSD cache state machine: lookup, admission, LRU eviction and the four
//! write policies.
//!
//! [`CacheState::access`] turns one application request into the device
//! traffic its policy implies. Metadata (residency, dirty bits, recency) is
//! updated at access time; the promotion write of a read miss is returned as
//! a deferred submission that the caller issues once the disk read has
//! completed, after re-checking it with [`CacheState::complete_fill`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::sim::{AppRequest, DeviceRole, Op, Origin, SimTime};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum WritePolicy {
    /// Write-back: reads and writes are cached, dirty blocks written on eviction.
    WB,
    /// Write-through: writes go to cache and disk together.
    WT,
    /// Write-only: writes are cached; read misses are not promoted.
    WO,
    /// Read-only: read misses are promoted; writes bypass to disk.
    RO,
}

impl WritePolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            WritePolicy::WB => "WB",
            WritePolicy::WT => "WT",
            WritePolicy::WO => "WO",
            WritePolicy::RO => "RO",
        }
    }

    /// Whether read misses are promoted into the cache under this policy.
    pub fn promotes_reads(self) -> bool {
        self != WritePolicy::WO
    }
}

impl fmt::Display for WritePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WritePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "WB" => Ok(WritePolicy::WB),
            "WT" => Ok(WritePolicy::WT),
            "WO" => Ok(WritePolicy::WO),
            "RO" => Ok(WritePolicy::RO),
            other => Err(format!("unknown write policy `{other}`")),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct CacheConfig {
    pub capacity_blocks: u64,
    pub block_size: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            capacity_blocks: 4096,
            block_size: 4096,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CacheError {
    #[error("cache capacity must be at least one block")]
    ZeroCapacity,
    #[error("block size must be positive")]
    ZeroBlockSize,
    #[error("request {id} has origin {origin}; only application reads and writes enter the cache")]
    NotApplication { id: u64, origin: Origin },
    #[error("eviction requested with {occupancy} of {capacity} blocks resident")]
    NotFull { occupancy: u64, capacity: u64 },
    #[error("prefill of {count} blocks exceeds capacity {capacity}")]
    PrefillTooLarge { count: u64, capacity: u64 },
}

/// One device request the cache wants issued.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Submission {
    pub target: DeviceRole,
    pub op: Op,
    pub origin: Origin,
    pub lba: u64,
}

impl Submission {
    fn ssd(op: Op, origin: Origin, lba: u64) -> Self {
        Submission {
            target: DeviceRole::Ssd,
            op,
            origin,
            lba,
        }
    }

    fn hdd(op: Op, origin: Origin, lba: u64) -> Self {
        Submission {
            target: DeviceRole::Hdd,
            op,
            origin,
            lba,
        }
    }

    fn evict(lba: u64) -> Self {
        Submission::hdd(Op::Write, Origin::E, lba)
    }
}

/// Device traffic for one application access.
///
/// `immediate` is issued at once, in order. `after_fill`, when present, is the
/// promotion write that depends on the disk read in `immediate` completing.
/// The application request completes when all of its `R`/`W` legs have.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RoutingPlan {
    pub immediate: Vec<Submission>,
    pub after_fill: Option<Submission>,
}

impl RoutingPlan {
    /// Every submission, dependency order preserved.
    pub fn all(&self) -> Vec<Submission> {
        self.immediate.iter().chain(self.after_fill.iter()).copied().collect()
    }

    pub fn application_legs(&self) -> usize {
        self.immediate.iter().filter(|s| s.origin.is_application()).count()
    }
}

/// Metadata transitions, reported so runs can be audited from their event log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CacheEvent {
    Inserted { lba: u64 },
    /// A clean or absent block became dirty because of application write `by`.
    Dirtied { lba: u64, by: u64 },
    Evicted { lba: u64, dirty: bool },
    Invalidated { lba: u64, dirty: bool },
    PolicyChanged { from: WritePolicy, to: WritePolicy },
}

#[derive(Clone, Debug)]
struct Entry {
    dirty: bool,
    last_touch: SimTime,
    stamp: u64,
}

/// Outcome of re-checking a deferred promotion.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum FillOutcome {
    Promote(Submission),
    Discard,
}

#[derive(Clone, Debug)]
pub struct CacheState {
    config: CacheConfig,
    policy: WritePolicy,
    entries: HashMap<u64, Entry>,
    // recency stamp -> lba; the first key is the least recently used block
    recency: BTreeMap<u64, u64>,
    next_stamp: u64,
    events: Vec<CacheEvent>,
}

impl CacheState {
    pub fn new(config: CacheConfig, policy: WritePolicy) -> Result<Self, CacheError> {
        if config.capacity_blocks == 0 {
            return Err(CacheError::ZeroCapacity);
        }
        if config.block_size == 0 {
            return Err(CacheError::ZeroBlockSize);
        }
        Ok(CacheState {
            config,
            policy,
            entries: HashMap::new(),
            recency: BTreeMap::new(),
            next_stamp: 0,
            events: Vec::new(),
        })
    }

    /// Installs `count` clean blocks starting at `start`, lowest lba least recent.
    pub fn prefill(&mut self, start: u64, count: u64) -> Result<(), CacheError> {
        if self.occupancy() + count > self.config.capacity_blocks {
            return Err(CacheError::PrefillTooLarge {
                count,
                capacity: self.config.capacity_blocks,
            });
        }
        for lba in start..start + count {
            if !self.entries.contains_key(&lba) {
                self.insert(lba, SimTime::ZERO, None);
            }
        }
        self.events.clear();
        Ok(())
    }

    pub fn config(&self) -> CacheConfig {
        self.config
    }

    pub fn policy(&self) -> WritePolicy {
        self.policy
    }

    pub fn occupancy(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn is_full(&self) -> bool {
        self.occupancy() >= self.config.capacity_blocks
    }

    pub fn is_resident(&self, lba: u64) -> bool {
        self.entries.contains_key(&lba)
    }

    pub fn is_dirty(&self, lba: u64) -> bool {
        self.entries.get(&lba).is_some_and(|e| e.dirty)
    }

    pub fn last_touch(&self, lba: u64) -> Option<SimTime> {
        self.entries.get(&lba).map(|e| e.last_touch)
    }

    /// Resident blocks from least to most recently used.
    pub fn lru_order(&self) -> Vec<u64> {
        self.recency.values().copied().collect()
    }

    /// Resident dirty blocks, ascending lba.
    pub fn dirty_blocks(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self
            .entries
            .iter()
            .filter(|(_, e)| e.dirty)
            .map(|(lba, _)| *lba)
            .collect();
        v.sort_unstable();
        v
    }

    /// Drains the metadata events recorded since the last call.
    pub fn take_events(&mut self) -> Vec<CacheEvent> {
        std::mem::take(&mut self.events)
    }

    /// Switches policy. Resident blocks and dirty bits are kept; nothing is flushed.
    pub fn set_policy(&mut self, policy: WritePolicy) -> WritePolicy {
        let old = self.policy;
        if old != policy {
            self.policy = policy;
            self.events.push(CacheEvent::PolicyChanged {
                from: old,
                to: policy,
            });
        }
        old
    }

    fn bump(&mut self) -> u64 {
        let s = self.next_stamp;
        self.next_stamp += 1;
        s
    }

    fn touch(&mut self, lba: u64, now: SimTime) {
        let stamp = self.bump();
        if let Some(e) = self.entries.get_mut(&lba) {
            self.recency.remove(&e.stamp);
            e.stamp = stamp;
            e.last_touch = now;
            self.recency.insert(stamp, lba);
        }
    }

    fn insert(&mut self, lba: u64, now: SimTime, dirtied_by: Option<u64>) {
        let stamp = self.bump();
        self.entries.insert(
            lba,
            Entry {
                dirty: dirtied_by.is_some(),
                last_touch: now,
                stamp,
            },
        );
        self.recency.insert(stamp, lba);
        self.events.push(CacheEvent::Inserted { lba });
        if let Some(by) = dirtied_by {
            self.events.push(CacheEvent::Dirtied { lba, by });
        }
    }

    fn remove(&mut self, lba: u64) -> Option<Entry> {
        let e = self.entries.remove(&lba)?;
        self.recency.remove(&e.stamp);
        Some(e)
    }

    fn mark_dirty(&mut self, lba: u64, by: u64) {
        if let Some(e) = self.entries.get_mut(&lba) {
            if !e.dirty {
                e.dirty = true;
                self.events.push(CacheEvent::Dirtied { lba, by });
            }
        }
    }

    /// Removes the least recently used block. A dirty victim yields the
    /// disk write-back that preserves its data.
    pub fn evict_victim(&mut self) -> Result<(u64, Option<Submission>), CacheError> {
        if !self.is_full() {
            return Err(CacheError::NotFull {
                occupancy: self.occupancy(),
                capacity: self.config.capacity_blocks,
            });
        }
        let (_, victim) = self
            .recency
            .pop_first()
            .expect("a full cache has at least one block");
        let entry = self.entries.remove(&victim).expect("recency tracks residents");
        self.events.push(CacheEvent::Evicted {
            lba: victim,
            dirty: entry.dirty,
        });
        Ok((victim, entry.dirty.then(|| Submission::evict(victim))))
    }

    /// Makes room for one block if needed, returning the write-back, if any.
    fn make_room(&mut self) -> Option<Submission> {
        if self.is_full() {
            self.evict_victim().expect("cache is full").1
        } else {
            None
        }
    }

    /// Routes one application access under the active policy.
    pub fn access(&mut self, req: &AppRequest, now: SimTime) -> Result<RoutingPlan, CacheError> {
        if !req.origin.is_application() {
            return Err(CacheError::NotApplication {
                id: req.id,
                origin: req.origin,
            });
        }
        let lba = req.lba;
        let resident = self.is_resident(lba);
        let mut plan = RoutingPlan::default();

        match (req.origin, self.policy) {
            (Origin::R, _) if resident => {
                self.touch(lba, now);
                plan.immediate.push(Submission::ssd(Op::Read, Origin::R, lba));
            }
            (Origin::R, WritePolicy::WO) => {
                plan.immediate.push(Submission::hdd(Op::Read, Origin::R, lba));
            }
            (Origin::R, _) => {
                plan.immediate.push(Submission::hdd(Op::Read, Origin::R, lba));
                plan.immediate.extend(self.make_room());
                self.insert(lba, now, None);
                plan.after_fill = Some(Submission::ssd(Op::Write, Origin::P, lba));
            }
            (_, WritePolicy::WB | WritePolicy::WO) => {
                plan.immediate.push(Submission::ssd(Op::Write, Origin::W, lba));
                if resident {
                    self.touch(lba, now);
                    self.mark_dirty(lba, req.id);
                } else {
                    plan.immediate.extend(self.make_room());
                    self.insert(lba, now, Some(req.id));
                }
            }
            (_, WritePolicy::WT) => {
                plan.immediate.push(Submission::ssd(Op::Write, Origin::W, lba));
                plan.immediate.push(Submission::hdd(Op::Write, Origin::W, lba));
                if resident {
                    self.touch(lba, now);
                } else {
                    plan.immediate.extend(self.make_room());
                    self.insert(lba, now, None);
                }
            }
            (_, WritePolicy::RO) => {
                if resident {
                    let e = self.remove(lba).expect("resident");
                    self.events.push(CacheEvent::Invalidated {
                        lba,
                        dirty: e.dirty,
                    });
                    if e.dirty {
                        plan.immediate.push(Submission::evict(lba));
                    }
                }
                plan.immediate.push(Submission::hdd(Op::Write, Origin::W, lba));
            }
        }
        Ok(plan)
    }

    /// Re-checks a deferred promotion once its disk read has completed. The
    /// promotion is issued only if the active policy still promotes reads and
    /// the reserved block is still resident and clean; otherwise a clean
    /// reservation is released.
    pub fn complete_fill(&mut self, lba: u64) -> FillOutcome {
        match self.entries.get(&lba) {
            Some(e) if !e.dirty => {
                if self.policy.promotes_reads() {
                    FillOutcome::Promote(Submission::ssd(Op::Write, Origin::P, lba))
                } else {
                    self.remove(lba);
                    self.events.push(CacheEvent::Invalidated { lba, dirty: false });
                    FillOutcome::Discard
                }
            }
            _ => FillOutcome::Discard,
        }
    }

    /// A queued promotion was dropped: release the block if it is still clean.
    pub fn discard_promotion(&mut self, lba: u64) {
        if self.entries.get(&lba).is_some_and(|e| !e.dirty) {
            self.remove(lba);
            self.events.push(CacheEvent::Invalidated { lba, dirty: false });
        }
    }

    /// An application write queued on the SSD is being rerouted to the disk
    /// subsystem. The cached copy is dropped; a dirty one is written back
    /// first, so every dirtied block leaves the cache through a write-back.
    pub fn reroute_write(&mut self, lba: u64) -> Option<Submission> {
        let e = self.remove(lba)?;
        self.events.push(CacheEvent::Invalidated {
            lba,
            dirty: e.dirty,
        });
        e.dirty.then(|| Submission::evict(lba))
    }
}
