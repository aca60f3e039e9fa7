//! Line-oriented event log written by `run --events-log`, plus its parser.
//!
//! Every line is `<time_us> <kind> key=value ...`; a leading `#` line
//! carries the run's hashes. The log is complete enough to replay request
//! accounting, per-window counts and dirty-block bookkeeping offline.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::balancer::WorkloadClass;
use crate::cache::{CacheEvent, WritePolicy};
use crate::sim::{DeviceRole, Op, Origin, SimTime};

/// What happened to a request taken off the tail of the SSD queue.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Removal {
    /// Resubmitted to the disk subsystem as request `to`.
    Rerouted { to: u64 },
    /// Dropped: a promotion, or the cache half of a write-through pair.
    Dropped,
    /// Put back at the tail of the SSD queue as request `to` (a read of a
    /// dirty block, whose only current copy is in the cache).
    Requeued { to: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Arrive {
        t: SimTime,
        app: u64,
        op: Op,
        lba: u64,
    },
    Submit {
        t: SimTime,
        req: u64,
        app: Option<u64>,
        dev: DeviceRole,
        op: Op,
        origin: Origin,
        lba: u64,
    },
    Complete {
        t: SimTime,
        req: u64,
        app: Option<u64>,
        dev: DeviceRole,
        origin: Origin,
        lba: u64,
    },
    AppDone {
        t: SimTime,
        app: u64,
        latency: u64,
    },
    Remove {
        t: SimTime,
        req: u64,
        app: Option<u64>,
        origin: Origin,
        lba: u64,
        action: Removal,
    },
    Cache {
        t: SimTime,
        event: CacheEvent,
    },
    Interval {
        t: SimTime,
        index: u64,
        burst: bool,
        class: WorkloadClass,
        policy: WritePolicy,
        bypass: u64,
    },
    /// A block still dirty in the cache when the run ended.
    ResidentDirty { t: SimTime, lba: u64 },
}

fn opt(v: Option<u64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Arrive { t, app, op, lba } => write!(f, "{t} arrive app={app} op={op} lba={lba}"),
            Event::Submit {
                t,
                req,
                app,
                dev,
                op,
                origin,
                lba,
            } => write!(
                f,
                "{t} submit req={req} app={} dev={dev} op={op} origin={origin} lba={lba}",
                opt(*app)
            ),
            Event::Complete {
                t,
                req,
                app,
                dev,
                origin,
                lba,
            } => write!(
                f,
                "{t} complete req={req} app={} dev={dev} origin={origin} lba={lba}",
                opt(*app)
            ),
            Event::AppDone { t, app, latency } => write!(f, "{t} app_done app={app} latency={latency}"),
            Event::Remove {
                t,
                req,
                app,
                origin,
                lba,
                action,
            } => {
                write!(f, "{t} remove req={req} app={} origin={origin} lba={lba} ", opt(*app))?;
                match action {
                    Removal::Rerouted { to } => write!(f, "action=reroute to={to}"),
                    Removal::Dropped => write!(f, "action=drop"),
                    Removal::Requeued { to } => write!(f, "action=requeue to={to}"),
                }
            }
            Event::Cache { t, event } => match event {
                CacheEvent::Inserted { lba } => write!(f, "{t} cache inserted lba={lba}"),
                CacheEvent::Dirtied { lba, by } => write!(f, "{t} cache dirtied lba={lba} by={by}"),
                CacheEvent::Evicted { lba, dirty } => write!(f, "{t} cache evicted lba={lba} dirty={dirty}"),
                CacheEvent::Invalidated { lba, dirty } => {
                    write!(f, "{t} cache invalidated lba={lba} dirty={dirty}")
                }
                CacheEvent::PolicyChanged { from, to } => write!(f, "{t} cache policy from={from} to={to}"),
            },
            Event::Interval {
                t,
                index,
                burst,
                class,
                policy,
                bypass,
            } => write!(
                f,
                "{t} interval index={index} burst={burst} class={class} policy={policy} bypass={bypass}"
            ),
            Event::ResidentDirty { t, lba } => write!(f, "{t} resident_dirty lba={lba}"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed event line `{line}`: {message}")]
pub struct ParseEventError {
    pub line: String,
    pub message: String,
}

struct Fields<'a> {
    line: &'a str,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    fn err(&self, message: impl Into<String>) -> ParseEventError {
        ParseEventError {
            line: self.line.to_string(),
            message: message.into(),
        }
    }

    fn raw(&self, key: &str) -> Result<&'a str, ParseEventError> {
        self.pairs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| self.err(format!("missing `{key}`")))
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T, ParseEventError> {
        let v = self.raw(key)?;
        v.parse().map_err(|_| self.err(format!("bad `{key}` value `{v}`")))
    }

    fn opt_u64(&self, key: &str) -> Result<Option<u64>, ParseEventError> {
        match self.raw(key)? {
            "-" => Ok(None),
            _ => self.parse(key).map(Some),
        }
    }

    fn op(&self) -> Result<Op, ParseEventError> {
        match self.raw("op")? {
            "R" => Ok(Op::Read),
            "W" => Ok(Op::Write),
            v => Err(self.err(format!("bad op `{v}`"))),
        }
    }

    fn origin(&self) -> Result<Origin, ParseEventError> {
        let v = self.raw("origin")?;
        Origin::parse(v).ok_or_else(|| self.err(format!("bad origin `{v}`")))
    }

    fn dev(&self) -> Result<DeviceRole, ParseEventError> {
        let v = self.raw("dev")?;
        DeviceRole::parse(v).ok_or_else(|| self.err(format!("bad device `{v}`")))
    }

    fn policy(&self, key: &str) -> Result<WritePolicy, ParseEventError> {
        self.parse(key)
    }
}

impl FromStr for Event {
    type Err = ParseEventError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let mut words = line.split_whitespace();
        let bad = |m: &str| ParseEventError {
            line: line.to_string(),
            message: m.to_string(),
        };
        let t = SimTime(
            words
                .next()
                .and_then(|w| w.parse().ok())
                .ok_or_else(|| bad("missing time"))?,
        );
        let kind = words.next().ok_or_else(|| bad("missing kind"))?;
        let sub = if kind == "cache" {
            Some(words.next().ok_or_else(|| bad("missing cache event"))?)
        } else {
            None
        };
        let mut pairs = Vec::new();
        for w in words {
            let (k, v) = w.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            pairs.push((k, v));
        }
        let f = Fields { line, pairs };
        Ok(match (kind, sub) {
            ("arrive", _) => Event::Arrive {
                t,
                app: f.parse("app")?,
                op: f.op()?,
                lba: f.parse("lba")?,
            },
            ("submit", _) => Event::Submit {
                t,
                req: f.parse("req")?,
                app: f.opt_u64("app")?,
                dev: f.dev()?,
                op: f.op()?,
                origin: f.origin()?,
                lba: f.parse("lba")?,
            },
            ("complete", _) => Event::Complete {
                t,
                req: f.parse("req")?,
                app: f.opt_u64("app")?,
                dev: f.dev()?,
                origin: f.origin()?,
                lba: f.parse("lba")?,
            },
            ("app_done", _) => Event::AppDone {
                t,
                app: f.parse("app")?,
                latency: f.parse("latency")?,
            },
            ("remove", _) => Event::Remove {
                t,
                req: f.parse("req")?,
                app: f.opt_u64("app")?,
                origin: f.origin()?,
                lba: f.parse("lba")?,
                action: match f.raw("action")? {
                    "reroute" => Removal::Rerouted { to: f.parse("to")? },
                    "requeue" => Removal::Requeued { to: f.parse("to")? },
                    "drop" => Removal::Dropped,
                    v => return Err(f.err(format!("bad action `{v}`"))),
                },
            },
            ("cache", Some(what)) => Event::Cache {
                t,
                event: match what {
                    "inserted" => CacheEvent::Inserted { lba: f.parse("lba")? },
                    "dirtied" => CacheEvent::Dirtied {
                        lba: f.parse("lba")?,
                        by: f.parse("by")?,
                    },
                    "evicted" => CacheEvent::Evicted {
                        lba: f.parse("lba")?,
                        dirty: f.parse("dirty")?,
                    },
                    "invalidated" => CacheEvent::Invalidated {
                        lba: f.parse("lba")?,
                        dirty: f.parse("dirty")?,
                    },
                    "policy" => CacheEvent::PolicyChanged {
                        from: f.policy("from")?,
                        to: f.policy("to")?,
                    },
                    other => return Err(f.err(format!("unknown cache event `{other}`"))),
                },
            },
            ("interval", _) => Event::Interval {
                t,
                index: f.parse("index")?,
                burst: f.parse("burst")?,
                class: f.parse("class")?,
                policy: f.policy("policy")?,
                bypass: f.parse("bypass")?,
            },
            ("resident_dirty", _) => Event::ResidentDirty {
                t,
                lba: f.parse("lba")?,
            },
            (other, _) => return Err(f.err(format!("unknown event kind `{other}`"))),
        })
    }
}

/// Parses a whole log, skipping `#` lines.
pub fn parse_log(text: &str) -> Result<Vec<Event>, ParseEventError> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(str::parse)
        .collect()
}

/// `key=value` pairs from the `#` header line.
pub fn parse_header(text: &str) -> Vec<(String, String)> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .flat_map(|l| l.trim_start_matches('#').split_whitespace())
        .filter_map(|w| w.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
