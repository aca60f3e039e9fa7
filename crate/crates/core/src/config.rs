//! Run configuration: a flat `key = value` text file.
//!
//! ```text
//! # comments start with '#'
//! balancer = lbica
//! seed = 7
//! ssd_read_latency_us = 100
//! phase.0.duration_us = 2000000
//! phase.0.rate = 4000
//! phase.0.read_fraction = 1.0
//! phase.0.address = uniform:0
//! phase.0.working_set = 8192
//! ```
//!
//! The workload is either a list of `phase.N.*` blocks or `trace = <path>`
//! (relative paths resolve against the config file's directory).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::balancer::BalancerKind;
use crate::cache::CacheConfig;
use crate::workload::{AddressModel, PhaseSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("`{key}`: {message}")]
    Field { key: String, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing workload: set `trace` or at least one `phase.N.*` block")]
    NoWorkload,
    #[error("`trace` and `phase.N.*` are mutually exclusive")]
    AmbiguousWorkload,
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn field_err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum WorkloadSource {
    Scenario(Vec<PhaseSpec>),
    Trace(PathBuf),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct DeviceLatencies {
    pub ssd_read_us: u64,
    pub ssd_write_us: u64,
    pub hdd_read_us: u64,
    pub hdd_write_us: u64,
}

impl Default for DeviceLatencies {
    fn default() -> Self {
        DeviceLatencies {
            ssd_read_us: 100,
            ssd_write_us: 100,
            hdd_read_us: 5000,
            hdd_write_us: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub source: WorkloadSource,
    pub latencies: DeviceLatencies,
    pub cache: CacheConfig,
    pub interval_us: u64,
    pub theta_dom: f64,
    pub balancer: BalancerKind,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Intervals averaged by the burst detector; 1 means instantaneous.
    pub qsize_smoothing: usize,
    pub lbica_hold_policy: bool,
    /// Clean blocks `[start, start + count)` resident before the run.
    pub prefill: Option<(u64, u64)>,
}

const PHASE_KEYS: &[&str] = &[
    "duration_us",
    "rate",
    "read_fraction",
    "address",
    "working_set",
    "write_region",
    "jitter",
];

/// Raw `key -> value` pairs, with the line each came from.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    pairs: BTreeMap<String, (usize, String)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut pairs = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let number = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: number,
                    message: format!("expected `key = value`, found `{line}`"),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax {
                    line: number,
                    message: "empty key".into(),
                });
            }
            if pairs.insert(k.to_string(), (number, v.to_string())).is_some() {
                return Err(ConfigError::Syntax {
                    line: number,
                    message: format!("duplicate key `{k}`"),
                });
            }
        }
        Ok(RawConfig { pairs })
    }

    /// Sets or replaces a value.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.pairs.insert(key.to_string(), (0, value.into()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.get(key).map(|(_, v)| v.as_str())
    }

    pub fn remove(&mut self, key: &str) {
        self.pairs.remove(key);
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse::<T>()
        .map_err(|_| field_err(key, format!("`{v}` is not a valid number")))
}

fn parse_positive(key: &str, v: &str) -> Result<u64, ConfigError> {
    let n: u64 = parse_num(key, v)?;
    if n == 0 {
        return Err(field_err(key, "must be positive"));
    }
    Ok(n)
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(field_err(key, format!("`{v}` is not a boolean"))),
    }
}

fn parse_pair(key: &str, v: &str) -> Result<(u64, u64), ConfigError> {
    let (a, b) = v
        .split_once(':')
        .ok_or_else(|| field_err(key, format!("expected `START:COUNT`, found `{v}`")))?;
    Ok((parse_num(key, a.trim())?, parse_num(key, b.trim())?))
}

fn parse_address(key: &str, v: &str) -> Result<AddressModel, ConfigError> {
    let parts: Vec<&str> = v.split(':').map(str::trim).collect();
    match parts.as_slice() {
        ["uniform", base] => Ok(AddressModel::UniformRandom {
            base: parse_num(key, base)?,
        }),
        ["sequential", start, stride] => Ok(AddressModel::Sequential {
            start: parse_num(key, start)?,
            stride: parse_positive(key, stride)?,
        }),
        _ => Err(field_err(
            key,
            format!("expected `uniform:BASE` or `sequential:START:STRIDE`, found `{v}`"),
        )),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let raw = RawConfig::parse(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_raw(&raw, base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        Self::from_raw(&RawConfig::parse(text)?, base_dir)
    }

    pub fn from_raw(raw: &RawConfig, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig {
            name: String::new(),
            source: WorkloadSource::Scenario(Vec::new()),
            latencies: DeviceLatencies::default(),
            cache: CacheConfig::default(),
            interval_us: 100_000,
            theta_dom: 0.8,
            balancer: BalancerKind::Lbica,
            seed: 1,
            output_dir: None,
            qsize_smoothing: 1,
            lbica_hold_policy: true,
            prefill: None,
        };
        let mut phases: BTreeMap<usize, BTreeMap<&str, &str>> = BTreeMap::new();
        let mut trace: Option<PathBuf> = None;

        for (key, (_, v)) in &raw.pairs {
            let k = key.as_str();
            let v = v.as_str();
            match k {
                "name" => cfg.name = v.to_string(),
                "trace" => trace = Some(base_dir.join(v)),
                "seed" => cfg.seed = parse_num(k, v)?,
                "balancer" => {
                    cfg.balancer = v.parse().map_err(|m: String| field_err(k, m))?;
                }
                "ssd_read_latency_us" => cfg.latencies.ssd_read_us = parse_positive(k, v)?,
                "ssd_write_latency_us" => cfg.latencies.ssd_write_us = parse_positive(k, v)?,
                "hdd_read_latency_us" => cfg.latencies.hdd_read_us = parse_positive(k, v)?,
                "hdd_write_latency_us" => cfg.latencies.hdd_write_us = parse_positive(k, v)?,
                "capacity_blocks" => cfg.cache.capacity_blocks = parse_positive(k, v)?,
                "block_size" => cfg.cache.block_size = parse_positive(k, v)?,
                "interval_us" => cfg.interval_us = parse_positive(k, v)?,
                "theta_dom" => {
                    let t: f64 = parse_num(k, v)?;
                    if !(t > 0.5 && t <= 1.0) {
                        return Err(field_err(k, "must lie in (0.5, 1]"));
                    }
                    cfg.theta_dom = t;
                }
                "output_dir" => cfg.output_dir = Some(base_dir.join(v)),
                "qsize_smoothing" => cfg.qsize_smoothing = parse_positive(k, v)? as usize,
                "lbica_hold_policy" => cfg.lbica_hold_policy = parse_bool(k, v)?,
                "prefill" => {
                    let (start, count) = parse_pair(k, v)?;
                    cfg.prefill = Some((start, count));
                }
                _ => {
                    let mut it = k.splitn(3, '.');
                    match (it.next(), it.next(), it.next()) {
                        (Some("phase"), Some(idx), Some(field)) if PHASE_KEYS.contains(&field) => {
                            let idx: usize = idx
                                .parse()
                                .map_err(|_| field_err(k, "phase index must be an integer"))?;
                            phases.entry(idx).or_default().insert(field, v);
                        }
                        _ => return Err(ConfigError::UnknownKey(k.to_string())),
                    }
                }
            }
        }

        if let Some((_, count)) = cfg.prefill {
            if count > cfg.cache.capacity_blocks {
                return Err(field_err("prefill", "count exceeds capacity_blocks"));
            }
        }

        cfg.source = match (trace, phases.is_empty()) {
            (Some(_), false) => return Err(ConfigError::AmbiguousWorkload),
            (Some(path), true) => WorkloadSource::Trace(path),
            (None, true) => return Err(ConfigError::NoWorkload),
            (None, false) => {
                let mut specs = Vec::new();
                for (expected, (idx, fields)) in phases.iter().enumerate() {
                    if *idx != expected {
                        return Err(field_err(
                            &format!("phase.{idx}"),
                            format!("phase indices must be contiguous from 0; missing phase.{expected}"),
                        ));
                    }
                    specs.push(build_phase(*idx, fields)?);
                }
                WorkloadSource::Scenario(specs)
            }
        };
        Ok(cfg)
    }

    /// Problems that do not stop a run.
    pub fn warnings(&self) -> Vec<String> {
        let l = &self.latencies;
        let ssd = (l.ssd_read_us + l.ssd_write_us) / 2;
        let hdd = (l.hdd_read_us + l.hdd_write_us) / 2;
        let mut w = Vec::new();
        if hdd < ssd {
            w.push(format!(
                "disk subsystem average latency ({hdd} us) is below the cache's ({ssd} us)"
            ));
        }
        w
    }

    /// Fixed rendering of every setting, defaults included.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let l = &self.latencies;
        let _ = writeln!(s, "balancer={}", self.balancer);
        let _ = writeln!(s, "block_size={}", self.cache.block_size);
        let _ = writeln!(s, "capacity_blocks={}", self.cache.capacity_blocks);
        let _ = writeln!(s, "hdd_latency_us={},{}", l.hdd_read_us, l.hdd_write_us);
        let _ = writeln!(s, "interval_us={}", self.interval_us);
        let _ = writeln!(s, "lbica_hold_policy={}", self.lbica_hold_policy);
        let _ = writeln!(s, "prefill={:?}", self.prefill);
        let _ = writeln!(s, "qsize_smoothing={}", self.qsize_smoothing);
        let _ = writeln!(s, "ssd_latency_us={},{}", l.ssd_read_us, l.ssd_write_us);
        let _ = writeln!(s, "theta_dom={}", self.theta_dom);
        s.push_str(&self.canonical_workload());
        s
    }

    fn canonical_workload(&self) -> String {
        let mut s = format!("seed={}\n", self.seed);
        match &self.source {
            WorkloadSource::Scenario(phases) => {
                for (i, p) in phases.iter().enumerate() {
                    let _ = writeln!(
                        s,
                        "phase.{i}={},{},{},{:?},{},{:?},{}",
                        p.duration_us,
                        p.arrival_rate,
                        p.read_fraction,
                        p.address,
                        p.working_set_blocks,
                        p.write_region,
                        p.jitter
                    );
                }
            }
            WorkloadSource::Trace(path) => {
                let bytes = fs::read(path).unwrap_or_default();
                let _ = writeln!(s, "trace_sha256={}", hex::encode(Sha256::digest(&bytes)));
            }
        }
        s
    }

    /// Digest of the full configuration.
    pub fn config_hash(&self) -> String {
        short_digest(&self.canonical())
    }

    /// Digest of the workload and seed only: equal for runs that saw the
    /// same request stream, whatever balancer or devices they used.
    pub fn scenario_hash(&self) -> String {
        short_digest(&self.canonical_workload())
    }
}

fn short_digest(s: &str) -> String {
    hex::encode(&Sha256::digest(s.as_bytes())[..8])
}

fn build_phase(idx: usize, f: &BTreeMap<&str, &str>) -> Result<PhaseSpec, ConfigError> {
    let key = |name: &str| format!("phase.{idx}.{name}");
    let need = |name: &str| {
        f.get(name)
            .copied()
            .ok_or_else(|| field_err(&key(name), "required"))
    };
    let duration_us = parse_positive(&key("duration_us"), need("duration_us")?)?;
    let arrival_rate: f64 = parse_num(&key("rate"), need("rate")?)?;
    if !(arrival_rate.is_finite() && arrival_rate > 0.0) {
        return Err(field_err(&key("rate"), "must be positive"));
    }
    let read_fraction: f64 = parse_num(&key("read_fraction"), need("read_fraction")?)?;
    if !(0.0..=1.0).contains(&read_fraction) {
        return Err(field_err(&key("read_fraction"), "must lie in [0, 1]"));
    }
    let address = parse_address(&key("address"), need("address")?)?;
    let working_set_blocks = match f.get("working_set") {
        Some(v) => parse_positive(&key("working_set"), v)?,
        None => match address {
            AddressModel::Sequential { .. } => 1,
            AddressModel::UniformRandom { .. } => {
                return Err(field_err(&key("working_set"), "required for uniform addressing"))
            }
        },
    };
    let write_region = match f.get("write_region") {
        Some(v) => {
            let (base, blocks) = parse_pair(&key("write_region"), v)?;
            if blocks == 0 {
                return Err(field_err(&key("write_region"), "must cover at least one block"));
            }
            Some((base, blocks))
        }
        None => None,
    };
    let jitter = match f.get("jitter") {
        Some(&"exp") => true,
        Some(&"none") => false,
        Some(v) => return Err(field_err(&key("jitter"), format!("expected `exp` or `none`, found `{v}`"))),
        None => true,
    };
    Ok(PhaseSpec {
        duration_us,
        arrival_rate,
        read_fraction,
        address,
        working_set_blocks,
        write_region,
        jitter,
    })
}
