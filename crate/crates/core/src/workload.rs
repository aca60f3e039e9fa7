//! Application request streams: phase-structured synthetic scenarios and a
//! plain-text trace format.
//!
//! Trace lines are `arrival_us,lba,blocks,op` with `op` one of `R`/`W`;
//! blank lines and lines starting with `#` are ignored. Records spanning
//! several blocks are split into one request per block.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use thiserror::Error;

use crate::sim::{AppRequest, Origin, SimTime};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum AddressModel {
    /// Uniform over `[base, base + working_set_blocks)`.
    UniformRandom { base: u64 },
    /// `start, start + stride, start + 2*stride, ...`
    Sequential { start: u64, stride: u64 },
}

/// One phase of a scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSpec {
    pub duration_us: u64,
    /// Requests per second.
    pub arrival_rate: f64,
    pub read_fraction: f64,
    pub address: AddressModel,
    pub working_set_blocks: u64,
    /// Optional separate region for writes: uniform over `[base, base + blocks)`.
    pub write_region: Option<(u64, u64)>,
    /// Exponential inter-arrival jitter. The phase still issues exactly its
    /// nominal request count; only the spacing becomes random.
    pub jitter: bool,
}

impl PhaseSpec {
    /// Requests this phase issues: `rate * duration`, rounded.
    pub fn request_count(&self) -> u64 {
        (self.arrival_rate * self.duration_us as f64 / 1e6).round() as u64
    }

    pub fn validate(&self, index: usize) -> Result<(), WorkloadError> {
        let bad = |msg: &str| {
            Err(WorkloadError::InvalidPhase {
                index,
                message: msg.to_string(),
            })
        };
        if self.duration_us == 0 {
            return bad("duration must be positive");
        }
        if !(self.arrival_rate.is_finite() && self.arrival_rate > 0.0) {
            return bad("arrival rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.read_fraction) {
            return bad("read fraction must lie in [0, 1]");
        }
        if self.working_set_blocks == 0 {
            return bad("working set must be at least one block");
        }
        if let AddressModel::Sequential { stride: 0, .. } = self.address {
            return bad("sequential stride must be positive");
        }
        if let Some((_, 0)) = self.write_region {
            return bad("write region must be at least one block");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("scenario has no phases")]
    EmptyScenario,
    #[error("phase {index}: {message}")]
    InvalidPhase { index: usize, message: String },
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("trace line {line}: arrival {current} precedes {previous} on line {previous_line}")]
    Unsorted {
        line: usize,
        previous_line: usize,
        previous: u64,
        current: u64,
    },
    #[error("reading trace: {0}")]
    Io(#[from] io::Error),
}

/// Generates the request stream of a scenario. Same phases and seed give the
/// same stream.
pub fn generate(scenario: &[PhaseSpec], seed: u64) -> Result<Vec<AppRequest>, WorkloadError> {
    if scenario.is_empty() {
        return Err(WorkloadError::EmptyScenario);
    }
    for (i, phase) in scenario.iter().enumerate() {
        phase.validate(i)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut phase_start = 0u64;
    for phase in scenario {
        let n = phase.request_count();
        let times = arrival_times(phase, n, phase_start, &mut rng);
        let mut seq = 0u64;
        for t in times {
            let is_read = rng.random::<f64>() < phase.read_fraction;
            let lba = match (is_read, phase.write_region) {
                (false, Some((base, blocks))) => base + rng.random_range(0..blocks),
                _ => match phase.address {
                    AddressModel::UniformRandom { base } => {
                        base + rng.random_range(0..phase.working_set_blocks)
                    }
                    AddressModel::Sequential { start, stride } => {
                        seq += 1;
                        start + (seq - 1) * stride
                    }
                },
            };
            let id = out.len() as u64;
            out.push(if is_read {
                AppRequest::read(id, SimTime(t), lba)
            } else {
                AppRequest::write(id, SimTime(t), lba)
            });
        }
        phase_start += phase.duration_us;
    }
    Ok(out)
}

fn arrival_times(phase: &PhaseSpec, n: u64, start: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let dur = phase.duration_us;
    if n == 0 {
        return Vec::new();
    }
    if !phase.jitter {
        return (0..n)
            .map(|k| start + ((k as u128 * dur as u128) / n as u128) as u64)
            .collect();
    }
    // n + 1 exponential gaps rescaled to the phase length: a Poisson process
    // conditioned on exactly n arrivals.
    let gaps: Vec<f64> = (0..=n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = gaps.iter().sum();
    let mut acc = 0.0;
    let mut times = Vec::with_capacity(n as usize);
    let mut last = start;
    for g in &gaps[..n as usize] {
        acc += g;
        let t = start + ((acc / total) * dur as f64).floor() as u64;
        let t = t.clamp(last, start + dur - 1);
        times.push(t);
        last = t;
    }
    times
}

/// One line of a trace file.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub arrival_us: u64,
    pub lba: u64,
    pub blocks: u64,
    pub op: Origin,
}

impl TraceRecord {
    fn parse(line: &str, number: usize) -> Result<Self, TraceError> {
        let malformed = |message: String| TraceError::Malformed {
            line: number,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(malformed(format!(
                "expected 4 fields `arrival_us,lba,blocks,op`, found {}",
                fields.len()
            )));
        }
        let int = |name: &str, s: &str| {
            s.parse::<u64>()
                .map_err(|_| malformed(format!("{name} `{s}` is not a non-negative integer")))
        };
        let arrival_us = int("arrival_us", fields[0])?;
        let lba = int("lba", fields[1])?;
        let blocks = int("blocks", fields[2])?;
        if blocks == 0 {
            return Err(malformed("blocks must be at least 1".into()));
        }
        let op = match fields[3] {
            "R" => Origin::R,
            "W" => Origin::W,
            other => return Err(malformed(format!("op `{other}` is not R or W"))),
        };
        Ok(TraceRecord {
            arrival_us,
            lba,
            blocks,
            op,
        })
    }
}

/// Reads a trace, splitting multi-block records into block-granular requests
/// with ids assigned in file order.
pub fn load_trace<R: BufRead>(reader: R) -> Result<Vec<AppRequest>, TraceError> {
    let mut out = Vec::new();
    let mut previous: Option<(usize, u64)> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let number = i + 1;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let rec = TraceRecord::parse(text, number)?;
        if let Some((previous_line, prev)) = previous {
            if rec.arrival_us < prev {
                return Err(TraceError::Unsorted {
                    line: number,
                    previous_line,
                    previous: prev,
                    current: rec.arrival_us,
                });
            }
        }
        previous = Some((number, rec.arrival_us));
        for lba in rec.lba..rec.lba + rec.blocks {
            out.push(AppRequest {
                id: out.len() as u64,
                arrival: SimTime(rec.arrival_us),
                lba,
                origin: rec.op,
            });
        }
    }
    Ok(out)
}

pub fn load_trace_file(path: &Path) -> Result<Vec<AppRequest>, TraceError> {
    load_trace(BufReader::new(File::open(path)?))
}

/// Writes one single-block record per request.
pub fn write_trace<W: Write>(mut w: W, requests: &[AppRequest]) -> io::Result<()> {
    writeln!(w, "# arrival_us,lba,blocks,op")?;
    for r in requests {
        writeln!(w, "{},{},1,{}", r.arrival.0, r.lba, r.origin)?;
    }
    w.flush()
}
