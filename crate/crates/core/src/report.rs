//! Side-by-side comparison of two run directories.
//!
//! Run B is the reference: its burst intervals select the windows compared,
//! and every delta is `(b - a) / b * 100`, so positive means A did better
//! (lower latency, less cache load).

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("reading {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: missing {what}")]
    Missing { path: PathBuf, what: String },
    #[error("{path}: bad value `{value}` for {what}")]
    BadValue {
        path: PathBuf,
        what: String,
        value: String,
    },
    #[error("runs used different workloads (scenario_hash {a} vs {b}); refusing to compare")]
    ScenarioMismatch { a: String, b: String },
}

/// The parts of a run directory a comparison needs.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub summary: HashMap<String, String>,
    pub intervals: Vec<IntervalRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntervalRecord {
    pub index: u64,
    pub burst: bool,
    pub ssd_qsize: u64,
    pub ssd_submitted: u64,
    pub ssd_served: u64,
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> ReportError + '_ {
    move |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_field<T: std::str::FromStr>(path: &Path, what: &str, value: &str) -> Result<T, ReportError> {
    value.parse().map_err(|_| ReportError::BadValue {
        path: path.to_path_buf(),
        what: what.to_string(),
        value: value.to_string(),
    })
}

impl RunRecord {
    pub fn load(dir: &Path) -> Result<Self, ReportError> {
        let path = dir.join("summary.csv");
        let mut rd = csv::Reader::from_path(&path).map_err(csv_err(&path))?;
        let mut summary = HashMap::new();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err(&path))?;
            if let (Some(k), Some(v)) = (rec.get(0), rec.get(1)) {
                summary.insert(k.to_string(), v.to_string());
            }
        }

        let path = dir.join("intervals.csv");
        let mut rd = csv::Reader::from_path(&path).map_err(csv_err(&path))?;
        let headers = rd.headers().map_err(csv_err(&path))?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| ReportError::Missing {
                path: path.clone(),
                what: format!("column `{name}`"),
            })
        };
        let index = col("interval")?;
        let burst = col("burst")?;
        let qsize = col("ssd_qsize")?;
        let submitted = col("ssd_submitted")?;
        let served: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with("ssd_served_"))
            .map(|(i, _)| i)
            .collect();
        let mut intervals = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err(&path))?;
            let get = |i: usize| rec.get(i).unwrap_or("");
            let mut ssd_served = 0u64;
            for &i in &served {
                ssd_served += parse_field::<u64>(&path, &headers[i], get(i))?;
            }
            intervals.push(IntervalRecord {
                index: parse_field(&path, "interval", get(index))?,
                burst: parse_field(&path, "burst", get(burst))?,
                ssd_qsize: parse_field(&path, "ssd_qsize", get(qsize))?,
                ssd_submitted: parse_field(&path, "ssd_submitted", get(submitted))?,
                ssd_served,
            });
        }
        Ok(RunRecord {
            dir: dir.to_path_buf(),
            summary,
            intervals,
        })
    }

    pub fn metric(&self, key: &str) -> Result<&str, ReportError> {
        self.summary
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| ReportError::Missing {
                path: self.dir.join("summary.csv"),
                what: format!("metric `{key}`"),
            })
    }

    fn metric_f64(&self, key: &str) -> Result<f64, ReportError> {
        parse_field(&self.dir.join("summary.csv"), key, self.metric(key)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Delta {
    pub name: &'static str,
    pub a: f64,
    pub b: f64,
}

impl Delta {
    /// `(b - a) / b * 100`; zero when both are zero, `None` when only `b` is.
    pub fn percent(&self) -> Option<f64> {
        if self.b == 0.0 {
            (self.a == 0.0).then_some(0.0)
        } else {
            Some((self.b - self.a) / self.b * 100.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub scenario_hash: String,
    pub balancer_a: String,
    pub balancer_b: String,
    /// Burst intervals of run B over which load is compared.
    pub reference_intervals: usize,
    pub deltas: Vec<Delta>,
}

impl Comparison {
    pub fn delta(&self, name: &str) -> Option<&Delta> {
        self.deltas.iter().find(|d| d.name == name)
    }
}

pub const MEAN_LATENCY: &str = "mean_latency_us";
pub const BURST_SSD_SERVED: &str = "burst_ssd_served_ops";
pub const BURST_SSD_SUBMITTED: &str = "burst_ssd_submitted_ops";
pub const BURST_SSD_QSIZE: &str = "burst_mean_ssd_qsize";

pub fn compare_records(a: &RunRecord, b: &RunRecord) -> Result<Comparison, ReportError> {
    let (ha, hb) = (a.metric("scenario_hash")?, b.metric("scenario_hash")?);
    if ha != hb {
        return Err(ReportError::ScenarioMismatch {
            a: ha.to_string(),
            b: hb.to_string(),
        });
    }
    let reference: BTreeSet<u64> = b.intervals.iter().filter(|r| r.burst).map(|r| r.index).collect();
    let load = |run: &RunRecord| {
        let rows: Vec<&IntervalRecord> = run
            .intervals
            .iter()
            .filter(|r| reference.contains(&r.index))
            .collect();
        let served: u64 = rows.iter().map(|r| r.ssd_served).sum();
        let submitted: u64 = rows.iter().map(|r| r.ssd_submitted).sum();
        // intervals missing from a shorter run count as an empty queue
        let qsize = if reference.is_empty() {
            0.0
        } else {
            rows.iter().map(|r| r.ssd_qsize).sum::<u64>() as f64 / reference.len() as f64
        };
        (served as f64, submitted as f64, qsize)
    };
    let (sa, ua, qa) = load(a);
    let (sb, ub, qb) = load(b);
    Ok(Comparison {
        scenario_hash: ha.to_string(),
        balancer_a: a.metric("balancer")?.to_string(),
        balancer_b: b.metric("balancer")?.to_string(),
        reference_intervals: reference.len(),
        deltas: vec![
            Delta {
                name: MEAN_LATENCY,
                a: a.metric_f64("latency_mean_us")?,
                b: b.metric_f64("latency_mean_us")?,
            },
            Delta {
                name: BURST_SSD_SERVED,
                a: sa,
                b: sb,
            },
            Delta {
                name: BURST_SSD_SUBMITTED,
                a: ua,
                b: ub,
            },
            Delta {
                name: BURST_SSD_QSIZE,
                a: qa,
                b: qb,
            },
        ],
    })
}

pub fn compare(dir_a: &Path, dir_b: &Path) -> Result<Comparison, ReportError> {
    compare_records(&RunRecord::load(dir_a)?, &RunRecord::load(dir_b)?)
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario_hash: {}", self.scenario_hash)?;
        writeln!(
            f,
            "A: {}  B: {}  reference burst intervals (from B): {}",
            self.balancer_a, self.balancer_b, self.reference_intervals
        )?;
        writeln!(f, "{:<26} {:>14} {:>14} {:>12}", "metric", "A", "B", "improvement")?;
        for d in &self.deltas {
            let pct = d
                .percent()
                .map_or_else(|| "n/a".to_string(), |p| format!("{p:.2}%"));
            writeln!(f, "{:<26} {:>14.3} {:>14.3} {:>12}", d.name, d.a, d.b, pct)?;
        }
        Ok(())
    }
}
