//! Discrete-event simulator of an SSD I/O cache in front of a slower disk
//! subsystem, with interval-based load balancers that detect when the cache
//! itself becomes the bottleneck.
//!
//! Layering, bottom up: [`sim`] (clock and FIFO devices), [`cache`]
//! (LRU metadata and write policies), [`telemetry`] (per-interval queue
//! statistics), [`balancer`] (burst detection, workload classification,
//! policy assignment), [`workload`] (request streams), and [`runner`] /
//! [`report`] on top.

pub mod balancer;
pub mod cache;
pub mod config;
pub mod events;
pub mod report;
pub mod runner;
pub mod sim;
pub mod telemetry;
pub mod workload;

use thiserror::Error;

/// Top-level failure, split the way the command line reports it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Run(#[from] runner::RunError),
    #[error(transparent)]
    Report(#[from] report::ReportError),
}

impl Error {
    /// Process exit status: 1 for configuration problems, 2 for anything
    /// that went wrong while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Run(_) | Error::Report(_) => 2,
        }
    }
}
