//! collie-forge searches a four-dimensional RDMA workload space for
//! performance anomalies.
//!
//! The search drives hardware counters to extreme value regions with
//! simulated annealing, detects anomalies from pause-frame and throughput
//! symptoms, and reduces every finding to a minimal feature set (MFS) that
//! reproduces it. In place of a two-server RDMA testbed, workloads are
//! evaluated against a deterministic subsystem simulator seeded with
//! injected anomaly rules, or against an external engine speaking a
//! line-delimited JSON adapter protocol.
//!
//! The crate is organized around five pieces:
//!
//! * [`workload`] — the search space, workload points, mutation, and
//!   MFS-region matching
//! * [`sim`] — the parameterized bottleneck model and anomaly rules
//! * [`monitor`] — anomaly detection and minimal-feature-set extraction
//! * [`search`] — the annealing search, counter ranking, and campaigns
//! * [`commands`] — the CLI entry points and on-disk artifacts

pub mod adapter;
pub mod commands;
pub mod config;
pub mod error;
pub mod monitor;
pub mod report;
pub mod rng;
pub mod search;
pub mod sim;
pub mod tester;
pub mod workload;

pub use error::Error;
