//! Placement optimization for Multi-Instance GPU (MIG) clusters.
//!
//! The crate covers the full pipeline for deciding where LLM-inference
//! workloads should live on partitioned GPUs:
//!
//! - [`model`]: profiles, GPUs, workloads, cluster states and plans.
//! - [`feasibility`]: which `(profile, index)` placements are physically
//!   realizable, layout search, and free-partition preprocessing.
//! - [`wpm`]: the workload placement and migration optimization model and its
//!   exact branch-and-bound solver.
//! - [`heuristics`]: rule-based placement for initial deployment, compaction
//!   and reconfiguration, plus the first-fit and load-balanced baselines.
//! - [`metrics`]: evaluation of a plan against its initial state.
//! - [`harness`]: seeded test-case generation and batch experiments.
//! - [`format`]: the JSON file formats used by the command-line tool.

pub mod error;
pub mod feasibility;
pub mod format;
pub mod harness;
pub mod heuristics;
pub mod metrics;
pub mod model;
pub mod wpm;

pub use error::{Error, Result};
