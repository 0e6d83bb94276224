//! The workload placement and migration model (WPM).
//!
//! Bins are unused GPUs, one imaginary twin per GPU whose workloads are all
//! movable (using the twin means repartitioning the real GPU from scratch),
//! and the free partitions of partially used GPUs. Each workload is either
//! left unassigned, kept in its current slot, or put into one bin. The
//! objective rewards placements and charges for used GPUs, repartitions,
//! migrations and wasted slices.

mod index;
mod instance;
mod solver;
mod weights;

use std::time::Duration;

pub use index::{index_choices, index_solution};
pub use instance::{build_instance, Bin, BinKind, BinVars, Choice, Host, Variables, WpmInstance};
pub use solver::{solve, solve_with_incumbents, SolveStatus, SolverSummary, WpmSolution};
pub use weights::{default_weights, WpmWeights};

use crate::error::Result;
use crate::model::{ClusterState, PlacementPlan, Workload};

/// Builds the model with default weights, solves it with the given plans as
/// starting points, and indexes the result.
pub fn optimize(
    state: &ClusterState,
    new_workloads: &[Workload],
    time_limit: Duration,
    warm_starts: &[PlacementPlan],
) -> Result<PlacementPlan> {
    let instance = build_instance(state, new_workloads, None)?;
    let seeds: Vec<Vec<Choice>> = warm_starts
        .iter()
        .filter_map(|p| instance.choices_from_plan(p).ok())
        .collect();
    let solution = solve_with_incumbents(&instance, time_limit, &seeds)?;
    index_solution(&instance, &solution)
}

/// Copy of `state` in which every placed workload is pinned.
pub fn pin_existing(state: &ClusterState) -> ClusterState {
    let mut pinned = state.clone();
    for p in &mut pinned.placements {
        p.workload.movable = false;
    }
    pinned
}
