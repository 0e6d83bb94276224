use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{ClusterState, PlacementPlan, Workload};

use super::compaction::compact_with;
use super::{arrivals, Board, Rule};

/// The two comparison schedulers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// GPUs and workloads by id, lowest-numbered free index.
    FirstFit,
    /// Least utilized GPU first, workloads in arrival order, lowest-numbered
    /// free index.
    LoadBalanced,
}

impl Baseline {
    fn rule(self) -> Rule {
        match self {
            Baseline::FirstFit => Rule::FirstFit,
            Baseline::LoadBalanced => Rule::LoadBalanced,
        }
    }
}

pub fn first_fit(state: &ClusterState, new_workloads: &[Workload]) -> PlacementPlan {
    place_batch(state, Board::new(state), arrivals(state, new_workloads), Rule::FirstFit)
}

pub fn load_balanced(state: &ClusterState, new_workloads: &[Workload]) -> PlacementPlan {
    place_batch(state, Board::new(state), arrivals(state, new_workloads), Rule::LoadBalanced)
}

/// Compaction driven by a baseline's placement rule, without extra GPUs.
pub fn baseline_compact(state: &ClusterState, baseline: Baseline) -> PlacementPlan {
    compact_with(state, baseline.rule(), 0)
}

/// Re-places every movable workload onto an emptied cluster with a baseline's
/// placement rule. Pinned workloads stay where they are.
pub fn baseline_reconfigure(state: &ClusterState, baseline: Baseline) -> PlacementPlan {
    let mut sorted = state.clone();
    sorted.canonicalize();
    let (pinned, movers): (Vec<_>, Vec<_>) = sorted.placements.into_iter().partition(|p| !p.workload.movable);
    let emptied = ClusterState {
        gpus: state.gpus.clone(),
        placements: pinned,
        pending: Vec::new(),
    };
    let mut queue: Vec<Workload> = movers.into_iter().map(|p| p.workload).collect();
    queue.extend(state.pending.iter().cloned());
    let plan = place_batch(state, Board::new(&emptied), queue, baseline.rule());
    let repartitioned = state
        .used_gpus()
        .into_iter()
        .filter(|id| {
            let after = plan.final_state.layout_of(id);
            !after.is_empty() && after != state.layout_of(id)
        })
        .collect();
    PlacementPlan { repartitioned_gpus: repartitioned, ..plan }
}

fn place_batch(initial: &ClusterState, mut board: Board, mut queue: Vec<Workload>, rule: Rule) -> PlacementPlan {
    rule.sort(&mut queue);
    let everything: Vec<usize> = (0..board.gpu_count()).collect();
    let mut pending = Vec::new();
    for w in queue {
        match rule.pick(&board, &w, &everything) {
            Some((g, k)) => board.place(g, w, k),
            None => pending.push(w),
        }
    }
    PlacementPlan::from_states(initial, board.into_state(pending), BTreeSet::new())
}
