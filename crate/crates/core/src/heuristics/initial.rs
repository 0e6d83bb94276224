use std::collections::BTreeSet;

use crate::model::{ClusterState, PlacementPlan, Workload};

use super::{arrivals, fullest_fit, size_order, Board};

/// Places new workloads without moving existing ones.
///
/// Workloads go largest first onto the allocated GPU that ends up most
/// utilized, at the preferred index. When no allocated GPU has room, the
/// lowest-id unused GPU is taken; failing that the workload stays pending.
pub fn place_initial(state: &ClusterState, new_workloads: &[Workload]) -> PlacementPlan {
    let mut board = Board::new(state);
    let mut pending = Vec::new();
    let mut queue = arrivals(state, new_workloads);
    queue.sort_by_key(size_order);
    for w in queue {
        if !place_one(&mut board, &w) {
            pending.push(w);
        }
    }
    PlacementPlan::from_states(state, board.into_state(pending), BTreeSet::new())
}

/// Places one workload by the initial-deployment rule over all GPUs.
pub(crate) fn place_one(board: &mut Board, w: &Workload) -> bool {
    let allocated: Vec<usize> = (0..board.gpu_count()).filter(|&g| board.is_allocated(g)).collect();
    if let Some((g, k)) = fullest_fit(board, w, &allocated) {
        board.place(g, w.clone(), k);
        return true;
    }
    let fresh = board
        .ids_in_order()
        .iter()
        .copied()
        .find(|&g| !board.is_allocated(g) && board.occupancy(g).preferred_index(w.spec()).is_some());
    match fresh {
        Some(g) => {
            let k = board
                .occupancy(g)
                .preferred_index(w.spec())
                .expect("checked above");
            board.place(g, w.clone(), k);
            true
        }
        None => false,
    }
}
