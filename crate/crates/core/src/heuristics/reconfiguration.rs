use std::collections::{BTreeMap, BTreeSet};

use crate::feasibility::{footprint, Occupancy};
use crate::model::{min_gpus, ClusterState, GpuId, PlacementPlan, ProfileId, Workload};

use super::{size_order, Board};

/// Rebuilds the layout of all movable workloads on as few GPUs as possible.
///
/// Starts from the lower bound on the GPU count and takes that many target
/// GPUs, unused ones first, then used ones from the least utilized. Profiles
/// that can use the extra memory slice go first, one per GPU (3g.40gb at
/// index 4, then 1g.20gb at index 6); the rest follow largest first, each on
/// the first target GPU with a feasible index. If something does not fit, one
/// more GPU is taken and the packing restarts. When even all eligible GPUs
/// are not enough, the state is returned unchanged.
pub fn reconfigure(state: &ClusterState) -> PlacementPlan {
    let board = Board::new(state);
    let pinned_gpus: BTreeSet<&GpuId> = state
        .placements
        .iter()
        .filter(|p| !p.workload.movable)
        .map(|p| &p.gpu)
        .collect();
    let movers: Vec<Workload> = state
        .placements
        .iter()
        .filter(|p| p.workload.movable)
        .map(|p| p.workload.clone())
        .collect();

    let mut candidates: Vec<usize> = board
        .ids_in_order()
        .iter()
        .copied()
        .filter(|&g| !board.is_allocated(g))
        .collect();
    let mut used: Vec<usize> = (0..board.gpu_count())
        .filter(|&g| board.is_allocated(g) && !pinned_gpus.contains(board.id(g)))
        .collect();
    used.sort_by(|&a, &b| {
        board
            .utilization(a)
            .cmp(&board.utilization(b))
            .then_with(|| board.id(a).cmp(board.id(b)))
    });
    candidates.extend(used);

    let gpu_spec = state.gpus.first().map(|g| g.spec.clone()).unwrap_or_else(crate::model::GpuSpec::a100_80gb);
    let mut n = min_gpus(&movers, &gpu_spec).max(usize::from(!movers.is_empty()));
    while n <= candidates.len() {
        if let Some(layout) = pack(state, &movers, &candidates[..n], &board) {
            return finish(state, &board, &candidates[..n], layout);
        }
        n += 1;
    }
    PlacementPlan::identity(state)
}

/// Per-target list of `(workload, index)`; `None` if something does not fit.
fn pack(
    state: &ClusterState,
    movers: &[Workload],
    targets: &[usize],
    board: &Board,
) -> Option<Vec<Vec<(Workload, u8)>>> {
    let mut occ = vec![Occupancy::default(); targets.len()];
    let mut out: Vec<Vec<(Workload, u8)>> = vec![Vec::new(); targets.len()];
    // Slices of each target held in the initial state, by workload.
    let initial: Vec<Vec<(Workload, u8)>> = targets
        .iter()
        .map(|&g| {
            board
                .workloads_on(g)
                .into_iter()
                .map(|p| {
                    let held = footprint(p.profile(), p.start_index).map(|f| f.slice_mask()).unwrap_or(0);
                    (p.workload, held)
                })
                .collect()
        })
        .collect();
    let source: BTreeMap<_, _> = state
        .placements
        .iter()
        .map(|p| (p.workload.id.clone(), p.gpu.clone()))
        .collect();

    // A workload placed back onto its own GPU may not take slices that other
    // workloads held initially.
    let allowed = |t: usize, w: &Workload, k: u8| -> bool {
        if source.get(&w.id) != Some(board.id(targets[t])) {
            return true;
        }
        let mask = footprint(w.profile, k).map(|f| f.slice_mask()).unwrap_or(u8::MAX);
        initial[t].iter().all(|(other, held)| other.id == w.id || held & mask == 0)
    };
    let try_at = |occ: &Occupancy, t: usize, w: &Workload, indexes: &[u8]| -> Option<u8> {
        indexes
            .iter()
            .copied()
            .find(|&k| occ.fits(w.spec(), k) && allowed(t, w, k))
    };

    let mut rest: Vec<Workload> = Vec::new();
    let mut extra_memory_users: Vec<Workload> = movers
        .iter()
        .filter(|w| w.profile == ProfileId(9) || w.profile == ProfileId(15))
        .cloned()
        .collect();
    extra_memory_users.sort_by_key(size_order);
    let mut next_target = 0;
    for w in extra_memory_users {
        let index = if w.profile == ProfileId(9) { 4 } else { 6 };
        let mut placed = false;
        while next_target < targets.len() && !placed {
            if let Some(k) = try_at(&occ[next_target], next_target, &w, &[index]) {
                occ[next_target].place(w.spec(), k);
                out[next_target].push((w.clone(), k));
                placed = true;
            }
            next_target += 1;
        }
        if !placed {
            rest.push(w);
        }
    }
    rest.extend(
        movers
            .iter()
            .filter(|w| w.profile != ProfileId(9) && w.profile != ProfileId(15))
            .cloned(),
    );
    rest.sort_by_key(size_order);

    for w in rest {
        let spec = w.spec();
        let spot = (0..targets.len()).find_map(|t| try_at(&occ[t], t, &w, spec.allowed_indexes).map(|k| (t, k)))?;
        occ[spot.0].place(spec, spot.1);
        out[spot.0].push((w, spot.1));
    }
    Some(out)
}

fn finish(state: &ClusterState, board: &Board, targets: &[usize], layout: Vec<Vec<(Workload, u8)>>) -> PlacementPlan {
    let mut next = Board::new(&ClusterState {
        gpus: state.gpus.clone(),
        placements: state.placements.iter().filter(|p| !p.workload.movable).cloned().collect(),
        pending: Vec::new(),
    });
    for (&g, items) in targets.iter().zip(layout) {
        for (w, k) in items {
            next.place(g, w, k);
        }
    }
    let final_state = next.into_state(state.pending.clone());
    let repartitioned = targets
        .iter()
        .filter(|&&g| board.is_allocated(g))
        .map(|&g| board.id(g).clone())
        .filter(|id| state.layout_of(id) != final_state.layout_of(id))
        .collect();
    PlacementPlan::from_states(state, final_state, repartitioned)
}
