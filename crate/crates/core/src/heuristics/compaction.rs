use std::collections::BTreeSet;

use crate::model::{ClusterState, PlacementPlan};

use super::{Board, Rule};

/// Vacates under-utilized GPUs by moving their workloads onto other
/// allocated GPUs, least-utilized GPU first, until no GPU can be vacated.
///
/// Workloads only move into slots that were free in the initial state, so no
/// move has to wait for another. When slice counts would allow a vacate but
/// indexes do not, up to `spare_gpus` unused GPUs are brought in one at a
/// time and kept only if doing so saves at least one GPU overall.
pub fn compact(state: &ClusterState, spare_gpus: usize) -> PlacementPlan {
    compact_with(state, Rule::Fullest, spare_gpus)
}

pub(crate) fn compact_with(state: &ClusterState, rule: Rule, spare_gpus: usize) -> PlacementPlan {
    let mut board = Board::new(state);
    let mut spares: Vec<usize> = board
        .ids_in_order()
        .iter()
        .copied()
        .filter(|&g| !board.is_allocated(g))
        .take(spare_gpus)
        .collect();
    spares.reverse();

    loop {
        let blocked = vacate_to_fixed_point(&mut board, rule, None).1;
        if !blocked {
            break;
        }
        let Some(&spare) = spares.last() else {
            break;
        };
        let mut trial = board.clone();
        let (vacated, _) = vacate_to_fixed_point(&mut trial, rule, Some(spare));
        if vacated > usize::from(trial.is_allocated(spare)) {
            board = trial;
            spares.pop();
        } else {
            break;
        }
    }
    let pending = state.pending.clone();
    PlacementPlan::from_states(state, board.into_state(pending), BTreeSet::new())
}

/// Repeats single vacates until none succeeds. Returns the number of GPUs
/// vacated and whether the last round saw a GPU whose workloads fit by slice
/// count but not by index.
fn vacate_to_fixed_point(board: &mut Board, rule: Rule, extra: Option<usize>) -> (usize, bool) {
    let mut vacated = 0;
    loop {
        match vacate_one(board, rule, extra) {
            Ok(()) => vacated += 1,
            Err(blocked) => return (vacated, blocked),
        }
    }
}

fn vacate_one(board: &mut Board, rule: Rule, extra: Option<usize>) -> Result<(), bool> {
    let mut allocated: Vec<usize> = (0..board.gpu_count())
        .filter(|&g| board.is_allocated(g) && Some(g) != extra)
        .collect();
    allocated.sort_by(|&a, &b| {
        board
            .utilization(a)
            .cmp(&board.utilization(b))
            .then_with(|| board.id(a).cmp(board.id(b)))
    });
    let mut blocked = false;
    for &g in &allocated {
        let placed = board.workloads_on(g);
        if placed.iter().any(|p| !p.workload.movable) {
            continue;
        }
        let mut targets: Vec<usize> = allocated.iter().copied().filter(|&o| o != g).collect();
        targets.extend(extra);
        let (need_c, need_m) = placed.iter().fold((0u32, 0u32), |(c, m), p| {
            let s = p.workload.spec();
            (c + u32::from(s.compute_slices), m + u32::from(s.memory_slices))
        });
        let (free_c, free_m) = targets.iter().fold((0u32, 0u32), |(c, m), &t| {
            let (fc, fm) = board.free_slices(t);
            (c + u32::from(fc), m + u32::from(fm))
        });
        if need_c > free_c || need_m > free_m {
            continue;
        }
        let mut trial = board.clone();
        let mut movers: Vec<_> = placed.iter().map(|p| p.workload.clone()).collect();
        rule.sort(&mut movers);
        for w in &movers {
            trial.remove(&w.id);
        }
        let all_placed = movers.iter().all(|w| match rule.pick(&trial, w, &targets) {
            Some((t, k)) => {
                trial.place(t, w.clone(), k);
                true
            }
            None => false,
        });
        if all_placed {
            *board = trial;
            return Ok(());
        }
        blocked = true;
    }
    Err(blocked)
}
