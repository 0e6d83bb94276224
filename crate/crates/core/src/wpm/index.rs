//! Turning a bin-level solution into slice indexes.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::feasibility::{self, Occupancy};
use crate::model::{ClusterState, GpuId, IndexedPlacement, PlacementPlan, ProfileId};

use super::instance::{host_slice_base, BinKind, Choice, WpmInstance};
use super::solver::WpmSolution;

/// Lays out every bin of `solution` and diffs the result against the
/// instance's initial state.
pub fn index_solution(instance: &WpmInstance, solution: &WpmSolution) -> Result<PlacementPlan> {
    let mut plan = index_choices(instance, &solution.choices)?;
    plan.solver = Some(solution.summary());
    Ok(plan)
}

pub fn index_choices(instance: &WpmInstance, choices: &[Choice]) -> Result<PlacementPlan> {
    let initial = &instance.initial;
    let mut final_state = ClusterState {
        gpus: initial.gpus.clone(),
        placements: Vec::new(),
        pending: Vec::new(),
    };
    let mut repartitioned = BTreeSet::new();

    let members = |bin: usize| -> Vec<usize> {
        (0..choices.len())
            .filter(|&w| choices[w] == Choice::Bin(bin))
            .collect()
    };
    let put = |gpu: &GpuId, w: usize, start_index: u8, placements: &mut Vec<IndexedPlacement>| {
        placements.push(IndexedPlacement {
            gpu: gpu.clone(),
            workload: instance.workloads[w].clone(),
            start_index,
        });
    };

    for (h, host) in instance.hosts.iter().enumerate() {
        final_state.placements.extend(host.pinned.iter().cloned());
        for &w in &host.movable {
            if choices[w] == Choice::Stay {
                let original = initial
                    .placement_of(&instance.workloads[w].id)
                    .expect("movable host workloads are placed");
                put(&host.gpu.id, w, original.start_index, &mut final_state.placements);
            }
        }
        let base = host_slice_base(host);
        for &b in &host.partitions {
            let ws = members(b);
            if ws.is_empty() {
                continue;
            }
            let BinKind::Partition { partition, .. } = &instance.bins[b].kind else {
                unreachable!("host partitions are partition bins");
            };
            let profiles: Vec<ProfileId> = ws.iter().map(|&w| instance.workloads[w].profile).collect();
            let indexes = feasibility::find_layout_in(&profiles, base, partition.slice_mask)
                .ok_or_else(|| Error::LayoutFailure {
                    bin: instance.bins[b].label(instance),
                })?;
            for (&w, k) in ws.iter().zip(indexes) {
                put(&host.gpu.id, w, k, &mut final_state.placements);
            }
        }
        if let Some(t) = host.twin {
            let ws = members(t);
            if ws.is_empty() {
                continue;
            }
            repartitioned.insert(host.gpu.id.clone());
            for (w, k) in lay_out_twin(instance, h, &ws).ok_or_else(|| Error::LayoutFailure {
                bin: instance.bins[t].label(instance),
            })? {
                put(&host.gpu.id, w, k, &mut final_state.placements);
            }
        }
    }

    for (b, bin) in instance.bins.iter().enumerate() {
        let BinKind::Free { gpu } = bin.kind else {
            continue;
        };
        let ws = members(b);
        if ws.is_empty() {
            continue;
        }
        let profiles: Vec<ProfileId> = ws.iter().map(|&w| instance.workloads[w].profile).collect();
        let indexes = feasibility::find_layout(&profiles, &[]).ok_or_else(|| Error::LayoutFailure {
            bin: bin.label(instance),
        })?;
        let id = instance.free_gpus[gpu].id.clone();
        for (&w, k) in ws.iter().zip(indexes) {
            put(&id, w, k, &mut final_state.placements);
        }
    }

    for (w, &c) in choices.iter().enumerate() {
        if c == Choice::Unassigned {
            final_state.pending.push(instance.workloads[w].clone());
        }
    }
    final_state.canonicalize();
    final_state.validate().map_err(|e| Error::ConstraintViolation(format!("indexed plan is invalid: {e}")))?;
    Ok(PlacementPlan::from_states(initial, final_state, repartitioned))
}

/// Prefers keeping returning workloads at their original indexes; falls back
/// to a layout from scratch.
fn lay_out_twin(instance: &WpmInstance, host: usize, ws: &[usize]) -> Option<Vec<(usize, u8)>> {
    let gpu = &instance.hosts[host].gpu.id;
    let (returning, arriving): (Vec<usize>, Vec<usize>) = ws.iter().partition(|&&w| {
        instance
            .initial
            .placement_of(&instance.workloads[w].id)
            .is_some_and(|p| &p.gpu == gpu)
    });
    let fixed: Vec<(ProfileId, u8)> = returning
        .iter()
        .map(|&w| {
            let p = instance
                .initial
                .placement_of(&instance.workloads[w].id)
                .expect("returning workloads are placed");
            (p.profile(), p.start_index)
        })
        .collect();
    let profiles: Vec<ProfileId> = arriving.iter().map(|&w| instance.workloads[w].profile).collect();
    if let Some(indexes) = feasibility::find_layout(&profiles, &fixed) {
        let mut out: Vec<(usize, u8)> = returning.iter().copied().zip(fixed.iter().map(|f| f.1)).collect();
        out.extend(arriving.iter().copied().zip(indexes));
        return Some(out);
    }
    let profiles: Vec<ProfileId> = ws.iter().map(|&w| instance.workloads[w].profile).collect();
    let indexes = feasibility::find_layout_in(&profiles, Occupancy::default(), feasibility::ALL_SLICES)?;
    Some(ws.iter().copied().zip(indexes).collect())
}
