//! Rule-based placement for the three use cases and the two baseline
//! schedulers used for comparison.
//!
//! Every function is a deterministic batch decision over one cluster state.

mod baselines;
mod compaction;
mod initial;
mod reconfiguration;

use std::collections::BTreeMap;

pub use baselines::{baseline_compact, baseline_reconfigure, first_fit, load_balanced, Baseline};
pub use compaction::compact;
pub use initial::place_initial;
pub use reconfiguration::reconfigure;

use crate::feasibility::Occupancy;
use crate::model::{ClusterState, GpuId, IndexedPlacement, Utilization, Workload, WorkloadId};

/// Mutable working copy of a cluster state with per-GPU occupancy.
#[derive(Clone, Debug)]
pub(crate) struct Board {
    pub state: ClusterState,
    occ: Vec<Occupancy>,
    count: Vec<usize>,
    position: BTreeMap<GpuId, usize>,
    /// GPU positions sorted by GPU id.
    by_id: Vec<usize>,
}

impl Board {
    pub fn new(state: &ClusterState) -> Self {
        let position: BTreeMap<GpuId, usize> = state
            .gpus
            .iter()
            .enumerate()
            .map(|(i, g)| (g.id.clone(), i))
            .collect();
        let mut board = Board {
            state: state.clone(),
            occ: vec![Occupancy::default(); state.gpus.len()],
            count: vec![0; state.gpus.len()],
            by_id: position.values().copied().collect(),
            position,
        };
        for g in 0..state.gpus.len() {
            board.refresh(g);
        }
        board
    }

    fn refresh(&mut self, g: usize) {
        let layout = self.state.layout_of(&self.state.gpus[g].id);
        self.occ[g] = Occupancy::from_layout(&layout);
        self.count[g] = layout.len();
    }

    pub fn gpu_count(&self) -> usize {
        self.state.gpus.len()
    }

    pub fn id(&self, g: usize) -> &GpuId {
        &self.state.gpus[g].id
    }

    pub fn position(&self, id: &GpuId) -> Option<usize> {
        self.position.get(id).copied()
    }

    pub fn occupancy(&self, g: usize) -> Occupancy {
        self.occ[g]
    }

    pub fn is_allocated(&self, g: usize) -> bool {
        self.count[g] > 0
    }

    /// GPU positions in id order.
    pub fn ids_in_order(&self) -> &[usize] {
        &self.by_id
    }

    pub fn utilization(&self, g: usize) -> Utilization {
        let o = self.occ[g];
        Utilization {
            used: u32::from(o.compute) + u32::from(o.memory),
            total: self.state.gpus[g].spec.joint_slices(),
        }
    }

    /// Utilization after adding one more workload of `w`'s profile.
    pub fn utilization_with(&self, g: usize, w: &Workload) -> Utilization {
        let mut u = self.utilization(g);
        let s = w.spec();
        u.used += u32::from(s.compute_slices) + u32::from(s.memory_slices);
        u
    }

    /// Free compute and memory slices.
    pub fn free_slices(&self, g: usize) -> (u8, u8) {
        let spec = &self.state.gpus[g].spec;
        let o = self.occ[g];
        (spec.total_compute - o.compute, spec.total_memory_slices - o.memory)
    }

    pub fn workloads_on(&self, g: usize) -> Vec<IndexedPlacement> {
        let id = self.id(g).clone();
        let mut v: Vec<IndexedPlacement> = self.state.placements_on(&id).cloned().collect();
        v.sort_by_key(|p| p.start_index);
        v
    }

    pub fn place(&mut self, g: usize, workload: Workload, start_index: u8) {
        self.occ[g].place(workload.spec(), start_index);
        self.count[g] += 1;
        self.state.placements.push(IndexedPlacement {
            gpu: self.id(g).clone(),
            workload,
            start_index,
        });
    }

    pub fn remove(&mut self, workload: &WorkloadId) -> Option<IndexedPlacement> {
        let i = self.state.placements.iter().position(|p| &p.workload.id == workload)?;
        let p = self.state.placements.remove(i);
        let g = self.position(&p.gpu).expect("placements reference known GPUs");
        self.refresh(g);
        Some(p)
    }

    pub fn into_state(mut self, pending: Vec<Workload>) -> ClusterState {
        self.state.pending = pending;
        self.state.canonicalize();
        self.state
    }
}

/// Initial-deployment choice: among `candidates`, the GPU whose joint
/// utilization is highest after adding `w` at its preferred index. Ties go to
/// the lower GPU id.
pub(crate) fn fullest_fit(board: &Board, w: &Workload, candidates: &[usize]) -> Option<(usize, u8)> {
    let spec = w.spec();
    let mut best: Option<(Utilization, &GpuId, usize, u8)> = None;
    for &g in candidates {
        let Some(k) = board.occupancy(g).preferred_index(spec) else {
            continue;
        };
        let u = board.utilization_with(g, w);
        let better = match &best {
            None => true,
            Some((bu, bid, _, _)) => u > *bu || (u == *bu && board.id(g) < *bid),
        };
        if better {
            best = Some((u, board.id(g), g, k));
        }
    }
    best.map(|(_, _, g, k)| (g, k))
}

/// How a workload picks its GPU and index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Rule {
    /// Most utilized GPU after placement, preferred index.
    Fullest,
    /// Lowest GPU id, lowest-numbered index.
    FirstFit,
    /// Least utilized GPU, lowest-numbered index.
    LoadBalanced,
}

impl Rule {
    pub fn pick(self, board: &Board, w: &Workload, candidates: &[usize]) -> Option<(usize, u8)> {
        let mut order = candidates.to_vec();
        match self {
            Rule::Fullest => return fullest_fit(board, w, candidates),
            Rule::FirstFit => order.sort_by(|&a, &b| board.id(a).cmp(board.id(b))),
            Rule::LoadBalanced => order.sort_by(|&a, &b| {
                board
                    .utilization(a)
                    .cmp(&board.utilization(b))
                    .then_with(|| board.id(a).cmp(board.id(b)))
            }),
        }
        order
            .into_iter()
            .find_map(|g| board.occupancy(g).lowest_index(w.spec()).map(|k| (g, k)))
    }

    /// Orders a batch of workloads the way this rule consumes them.
    pub fn sort(self, ws: &mut [Workload]) {
        match self {
            Rule::Fullest => ws.sort_by_key(size_order),
            Rule::FirstFit => ws.sort_by(|a, b| a.id.cmp(&b.id)),
            Rule::LoadBalanced => {}
        }
    }
}

/// Workloads waiting in `state` followed by `new_workloads`.
pub(crate) fn arrivals(state: &ClusterState, new_workloads: &[Workload]) -> Vec<Workload> {
    state.pending.iter().chain(new_workloads).cloned().collect()
}

/// Sort key that orders workloads largest first (ascending profile id).
pub(crate) fn size_order(w: &Workload) -> (crate::model::ProfileId, WorkloadId) {
    (w.profile, w.id.clone())
}
