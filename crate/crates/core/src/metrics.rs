//! Plan evaluation: GPU count, wastage, availability, migration cost and
//! utilization, plus normalization across approaches.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::{footprint, GPU_SLICES};
use crate::model::{ClusterState, PlacementPlan, ProfileId, WorkloadId};

/// Column names, in report order.
pub const METRIC_NAMES: [&str; 9] = [
    "gpus_used",
    "memory_wastage",
    "compute_wastage",
    "availability",
    "migration_size",
    "pending_model_size",
    "sequential_migrations",
    "memory_utilization",
    "compute_utilization",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub gpus_used: usize,
    /// Memory slices lost because slice 6 holds a profile that cannot use
    /// the extra memory slice.
    pub memory_wastage: u32,
    pub compute_wastage: u32,
    /// Free GPU slices across the cluster, minus the GPU slices pending
    /// workloads would need. Negative when pending demand exceeds free space.
    pub availability: i64,
    /// Memory slices of existing workloads that changed GPU.
    pub migration_size: u32,
    pub pending_model_size: u32,
    pub sequential_migrations: usize,
    pub memory_utilization: f64,
    pub compute_utilization: f64,
}

impl MetricsReport {
    pub fn values(&self) -> [f64; 9] {
        [
            self.gpus_used as f64,
            f64::from(self.memory_wastage),
            f64::from(self.compute_wastage),
            self.availability as f64,
            f64::from(self.migration_size),
            f64::from(self.pending_model_size),
            self.sequential_migrations as f64,
            self.memory_utilization,
            self.compute_utilization,
        ]
    }
}

/// Slice accounting of one GPU. For a valid layout
/// `used + free + wasted` is 7 for compute and 8 for memory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SliceAccount {
    pub used_compute: u8,
    pub free_compute: u8,
    pub wasted_compute: u8,
    pub used_memory: u8,
    pub free_memory: u8,
    pub wasted_memory: u8,
}

pub fn slice_account(layout: &[(ProfileId, u8)]) -> SliceAccount {
    let mut a = SliceAccount::default();
    let mut occupied = 0u8;
    for &(p, k) in layout {
        let s = p.spec();
        let f = footprint(p, k).expect("evaluated layouts are valid");
        a.used_compute += s.compute_slices;
        a.used_memory += s.memory_slices;
        a.wasted_compute += f.wasted_compute_slices;
        a.wasted_memory += u8::from(f.wasted_extra_memory);
        occupied |= f.slice_mask();
    }
    a.free_compute = GPU_SLICES - occupied.count_ones() as u8;
    a.free_memory = GPU_SLICES + 1 - a.used_memory - a.wasted_memory;
    a
}

/// Existing workloads that move to another GPU onto slices held by a
/// different workload in the initial state.
pub fn sequential_migrations(initial: &ClusterState, plan: &PlacementPlan) -> Vec<WorkloadId> {
    let mut out = Vec::new();
    for p in &plan.final_state.placements {
        let Some(before) = initial.placement_of(&p.workload.id) else {
            continue;
        };
        if before.gpu == p.gpu {
            continue;
        }
        let Ok(dest) = footprint(p.profile(), p.start_index) else {
            continue;
        };
        let blocked = initial.placements_on(&p.gpu).any(|o| {
            o.workload.id != p.workload.id
                && footprint(o.profile(), o.start_index).is_ok_and(|f| f.slice_mask() & dest.slice_mask() != 0)
        });
        if blocked {
            out.push(p.workload.id.clone());
        }
    }
    out.sort();
    out
}

pub fn evaluate(initial: &ClusterState, plan: &PlacementPlan) -> MetricsReport {
    let final_state = &plan.final_state;
    let mut report = MetricsReport {
        gpus_used: 0,
        memory_wastage: 0,
        compute_wastage: 0,
        availability: 0,
        migration_size: 0,
        pending_model_size: 0,
        sequential_migrations: sequential_migrations(initial, plan).len(),
        memory_utilization: 0.0,
        compute_utilization: 0.0,
    };
    let (mut used_c, mut used_m, mut total_c, mut total_m) = (0u32, 0u32, 0u32, 0u32);
    for gpu in &final_state.gpus {
        let layout = final_state.layout_of(&gpu.id);
        let a = slice_account(&layout);
        report.availability += i64::from(a.free_compute);
        if layout.is_empty() {
            continue;
        }
        report.gpus_used += 1;
        report.compute_wastage += u32::from(a.wasted_compute);
        report.memory_wastage += u32::from(a.wasted_memory);
        used_c += u32::from(a.used_compute);
        used_m += u32::from(a.used_memory);
        total_c += u32::from(gpu.spec.total_compute);
        total_m += u32::from(gpu.spec.total_memory_slices);
    }
    for w in &final_state.pending {
        let s = w.spec();
        report.pending_model_size += u32::from(s.memory_slices);
        report.availability -= i64::from(s.gpu_slices);
    }
    for p in &final_state.placements {
        if let Some(before) = initial.placement_of(&p.workload.id) {
            if before.gpu != p.gpu {
                report.migration_size += u32::from(p.workload.spec().memory_slices);
            }
        }
    }
    if total_c > 0 {
        report.compute_utilization = f64::from(used_c) / f64::from(total_c);
        report.memory_utilization = f64::from(used_m) / f64::from(total_m);
    }
    report
}

/// Per-approach averages and their values relative to the largest absolute
/// average of each metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedTable {
    pub averages: BTreeMap<String, BTreeMap<String, f64>>,
    pub normalized: BTreeMap<String, BTreeMap<String, f64>>,
}

pub fn normalize(reports: &BTreeMap<String, Vec<MetricsReport>>) -> Result<NormalizedTable> {
    let counts: Vec<usize> = reports.values().map(Vec::len).collect();
    if counts.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::MismatchedCaseCounts(counts));
    }
    let mut averages: BTreeMap<&String, [f64; 9]> = BTreeMap::new();
    for (approach, list) in reports {
        let mut sum = [0.0; 9];
        for r in list {
            for (s, v) in sum.iter_mut().zip(r.values()) {
                *s += v;
            }
        }
        if !list.is_empty() {
            for s in &mut sum {
                *s /= list.len() as f64;
            }
        }
        averages.insert(approach, sum);
    }
    let mut scale = [0.0f64; 9];
    for avg in averages.values() {
        for (m, v) in scale.iter_mut().zip(avg) {
            *m = m.max(v.abs());
        }
    }
    let named = |vals: &[f64; 9]| -> BTreeMap<String, f64> {
        METRIC_NAMES.iter().map(|n| n.to_string()).zip(vals.iter().copied()).collect()
    };
    let mut table = NormalizedTable {
        averages: BTreeMap::new(),
        normalized: BTreeMap::new(),
    };
    for (approach, avg) in averages {
        let mut norm = [0.0; 9];
        for i in 0..9 {
            norm[i] = if scale[i] == 0.0 { 0.0 } else { avg[i] / scale[i] };
        }
        table.averages.insert(approach.clone(), named(&avg));
        table.normalized.insert(approach.clone(), named(&norm));
    }
    Ok(table)
}

/// Normalized table as CSV: one row per approach, one column per metric.
pub fn summary_csv(table: &NormalizedTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(std::iter::once("approach").chain(METRIC_NAMES))
        .map_err(csv_error)?;
    for (approach, row) in &table.normalized {
        let values = METRIC_NAMES
            .iter()
            .map(|name| format!("{:.6}", row.get(*name).copied().unwrap_or(0.0)));
        w.write_record(std::iter::once(approach.clone()).chain(values))
            .map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields is UTF-8"))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.into())
}
