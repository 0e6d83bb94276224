//! Domain vocabulary: MIG profiles, GPUs, workloads, cluster states and plans.
//!
//! Memory is accounted in slice units everywhere; gigabytes only show up in
//! [`GpuSpec`] for display and in profile names.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::feasibility;

/// Nvidia MIG profile identifier (e.g. 9 for `3g.40gb`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProfileId(pub u8);

impl ProfileId {
    pub fn spec(self) -> &'static ProfileSpec {
        // Ids are only constructed through validated paths in practice, but the
        // newtype is public, so fall back to a loud panic with the id.
        profile_lookup(self).unwrap_or_else(|_| panic!("profile {} is not in the catalog", self.0))
    }
}

impl fmt::Display for ProfileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One row of the A100/H100-class profile catalog.
#[derive(Debug, PartialEq, Eq)]
pub struct ProfileSpec {
    pub profile_id: ProfileId,
    pub name: &'static str,
    pub compute_slices: u8,
    pub memory_slices: u8,
    /// Number of GPU slices the profile is listed with (its nominal width).
    pub gpu_slices: u8,
    /// Allowed start indexes, most preferred first.
    pub allowed_indexes: &'static [u8],
    pub has_media_ext: bool,
}

impl ProfileSpec {
    pub fn id(&self) -> ProfileId {
        self.profile_id
    }

    /// Position of `index` in the preference list, if allowed.
    pub fn preference_rank(&self, index: u8) -> Option<usize> {
        self.allowed_indexes.iter().position(|&k| k == index)
    }
}

/// The seven partition profiles, ordered by id (which is also largest first).
pub static CATALOG: [ProfileSpec; 7] = [
    ProfileSpec {
        profile_id: ProfileId(0),
        name: "7g.80gb",
        compute_slices: 7,
        memory_slices: 8,
        gpu_slices: 7,
        allowed_indexes: &[0],
        has_media_ext: false,
    },
    ProfileSpec {
        profile_id: ProfileId(5),
        name: "4g.40gb",
        compute_slices: 4,
        memory_slices: 4,
        gpu_slices: 4,
        allowed_indexes: &[0],
        has_media_ext: false,
    },
    ProfileSpec {
        profile_id: ProfileId(9),
        name: "3g.40gb",
        compute_slices: 3,
        memory_slices: 4,
        gpu_slices: 4,
        allowed_indexes: &[4, 0],
        has_media_ext: false,
    },
    ProfileSpec {
        profile_id: ProfileId(14),
        name: "2g.20gb",
        compute_slices: 2,
        memory_slices: 2,
        gpu_slices: 2,
        allowed_indexes: &[4, 0, 2],
        has_media_ext: false,
    },
    ProfileSpec {
        profile_id: ProfileId(15),
        name: "1g.20gb",
        compute_slices: 1,
        memory_slices: 2,
        gpu_slices: 2,
        allowed_indexes: &[6, 4, 0, 2],
        has_media_ext: false,
    },
    ProfileSpec {
        profile_id: ProfileId(19),
        name: "1g.10gb",
        compute_slices: 1,
        memory_slices: 1,
        gpu_slices: 1,
        allowed_indexes: &[6, 4, 5, 0, 1, 2, 3],
        has_media_ext: false,
    },
    ProfileSpec {
        profile_id: ProfileId(20),
        name: "1g.10gb+me",
        compute_slices: 1,
        memory_slices: 1,
        gpu_slices: 1,
        allowed_indexes: &[6, 4, 5, 0, 1, 2, 3],
        has_media_ext: true,
    },
];

pub fn profile_lookup(id: ProfileId) -> Result<&'static ProfileSpec> {
    CATALOG
        .iter()
        .find(|p| p.profile_id == id)
        .ok_or(Error::UnknownProfile(id.0))
}

/// Static description of one GPU model in MIG mode.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GpuSpec {
    pub model_name: String,
    pub total_compute: u8,
    pub total_memory_slices: u8,
    pub memory_slice_gb: u32,
    pub total_memory_gb: u32,
}

pub const A100_80GB: &str = "A100-80GB";
pub const H100_80GB: &str = "H100-80GB";

impl GpuSpec {
    pub fn a100_80gb() -> Self {
        Self::seven_slice(A100_80GB, 10)
    }

    fn seven_slice(name: &str, slice_gb: u32) -> Self {
        GpuSpec {
            model_name: name.to_string(),
            total_compute: 7,
            total_memory_slices: 8,
            memory_slice_gb: slice_gb,
            total_memory_gb: 8 * slice_gb,
        }
    }

    /// Looks a GPU model up by name. Only 7-slice models are supported.
    pub fn from_model(name: &str) -> Result<Self> {
        match name {
            A100_80GB => Ok(Self::a100_80gb()),
            H100_80GB => Ok(Self::seven_slice(H100_80GB, 10)),
            other => Err(Error::UnknownGpuModel(other.to_string())),
        }
    }

    /// `S_c + S_m`, the denominator of joint slice utilization.
    pub fn joint_slices(&self) -> u32 {
        u32::from(self.total_compute) + u32::from(self.total_memory_slices)
    }
}

/// Objective weight in fixed point (hundredths of a point), so that sums of
/// weights compare exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Score(pub i64);

impl Score {
    pub const SCALE: i64 = 100;
    pub const ZERO: Score = Score(0);

    pub fn from_points(points: i64) -> Self {
        Score(points * Self::SCALE)
    }

    /// Rounds to the nearest hundredth.
    pub fn from_f64(value: f64) -> Self {
        Score((value * Self::SCALE as f64).round() as i64)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        if !v.is_finite() {
            return Err(serde::de::Error::custom("score must be a finite number"));
        }
        Ok(Score::from_f64(v))
    }
}

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                $name(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }
    };
}

string_id!(GpuId);
string_id!(WorkloadId);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub id: WorkloadId,
    pub profile: ProfileId,
    pub movable: bool,
    /// Per-workload placement reward; `None` uses the model default.
    pub reward: Option<Score>,
}

impl Workload {
    pub fn new(id: impl Into<String>, profile: u8) -> Self {
        Workload {
            id: WorkloadId::new(id),
            profile: ProfileId(profile),
            movable: true,
            reward: None,
        }
    }

    pub fn pinned(mut self) -> Self {
        self.movable = false;
        self
    }

    pub fn spec(&self) -> &'static ProfileSpec {
        self.profile.spec()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexedPlacement {
    pub gpu: GpuId,
    pub workload: Workload,
    pub start_index: u8,
}

impl IndexedPlacement {
    pub fn profile(&self) -> ProfileId {
        self.workload.profile
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gpu {
    pub id: GpuId,
    pub spec: GpuSpec,
}

/// Exact ratio `used / total` that orders by value without floating point.
#[derive(Clone, Copy, Debug)]
pub struct Utilization {
    pub used: u32,
    pub total: u32,
}

impl Utilization {
    pub fn value(self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            f64::from(self.used) / f64::from(self.total)
        }
    }
}

impl PartialEq for Utilization {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Utilization {}

impl PartialOrd for Utilization {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Utilization {
    fn cmp(&self, other: &Self) -> Ordering {
        (u64::from(self.used) * u64::from(other.total.max(1)))
            .cmp(&(u64::from(other.used) * u64::from(self.total.max(1))))
    }
}

/// GPUs with their indexed placements plus workloads waiting for a home.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClusterState {
    pub gpus: Vec<Gpu>,
    pub placements: Vec<IndexedPlacement>,
    pub pending: Vec<Workload>,
}

impl ClusterState {
    pub fn with_gpus<I, S>(ids: I, spec: &GpuSpec) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ClusterState {
            gpus: ids
                .into_iter()
                .map(|id| Gpu {
                    id: GpuId::new(id),
                    spec: spec.clone(),
                })
                .collect(),
            placements: Vec::new(),
            pending: Vec::new(),
        }
    }

    /// Adds a placement without validating it; call [`ClusterState::validate`]
    /// afterwards.
    pub fn place(&mut self, gpu: &str, workload: Workload, start_index: u8) -> &mut Self {
        self.placements.push(IndexedPlacement {
            gpu: GpuId::new(gpu),
            workload,
            start_index,
        });
        self
    }

    pub fn gpu(&self, id: &GpuId) -> Option<&Gpu> {
        self.gpus.iter().find(|g| &g.id == id)
    }

    pub fn placements_on<'a>(&'a self, gpu: &'a GpuId) -> impl Iterator<Item = &'a IndexedPlacement> + 'a {
        self.placements.iter().filter(move |p| &p.gpu == gpu)
    }

    pub fn placement_of(&self, workload: &WorkloadId) -> Option<&IndexedPlacement> {
        self.placements.iter().find(|p| &p.workload.id == workload)
    }

    pub fn is_used(&self, gpu: &GpuId) -> bool {
        self.placements.iter().any(|p| &p.gpu == gpu)
    }

    pub fn used_gpus(&self) -> BTreeSet<GpuId> {
        self.placements.iter().map(|p| p.gpu.clone()).collect()
    }

    pub fn free_gpus(&self) -> Vec<&Gpu> {
        let used = self.used_gpus();
        self.gpus.iter().filter(|g| !used.contains(&g.id)).collect()
    }

    pub fn utilization(&self, gpu: &Gpu) -> Utilization {
        joint_slice_utilization(self.placements_on(&gpu.id).map(|p| p.profile()), &gpu.spec)
    }

    /// `(profile, start_index)` pairs on one GPU, sorted by start index.
    pub fn layout_of(&self, gpu: &GpuId) -> Vec<(ProfileId, u8)> {
        let mut v: Vec<_> = self
            .placements_on(gpu)
            .map(|p| (p.profile(), p.start_index))
            .collect();
        v.sort_by_key(|&(p, k)| (k, p));
        v
    }

    /// All workloads in the state: placed ones first, then pending.
    pub fn workloads(&self) -> impl Iterator<Item = &Workload> {
        self.placements.iter().map(|p| &p.workload).chain(self.pending.iter())
    }

    /// Orders placements by GPU position, then start index.
    pub fn canonicalize(&mut self) {
        let position: BTreeMap<GpuId, usize> = self
            .gpus
            .iter()
            .enumerate()
            .map(|(i, g)| (g.id.clone(), i))
            .collect();
        self.placements
            .sort_by_key(|p| (position.get(&p.gpu).copied().unwrap_or(usize::MAX), p.start_index));
    }

    /// Checks ids, profile references and per-GPU layouts.
    pub fn validate(&self) -> Result<()> {
        let mut gpu_ids = BTreeSet::new();
        for g in &self.gpus {
            if !gpu_ids.insert(&g.id) {
                return Err(Error::DuplicateGpu(g.id.clone()));
            }
            if g.spec.total_compute != 7 || g.spec.total_memory_slices != 8 {
                return Err(Error::UnknownGpuModel(g.spec.model_name.clone()));
            }
        }
        let mut workload_ids = BTreeSet::new();
        for w in self.workloads() {
            profile_lookup(w.profile)?;
            if !workload_ids.insert(&w.id) {
                return Err(Error::DuplicateWorkload(w.id.clone()));
            }
        }
        let mut per_gpu: BTreeMap<&GpuId, Vec<(ProfileId, u8)>> = BTreeMap::new();
        for p in &self.placements {
            if !gpu_ids.contains(&p.gpu) {
                return Err(Error::UnknownGpu(p.gpu.clone()));
            }
            per_gpu.entry(&p.gpu).or_default().push((p.profile(), p.start_index));
        }
        for (gpu, layout) in per_gpu {
            feasibility::validate_layout(&layout).map_err(|violation| Error::InvalidLayout {
                gpu: gpu.clone(),
                violation,
            })?;
        }
        Ok(())
    }
}

/// One workload move (or first placement when `from_gpu` is `None`).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Migration {
    pub workload_id: WorkloadId,
    pub from_gpu: Option<GpuId>,
    pub to_gpu: GpuId,
    pub to_index: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlacementPlan {
    pub final_state: ClusterState,
    pub migrations: Vec<Migration>,
    pub repartitioned_gpus: BTreeSet<GpuId>,
    pub pending: Vec<WorkloadId>,
    /// Present when the plan came from the optimizer.
    pub solver: Option<crate::wpm::SolverSummary>,
}

impl PlacementPlan {
    /// Derives migrations and pending ids by diffing `final_state` against the
    /// initial state. Workloads absent from `initial` migrate from nowhere.
    pub fn from_states(
        initial: &ClusterState,
        final_state: ClusterState,
        repartitioned_gpus: BTreeSet<GpuId>,
    ) -> Self {
        let mut migrations = Vec::new();
        for p in &final_state.placements {
            let before = initial.placement_of(&p.workload.id);
            let unchanged = before.is_some_and(|b| b.gpu == p.gpu && b.start_index == p.start_index);
            if !unchanged {
                migrations.push(Migration {
                    workload_id: p.workload.id.clone(),
                    from_gpu: before.map(|b| b.gpu.clone()),
                    to_gpu: p.gpu.clone(),
                    to_index: p.start_index,
                });
            }
        }
        migrations.sort();
        let pending = final_state.pending.iter().map(|w| w.id.clone()).collect();
        PlacementPlan {
            final_state,
            migrations,
            repartitioned_gpus,
            pending,
            solver: None,
        }
    }

    /// The plan that changes nothing.
    pub fn identity(initial: &ClusterState) -> Self {
        Self::from_states(initial, initial.clone(), BTreeSet::new())
    }

    pub fn gpus_used(&self) -> usize {
        self.final_state.used_gpus().len()
    }
}

/// Per-token KV-cache size in bytes: `2 * layers * dimension * precision`.
pub fn cache_size(num_layers: u64, dimension: u64, precision: u64) -> Result<u64> {
    if num_layers == 0 || dimension == 0 || precision == 0 {
        return Err(Error::NonPositiveInput);
    }
    2u64.checked_mul(num_layers)
        .and_then(|v| v.checked_mul(dimension))
        .and_then(|v| v.checked_mul(precision))
        .ok_or(Error::Overflow)
}

/// Lower bound on GPUs needed for a workload set, taking the ceiling of the
/// compute and memory-slice ratios.
pub fn min_gpus<'a>(workloads: impl IntoIterator<Item = &'a Workload>, gpu: &GpuSpec) -> usize {
    let (c, m) = workloads.into_iter().fold((0u32, 0u32), |(c, m), w| {
        let s = w.spec();
        (c + u32::from(s.compute_slices), m + u32::from(s.memory_slices))
    });
    let by_compute = c.div_ceil(u32::from(gpu.total_compute));
    let by_memory = m.div_ceil(u32::from(gpu.total_memory_slices));
    by_compute.max(by_memory) as usize
}

/// `(s_m + s_c) / (S_m + S_c)` for the profiles placed on one GPU.
pub fn joint_slice_utilization(profiles: impl IntoIterator<Item = ProfileId>, gpu: &GpuSpec) -> Utilization {
    let used = profiles
        .into_iter()
        .map(|p| {
            let s = p.spec();
            u32::from(s.compute_slices) + u32::from(s.memory_slices)
        })
        .sum();
    Utilization {
        used,
        total: gpu.joint_slices(),
    }
}
