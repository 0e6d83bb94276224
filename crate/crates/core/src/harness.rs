//! Seeded test-case generation and batch experiments.
//!
//! Randomness comes from xoshiro256++ seeded through SplitMix64
//! (`Xoshiro256PlusPlus::seed_from_u64`). Two derived draws are used:
//!
//! - `index(n) = floor(((next_u64 >> 11) * 2^-53) * n)`, uniform in `0..n`;
//! - `unit() = 1 - (next_u64 >> 11) * 2^-53`, uniform in `(0, 1]`.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::Occupancy;
use crate::heuristics::{self, Baseline};
use crate::metrics::{self, MetricsReport, NormalizedTable};
use crate::model::{ClusterState, GpuSpec, PlacementPlan, ProfileId, Workload};
use crate::wpm::{self, SolveStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UseCase {
    Initial,
    Compaction,
    Reconfiguration,
}

impl std::str::FromStr for UseCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "initial" => Ok(UseCase::Initial),
            "compaction" => Ok(UseCase::Compaction),
            "reconfiguration" => Ok(UseCase::Reconfiguration),
            other => Err(Error::InvalidInput(format!("unknown use case {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestCase {
    pub seed: u64,
    pub use_case: UseCase,
    pub cluster: ClusterState,
    /// Only non-empty for initial deployment.
    pub new_workloads: Vec<Workload>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// Profiles drawn uniformly for existing and new workloads.
    pub profiles: Vec<ProfileId>,
    /// Share of GPUs that start with workloads.
    pub allocated_fraction: f64,
    /// New-workload memory as a share of cluster memory slices.
    pub new_memory_fraction: f64,
    pub gpu: GpuSpec,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            profiles: [5, 9, 14, 15, 19].into_iter().map(ProfileId).collect(),
            allocated_fraction: 0.6,
            new_memory_fraction: 0.6,
            gpu: GpuSpec::a100_80gb(),
        }
    }
}

struct Draws(Xoshiro256PlusPlus);

impl Draws {
    fn fraction(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn index(&mut self, n: usize) -> usize {
        ((self.fraction() * n as f64) as usize).min(n - 1)
    }

    fn unit(&mut self) -> f64 {
        1.0 - self.fraction()
    }
}

pub fn generate_case(n_gpus: usize, seed: u64, use_case: UseCase) -> Result<TestCase> {
    generate_case_with(&GeneratorConfig::default(), n_gpus, seed, use_case)
}

/// Builds one random case.
///
/// `ceil(allocated_fraction * n)` GPUs are picked by a partial Fisher-Yates
/// shuffle. Each gets a target joint utilization from `unit()` and is filled,
/// in GPU order, with profiles drawn among those that still fit, at their
/// preferred index; filling stops before the first draw that would push the
/// GPU past its target (the first workload is always placed). Initial
/// deployment cases then draw new workloads until their memory reaches
/// `new_memory_fraction` of the cluster's memory slices.
pub fn generate_case_with(config: &GeneratorConfig, n_gpus: usize, seed: u64, use_case: UseCase) -> Result<TestCase> {
    if n_gpus == 0 {
        return Err(Error::InvalidInput("a test case needs at least one GPU".into()));
    }
    if config.profiles.is_empty() {
        return Err(Error::InvalidInput("no profiles to sample from".into()));
    }
    for &p in &config.profiles {
        crate::model::profile_lookup(p)?;
    }
    let mut rng = Draws(Xoshiro256PlusPlus::seed_from_u64(seed));
    let width = (n_gpus - 1).to_string().len().max(2);
    let ids: Vec<String> = (0..n_gpus).map(|i| format!("gpu-{i:0width$}")).collect();
    let mut cluster = ClusterState::with_gpus(ids.iter().cloned(), &config.gpu);

    let allocated = ((config.allocated_fraction * n_gpus as f64).ceil() as usize).min(n_gpus);
    let mut order: Vec<usize> = (0..n_gpus).collect();
    for i in 0..allocated {
        let j = i + rng.index(n_gpus - i);
        order.swap(i, j);
    }
    let mut chosen: Vec<usize> = order[..allocated].to_vec();
    chosen.sort_unstable();

    let mut counter = 0usize;
    let mut next_id = || {
        counter += 1;
        format!("w{counter:04}")
    };
    let joint = config.gpu.joint_slices();
    for g in chosen {
        let target = rng.unit();
        let mut occ = Occupancy::default();
        let mut placed = 0;
        loop {
            let fitting: Vec<ProfileId> = config
                .profiles
                .iter()
                .copied()
                .filter(|p| occ.preferred_index(p.spec()).is_some())
                .collect();
            if fitting.is_empty() {
                break;
            }
            let p = fitting[rng.index(fitting.len())];
            let s = p.spec();
            let after = u32::from(occ.compute + s.compute_slices) + u32::from(occ.memory + s.memory_slices);
            if placed > 0 && f64::from(after) / f64::from(joint) > target {
                break;
            }
            let k = occ.preferred_index(s).expect("filtered to fitting profiles");
            occ.place(s, k);
            cluster.place(&ids[g], Workload::new(next_id(), p.0), k);
            placed += 1;
        }
    }

    let mut new_workloads = Vec::new();
    if use_case == UseCase::Initial {
        let budget = config.new_memory_fraction * (n_gpus as f64) * f64::from(config.gpu.total_memory_slices);
        let mut memory = 0u32;
        while f64::from(memory) < budget {
            let p = config.profiles[rng.index(config.profiles.len())];
            memory += u32::from(p.spec().memory_slices);
            new_workloads.push(Workload::new(next_id(), p.0));
        }
    }
    cluster.canonicalize();
    Ok(TestCase {
        seed,
        use_case,
        cluster,
        new_workloads,
    })
}

/// `count` cases with seeds `base_seed, base_seed + 1, ...`.
pub fn generate_cases(n_gpus: usize, base_seed: u64, use_case: UseCase, count: usize) -> Result<Vec<TestCase>> {
    (0..count as u64)
        .map(|i| generate_case(n_gpus, base_seed.wrapping_add(i), use_case))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Approach {
    FirstFit,
    LoadBalanced,
    RuleBased,
    Mip,
    JointMip,
}

impl Approach {
    pub const ALL: [Approach; 5] = [
        Approach::FirstFit,
        Approach::LoadBalanced,
        Approach::RuleBased,
        Approach::Mip,
        Approach::JointMip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Approach::FirstFit => "first-fit",
            Approach::LoadBalanced => "load-balanced",
            Approach::RuleBased => "rule-based",
            Approach::Mip => "mip",
            Approach::JointMip => "joint-mip",
        }
    }
}

impl std::str::FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Approach::ALL
            .into_iter()
            .find(|a| a.name() == s || (s == "rule" && *a == Approach::RuleBased))
            .ok_or_else(|| Error::InvalidInput(format!("unknown approach {s:?}")))
    }
}

/// Runs one approach on one case. Optimizer runs are seeded with the
/// matching rule-based plans.
pub fn run_approach(case: &TestCase, approach: Approach, time_limit: Duration) -> Result<PlacementPlan> {
    let state = &case.cluster;
    let new = &case.new_workloads;
    let plan = match (case.use_case, approach) {
        (UseCase::Initial, Approach::FirstFit) => heuristics::first_fit(state, new),
        (UseCase::Initial, Approach::LoadBalanced) => heuristics::load_balanced(state, new),
        (UseCase::Initial, Approach::RuleBased) => heuristics::place_initial(state, new),
        (UseCase::Initial, Approach::Mip) => {
            let seed = heuristics::place_initial(state, new);
            let pinned = wpm::pin_existing(state);
            restore_movability(state, wpm::optimize(&pinned, new, time_limit, &[seed])?)
        }
        (UseCase::Initial, Approach::JointMip) => {
            let seed = heuristics::place_initial(state, new);
            wpm::optimize(state, new, time_limit, &[seed])?
        }
        (UseCase::Compaction, Approach::FirstFit) => heuristics::baseline_compact(state, Baseline::FirstFit),
        (UseCase::Compaction, Approach::LoadBalanced) => heuristics::baseline_compact(state, Baseline::LoadBalanced),
        (UseCase::Compaction, Approach::RuleBased) => heuristics::compact(state, state.free_gpus().len()),
        (UseCase::Reconfiguration, Approach::FirstFit) => heuristics::baseline_reconfigure(state, Baseline::FirstFit),
        (UseCase::Reconfiguration, Approach::LoadBalanced) => {
            heuristics::baseline_reconfigure(state, Baseline::LoadBalanced)
        }
        (UseCase::Reconfiguration, Approach::RuleBased) => heuristics::reconfigure(state),
        (UseCase::Compaction | UseCase::Reconfiguration, Approach::Mip | Approach::JointMip) => {
            let seeds = [
                heuristics::compact(state, state.free_gpus().len()),
                heuristics::reconfigure(state),
            ];
            wpm::optimize(state, new, time_limit, &seeds)?
        }
    };
    plan.final_state
        .validate()
        .map_err(|e| Error::ConstraintViolation(format!("{} produced an invalid state: {e}", approach.name())))?;
    Ok(plan)
}

/// Puts back the movability flags that were cleared to pin workloads.
fn restore_movability(original: &ClusterState, mut plan: PlacementPlan) -> PlacementPlan {
    for p in &mut plan.final_state.placements {
        if let Some(o) = original.placement_of(&p.workload.id) {
            p.workload.movable = o.workload.movable;
        }
    }
    plan
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_index: usize,
    pub seed: u64,
    pub approach: Approach,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver_status: Option<SolveStatus>,
    pub wall_time_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub use_case: UseCase,
    pub time_limit_s: f64,
    pub results: Vec<CaseResult>,
    /// Cases left out of the summary because some approach failed on them.
    pub excluded_cases: Vec<usize>,
    pub summary: NormalizedTable,
}

/// Number of worker threads from `MIGPACK_THREADS`, if set.
pub fn thread_limit() -> Option<usize> {
    std::env::var("MIGPACK_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n| n > 0)
}

/// Runs every approach on every case, in parallel across cases, and
/// summarizes the metrics.
pub fn run_experiment(cases: &[TestCase], approaches: &[Approach], time_limit: Duration) -> Result<ExperimentReport> {
    let use_case = cases.first().map(|c| c.use_case).unwrap_or(UseCase::Initial);
    if cases.iter().any(|c| c.use_case != use_case) {
        return Err(Error::InvalidInput("all cases of an experiment must share a use case".into()));
    }
    if approaches.is_empty() {
        return Err(Error::InvalidInput("no approaches given".into()));
    }
    let work = || -> Vec<Vec<CaseResult>> {
        cases
            .par_iter()
            .enumerate()
            .map(|(i, case)| approaches.iter().map(|&a| run_one(i, case, a, time_limit)).collect())
            .collect()
    };
    let per_case = match thread_limit() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot start worker threads: {e}")))?
            .install(work),
        None => work(),
    };
    let results: Vec<CaseResult> = per_case.into_iter().flatten().collect();

    let excluded: BTreeSet<usize> = results
        .iter()
        .filter(|r| r.metrics.is_none())
        .map(|r| r.case_index)
        .collect();
    let mut grouped: BTreeMap<String, Vec<MetricsReport>> = BTreeMap::new();
    for r in &results {
        if excluded.contains(&r.case_index) {
            continue;
        }
        if let Some(m) = &r.metrics {
            grouped.entry(r.approach.name().to_string()).or_default().push(m.clone());
        }
    }
    for a in approaches {
        grouped.entry(a.name().to_string()).or_default();
    }
    Ok(ExperimentReport {
        use_case,
        time_limit_s: time_limit.as_secs_f64(),
        results,
        excluded_cases: excluded.into_iter().collect(),
        summary: metrics::normalize(&grouped)?,
    })
}

fn run_one(case_index: usize, case: &TestCase, approach: Approach, time_limit: Duration) -> CaseResult {
    let start = Instant::now();
    let outcome = run_approach(case, approach, time_limit);
    let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut initial = case.cluster.clone();
    initial.pending.extend(case.new_workloads.iter().cloned());
    match outcome {
        Ok(plan) => CaseResult {
            case_index,
            seed: case.seed,
            approach,
            solver_status: plan.solver.map(|s| s.status),
            wall_time_ms,
            metrics: Some(metrics::evaluate(&initial, &plan)),
            error: None,
        },
        Err(e) => CaseResult {
            case_index,
            seed: case.seed,
            approach,
            solver_status: None,
            wall_time_ms,
            metrics: None,
            error: Some(e.to_string()),
        },
    }
}
