//! JSON file formats for cluster states, workload lists, plans and test
//! cases.
//!
//! Every file carries `format_version`. Writers emit placements grouped by
//! GPU and sorted by start index, so parsing and re-serializing a file
//! written here reproduces it byte for byte. Partitions without a workload
//! describe idle MIG instances and are dropped on load.

use std::collections::BTreeSet;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{TestCase, UseCase};
use crate::model::{
    profile_lookup, ClusterState, Gpu, GpuId, GpuSpec, IndexedPlacement, Migration, PlacementPlan, ProfileId, Score,
    Workload, WorkloadId,
};
use crate::wpm::SolverSummary;

pub const FORMAT_VERSION: u32 = 1;

fn default_movable() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionEntry {
    pub profile_id: u8,
    pub start_index: u8,
    pub workload_id: Option<String>,
    #[serde(default = "default_movable")]
    pub movable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<Score>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuEntry {
    pub id: String,
    pub model: String,
    #[serde(default)]
    pub partitions: Vec<PartitionEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadEntry {
    pub id: String,
    pub profile_id: u8,
    #[serde(default = "default_movable", skip_serializing_if = "is_true")]
    pub movable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<Score>,
}

/// Cluster state without the version field, as embedded in other files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateBody {
    pub gpus: Vec<GpuEntry>,
    #[serde(default)]
    pub pending: Vec<WorkloadEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateFile {
    pub format_version: u32,
    #[serde(flatten)]
    pub state: StateBody,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadsFile {
    pub format_version: u32,
    pub workloads: Vec<WorkloadEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub format_version: u32,
    pub final_state: StateBody,
    pub migrations: Vec<Migration>,
    pub repartitioned_gpus: Vec<GpuId>,
    pub pending: Vec<WorkloadId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestCaseFile {
    pub format_version: u32,
    pub seed: u64,
    pub use_case: UseCase,
    pub cluster: StateBody,
    #[serde(default)]
    pub new_workloads: Vec<WorkloadEntry>,
}

fn workload_entry(w: &Workload) -> WorkloadEntry {
    WorkloadEntry {
        id: w.id.as_str().to_string(),
        profile_id: w.profile.0,
        movable: w.movable,
        reward: w.reward,
    }
}

fn workload_from_entry(e: &WorkloadEntry) -> Result<Workload> {
    profile_lookup(ProfileId(e.profile_id))?;
    if e.reward.is_some_and(|r| r < Score::ZERO) {
        return Err(Error::InvalidInput(format!("reward of {} must not be negative", e.id)));
    }
    Ok(Workload {
        id: WorkloadId::new(e.id.clone()),
        profile: ProfileId(e.profile_id),
        movable: e.movable,
        reward: e.reward,
    })
}

pub fn state_body(state: &ClusterState) -> StateBody {
    let gpus = state
        .gpus
        .iter()
        .map(|g| {
            let mut placed: Vec<&IndexedPlacement> = state.placements_on(&g.id).collect();
            placed.sort_by_key(|p| p.start_index);
            GpuEntry {
                id: g.id.as_str().to_string(),
                model: g.spec.model_name.clone(),
                partitions: placed
                    .into_iter()
                    .map(|p| PartitionEntry {
                        profile_id: p.workload.profile.0,
                        start_index: p.start_index,
                        workload_id: Some(p.workload.id.as_str().to_string()),
                        movable: p.workload.movable,
                        reward: p.workload.reward,
                    })
                    .collect(),
            }
        })
        .collect();
    StateBody {
        gpus,
        pending: state.pending.iter().map(workload_entry).collect(),
    }
}

/// Converts and validates a parsed state.
pub fn state_from_body(body: &StateBody) -> Result<ClusterState> {
    let mut state = ClusterState::default();
    for g in &body.gpus {
        let id = GpuId::new(g.id.clone());
        state.gpus.push(Gpu {
            id: id.clone(),
            spec: GpuSpec::from_model(&g.model)?,
        });
        for p in &g.partitions {
            let Some(workload_id) = &p.workload_id else {
                continue;
            };
            let workload = workload_from_entry(&WorkloadEntry {
                id: workload_id.clone(),
                profile_id: p.profile_id,
                movable: p.movable,
                reward: p.reward,
            })?;
            state.placements.push(IndexedPlacement {
                gpu: id.clone(),
                workload,
                start_index: p.start_index,
            });
        }
    }
    state.pending = body.pending.iter().map(workload_from_entry).collect::<Result<_>>()?;
    state.validate()?;
    state.canonicalize();
    Ok(state)
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let found = value.get("format_version").and_then(serde_json::Value::as_u64);
    match found {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        Some(v) => return Err(Error::UnsupportedFormat(u32::try_from(v).unwrap_or(u32::MAX))),
        None => return Err(Error::InvalidInput("missing format_version".into())),
    }
    Ok(serde_json::from_value(value)?)
}

pub fn state_to_json(state: &ClusterState) -> Result<String> {
    to_json(&StateFile {
        format_version: FORMAT_VERSION,
        state: state_body(state),
    })
}

pub fn state_from_json(text: &str) -> Result<ClusterState> {
    let file: StateFile = parse(text)?;
    state_from_body(&file.state)
}

pub fn workloads_to_json(workloads: &[Workload]) -> Result<String> {
    to_json(&WorkloadsFile {
        format_version: FORMAT_VERSION,
        workloads: workloads.iter().map(workload_entry).collect(),
    })
}

pub fn workloads_from_json(text: &str) -> Result<Vec<Workload>> {
    let file: WorkloadsFile = parse(text)?;
    let workloads: Vec<Workload> = file.workloads.iter().map(workload_from_entry).collect::<Result<_>>()?;
    let mut seen = BTreeSet::new();
    for w in &workloads {
        if !seen.insert(&w.id) {
            return Err(Error::DuplicateWorkload(w.id.clone()));
        }
    }
    Ok(workloads)
}

pub fn plan_to_json(plan: &PlacementPlan) -> Result<String> {
    to_json(&PlanFile {
        format_version: FORMAT_VERSION,
        final_state: state_body(&plan.final_state),
        migrations: plan.migrations.clone(),
        repartitioned_gpus: plan.repartitioned_gpus.iter().cloned().collect(),
        pending: plan.pending.clone(),
        solver: plan.solver,
    })
}

/// Parses a plan and checks that its final state validates and that its
/// pending list matches the final state.
pub fn plan_from_json(text: &str) -> Result<PlacementPlan> {
    let file: PlanFile = parse(text)?;
    let final_state = state_from_body(&file.final_state)?;
    let listed: BTreeSet<&WorkloadId> = file.pending.iter().collect();
    let actual: BTreeSet<&WorkloadId> = final_state.pending.iter().map(|w| &w.id).collect();
    if listed != actual {
        return Err(Error::InvalidInput(
            "plan pending list does not match the final state".into(),
        ));
    }
    for m in &file.migrations {
        let placed = final_state
            .placement_of(&m.workload_id)
            .is_some_and(|p| p.gpu == m.to_gpu && p.start_index == m.to_index);
        if !placed {
            return Err(Error::InvalidInput(format!(
                "migration of {} does not match the final state",
                m.workload_id
            )));
        }
    }
    for g in &file.repartitioned_gpus {
        if final_state.gpu(g).is_none() {
            return Err(Error::UnknownGpu(g.clone()));
        }
    }
    Ok(PlacementPlan {
        final_state,
        migrations: file.migrations,
        repartitioned_gpus: file.repartitioned_gpus.into_iter().collect(),
        pending: file.pending,
        solver: file.solver,
    })
}

pub fn test_case_to_json(case: &TestCase) -> Result<String> {
    to_json(&TestCaseFile {
        format_version: FORMAT_VERSION,
        seed: case.seed,
        use_case: case.use_case,
        cluster: state_body(&case.cluster),
        new_workloads: case.new_workloads.iter().map(workload_entry).collect(),
    })
}

pub fn test_case_from_json(text: &str) -> Result<TestCase> {
    let file: TestCaseFile = parse(text)?;
    let cluster = state_from_body(&file.cluster)?;
    let new_workloads: Vec<Workload> = file.new_workloads.iter().map(workload_from_entry).collect::<Result<_>>()?;
    let mut seen: BTreeSet<&WorkloadId> = cluster.workloads().map(|w| &w.id).collect();
    for w in &new_workloads {
        if !seen.insert(&w.id) {
            return Err(Error::DuplicateWorkload(w.id.clone()));
        }
    }
    Ok(TestCase {
        seed: file.seed,
        use_case: file.use_case,
        cluster,
        new_workloads,
    })
}
