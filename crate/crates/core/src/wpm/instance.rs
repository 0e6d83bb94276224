//! Model construction, solution evaluation and plan conversion.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::feasibility::{self, FreePartition, Occupancy, GPU_SLICES};
use crate::model::{ClusterState, Gpu, IndexedPlacement, PlacementPlan, ProfileId, Score, Workload, WorkloadId};

use super::weights::{default_weights, WpmWeights};

/// A GPU that already holds workloads.
#[derive(Clone, Debug)]
pub struct Host {
    pub gpu: Gpu,
    pub pinned: Vec<IndexedPlacement>,
    /// Indexes into [`WpmInstance::workloads`] of movable workloads here.
    pub movable: Vec<usize>,
    /// Indexes into [`WpmInstance::bins`] of this GPU's free partitions.
    pub partitions: Vec<usize>,
    /// Bin index of the imaginary twin, present when nothing is pinned.
    pub twin: Option<usize>,
    /// Original `(profile, index)` layout including movable workloads.
    pub layout: Vec<(ProfileId, u8)>,
}

impl Host {
    /// A host with pinned workloads counts as used no matter what.
    pub fn forced_open(&self) -> bool {
        !self.pinned.is_empty()
    }

    pub fn pinned_media(&self) -> u8 {
        self.pinned.iter().filter(|p| p.workload.spec().has_media_ext).count() as u8
    }
}

#[derive(Clone, Debug)]
pub enum BinKind {
    /// An unused GPU, by index into [`WpmInstance::free_gpus`].
    Free { gpu: usize },
    /// A free partition of a host.
    Partition { host: usize, partition: FreePartition },
    /// The fully repartitioned form of a host.
    Twin { host: usize },
}

/// A packing bin: a member of the free/imaginary GPU set or a free partition.
#[derive(Clone, Debug)]
pub struct Bin {
    pub kind: BinKind,
    pub compute: u8,
    pub memory: u8,
}

impl Bin {
    pub fn host(&self) -> Option<usize> {
        match self.kind {
            BinKind::Free { .. } => None,
            BinKind::Partition { host, .. } | BinKind::Twin { host } => Some(host),
        }
    }

    pub fn label(&self, instance: &WpmInstance) -> String {
        match &self.kind {
            BinKind::Free { gpu } => format!("free GPU {}", instance.free_gpus[*gpu].id),
            BinKind::Partition { host, partition } => format!(
                "partition at index {} of GPU {}",
                partition.start_index, instance.hosts[*host].gpu.id
            ),
            BinKind::Twin { host } => format!("repartitioned GPU {}", instance.hosts[*host].gpu.id),
        }
    }
}

/// Where one workload ends up in a solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Unassigned,
    /// Keep the current slot on the current GPU.
    Stay,
    Bin(usize),
}

/// Workload placement and migration model over one cluster state.
#[derive(Clone, Debug)]
pub struct WpmInstance {
    /// `W`: movable placed workloads followed by new ones.
    pub workloads: Vec<Workload>,
    /// For each workload, the host it currently sits on (`A`).
    pub origins: Vec<Option<usize>>,
    /// `G'`, ordered by GPU id.
    pub hosts: Vec<Host>,
    /// Unused GPUs, ordered by GPU id.
    pub free_gpus: Vec<Gpu>,
    /// Free GPUs, then partitions by `(gpu id, start index)`, then twins.
    pub bins: Vec<Bin>,
    pub weights: WpmWeights,
    pub initial: ClusterState,
}

/// Builds the model. Pending workloads of `state` are treated as new. With
/// `weights = None` the size-dependent defaults are used.
pub fn build_instance(
    state: &ClusterState,
    new_workloads: &[Workload],
    weights: Option<WpmWeights>,
) -> Result<WpmInstance> {
    let mut initial = state.clone();
    initial.pending.extend(new_workloads.iter().cloned());
    initial.validate()?;

    let mut gpus: Vec<&Gpu> = initial.gpus.iter().collect();
    gpus.sort_by(|a, b| a.id.cmp(&b.id));

    let mut workloads = Vec::new();
    let mut origins = Vec::new();
    let mut hosts = Vec::new();
    let mut free_gpus = Vec::new();
    for gpu in gpus {
        let mut here: Vec<&IndexedPlacement> = initial.placements_on(&gpu.id).collect();
        if here.is_empty() {
            free_gpus.push(gpu.clone());
            continue;
        }
        here.sort_by_key(|p| p.start_index);
        let h = hosts.len();
        let mut host = Host {
            gpu: gpu.clone(),
            pinned: Vec::new(),
            movable: Vec::new(),
            partitions: Vec::new(),
            twin: None,
            layout: here.iter().map(|p| (p.profile(), p.start_index)).collect(),
        };
        for p in here {
            if p.workload.movable {
                host.movable.push(workloads.len());
                workloads.push(p.workload.clone());
                origins.push(Some(h));
            } else {
                host.pinned.push(p.clone());
            }
        }
        hosts.push(host);
    }
    for w in &initial.pending {
        workloads.push(w.clone());
        origins.push(None);
    }

    let mut bins: Vec<Bin> = free_gpus
        .iter()
        .enumerate()
        .map(|(i, g)| Bin {
            kind: BinKind::Free { gpu: i },
            compute: g.spec.total_compute,
            memory: g.spec.total_memory_slices,
        })
        .collect();
    for (h, host) in hosts.iter_mut().enumerate() {
        for partition in feasibility::free_partitions(&host.gpu.id, &host.layout) {
            host.partitions.push(bins.len());
            bins.push(Bin {
                compute: partition.compute_capacity,
                memory: partition.memory_capacity,
                kind: BinKind::Partition { host: h, partition },
            });
        }
    }
    for (h, host) in hosts.iter_mut().enumerate() {
        if host.pinned.is_empty() {
            host.twin = Some(bins.len());
            bins.push(Bin {
                kind: BinKind::Twin { host: h },
                compute: host.gpu.spec.total_compute,
                memory: host.gpu.spec.total_memory_slices,
            });
        }
    }

    let weights = weights.unwrap_or_else(|| default_weights(bins.len(), workloads.len()));
    Ok(WpmInstance {
        workloads,
        origins,
        hosts,
        free_gpus,
        bins,
        weights,
        initial,
    })
}

/// Slack and waste of one bin at a solution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BinVars {
    /// `y` for free and imaginary GPUs, `z` for partitions.
    pub open: bool,
    /// Compute slack.
    pub u: u8,
    /// Memory slack in slices.
    pub v: u8,
    pub wasted_compute: u8,
    pub wasted_memory: u8,
    /// True when compute has slack.
    pub delta: bool,
}

/// Derived decision variables of a solution.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Variables {
    pub bins: Vec<BinVars>,
    /// `y` of each host.
    pub hosts_open: Vec<bool>,
}

impl Variables {
    pub fn gpus_used(&self, instance: &WpmInstance) -> usize {
        let hosts = self.hosts_open.iter().filter(|&&o| o).count();
        let gpus = instance
            .bins
            .iter()
            .zip(&self.bins)
            .filter(|(b, v)| v.open && !matches!(b.kind, BinKind::Partition { .. }))
            .count();
        hosts + gpus
    }
}

/// Waste of a bin holding `(compute, memory)` slices of load.
pub(crate) fn bin_waste(bin: &Bin, used_c: u8, used_m: u8) -> (u8, u8) {
    let u = bin.compute - used_c;
    let v = bin.memory - used_m;
    let wasted_compute = u.saturating_sub(v);
    let wasted_memory = if u == 0 { v } else { 0 };
    (wasted_compute, wasted_memory)
}

impl WpmInstance {
    pub fn reward(&self, w: usize) -> Score {
        self.workloads[w]
            .reward
            .unwrap_or(self.weights.placement_reward)
    }

    pub fn migration_penalty(&self, w: usize) -> Score {
        self.weights.migration_penalty_for(&self.workloads[w].id)
    }

    /// `(w, host)` pairs of current assignments.
    pub fn assignments(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.origins
            .iter()
            .enumerate()
            .filter_map(|(w, o)| o.map(|h| (w, h)))
    }

    /// `(host, twin bin)` pairs.
    pub fn twin_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.hosts
            .iter()
            .enumerate()
            .filter_map(|(h, host)| host.twin.map(|t| (h, t)))
    }

    /// True when moving `w` into `bin` is free of migration cost.
    pub(crate) fn is_own_twin(&self, w: usize, bin: usize) -> bool {
        matches!(self.bins[bin].kind, BinKind::Twin { host } if self.origins[w] == Some(host))
    }

    /// Checks every model constraint and returns the objective together
    /// with the derived variables.
    pub fn evaluate(&self, choices: &[Choice]) -> Result<(Score, Variables)> {
        if choices.len() != self.workloads.len() {
            return Err(Error::ConstraintViolation(format!(
                "{} choices for {} workloads",
                choices.len(),
                self.workloads.len()
            )));
        }
        let nb = self.bins.len();
        let mut used_c = vec![0u8; nb];
        let mut used_m = vec![0u8; nb];
        let mut media = vec![0u8; nb];
        let mut count = vec![0usize; nb];
        let mut host_refs: Vec<usize> = self.hosts.iter().map(|h| h.pinned.len()).collect();
        let mut host_media: Vec<u8> = self.hosts.iter().map(Host::pinned_media).collect();
        let mut objective = 0i64;
        for (w, &choice) in choices.iter().enumerate() {
            let spec = self.workloads[w].spec();
            let migrated = self.origins[w].is_some()
                && match choice {
                    Choice::Stay => false,
                    Choice::Bin(b) => !self.is_own_twin(w, b),
                    Choice::Unassigned => true,
                };
            if migrated {
                objective -= self.migration_penalty(w).0;
            }
            match choice {
                Choice::Unassigned => {}
                Choice::Stay => {
                    let h = self.origins[w].ok_or_else(|| {
                        Error::ConstraintViolation(format!("new workload {} cannot stay", self.workloads[w].id))
                    })?;
                    objective += self.reward(w).0;
                    host_refs[h] += 1;
                    host_media[h] += u8::from(spec.has_media_ext);
                }
                Choice::Bin(b) => {
                    if b >= nb {
                        return Err(Error::ConstraintViolation(format!("bin {b} does not exist")));
                    }
                    objective += self.reward(w).0;
                    used_c[b] += spec.compute_slices;
                    used_m[b] += spec.memory_slices;
                    count[b] += 1;
                    if spec.has_media_ext {
                        match self.bins[b].kind {
                            BinKind::Partition { host, .. } => host_media[host] += 1,
                            _ => media[b] += 1,
                        }
                    }
                    if let BinKind::Partition { host, .. } = self.bins[b].kind {
                        host_refs[host] += 1;
                    }
                }
            }
        }

        let mut vars = Variables {
            bins: Vec::with_capacity(nb),
            hosts_open: host_refs.iter().map(|&r| r > 0).collect(),
        };
        for (b, bin) in self.bins.iter().enumerate() {
            if used_c[b] > bin.compute || used_m[b] > bin.memory {
                return Err(Error::ConstraintViolation(format!(
                    "packing capacity exceeded on {}",
                    bin.label(self)
                )));
            }
            if media[b] > 1 {
                return Err(Error::ConstraintViolation(format!(
                    "more than one media extension on {}",
                    bin.label(self)
                )));
            }
            let open = count[b] > 0;
            let (wasted_compute, wasted_memory) = bin_waste(bin, used_c[b], used_m[b]);
            let u = bin.compute - used_c[b];
            vars.bins.push(BinVars {
                open,
                u,
                v: bin.memory - used_m[b],
                wasted_compute,
                wasted_memory,
                delta: u > 0,
            });
            objective -= self.weights.waste_penalty.0 * i64::from(wasted_compute + wasted_memory);
            match bin.kind {
                BinKind::Free { .. } if open => objective -= self.weights.gpu_cost.0,
                BinKind::Twin { host } if open => {
                    if vars.hosts_open[host] {
                        return Err(Error::ConstraintViolation(format!(
                            "GPU {} used together with its repartitioned twin",
                            self.hosts[host].gpu.id
                        )));
                    }
                    objective -= self.weights.gpu_cost.0 + self.weights.repartition_penalty.0;
                }
                _ => {}
            }
        }
        for (h, host) in self.hosts.iter().enumerate() {
            if host_media[h] > 1 {
                return Err(Error::ConstraintViolation(format!(
                    "more than one media extension on GPU {}",
                    host.gpu.id
                )));
            }
            if vars.hosts_open[h] {
                objective -= self.weights.gpu_cost.0;
            }
        }
        Ok((Score(objective), vars))
    }

    /// Translates an indexed plan over the same state into model choices.
    ///
    /// A host is kept when all its final placements are either unchanged
    /// originals or new arrivals inside one free partition; otherwise the
    /// host is treated as repartitioned through its twin.
    pub fn choices_from_plan(&self, plan: &PlacementPlan) -> Result<Vec<Choice>> {
        let final_state = &plan.final_state;
        let index: BTreeMap<&WorkloadId, usize> = self
            .workloads
            .iter()
            .enumerate()
            .map(|(i, w)| (&w.id, i))
            .collect();
        let free_index: BTreeMap<_, usize> = self
            .free_gpus
            .iter()
            .enumerate()
            .map(|(i, g)| (&g.id, i))
            .collect();
        let mut choices = vec![Choice::Unassigned; self.workloads.len()];

        for host in &self.hosts {
            let here: Vec<&IndexedPlacement> = final_state.placements_on(&host.gpu.id).collect();
            let mut kept = Vec::new();
            let mut keep = true;
            for p in &here {
                let original = self.initial.placement_of(&p.workload.id);
                if original.is_some_and(|o| o.gpu == host.gpu.id && o.start_index == p.start_index) {
                    if index.contains_key(&p.workload.id) {
                        kept.push((p, Choice::Stay));
                    }
                    continue;
                }
                let fp = feasibility::footprint(p.profile(), p.start_index)?.slice_mask();
                let part = host.partitions.iter().copied().find(|&b| match &self.bins[b].kind {
                    BinKind::Partition { partition, .. } => fp & !partition.slice_mask == 0,
                    _ => false,
                });
                match part {
                    Some(b) => kept.push((p, Choice::Bin(b))),
                    None => {
                        keep = false;
                        break;
                    }
                }
            }
            let pinned_kept = host
                .pinned
                .iter()
                .all(|pin| here.iter().any(|p| p.workload.id == pin.workload.id && p.start_index == pin.start_index));
            if !pinned_kept {
                return Err(Error::InvalidInput(format!(
                    "plan moves a pinned workload on GPU {}",
                    host.gpu.id
                )));
            }
            if keep {
                for (p, c) in kept {
                    let w = *index.get(&p.workload.id).ok_or_else(|| unknown(&p.workload.id))?;
                    choices[w] = c;
                }
            } else {
                let twin = host.twin.ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "plan repartitions GPU {} which holds pinned workloads",
                        host.gpu.id
                    ))
                })?;
                for p in here {
                    let w = *index.get(&p.workload.id).ok_or_else(|| unknown(&p.workload.id))?;
                    choices[w] = Choice::Bin(twin);
                }
            }
        }
        for p in &final_state.placements {
            if let Some(&f) = free_index.get(&p.gpu) {
                let w = *index.get(&p.workload.id).ok_or_else(|| unknown(&p.workload.id))?;
                let bin = self
                    .bins
                    .iter()
                    .position(|b| matches!(b.kind, BinKind::Free { gpu } if gpu == f))
                    .expect("every free GPU has a bin");
                choices[w] = Choice::Bin(bin);
            }
        }
        Ok(choices)
    }
}

fn unknown(id: &WorkloadId) -> Error {
    Error::InvalidInput(format!("plan places unknown workload {id}"))
}

/// Occupancy of a host's original layout without resource totals, used as
/// the base when laying out partition contents.
pub(crate) fn host_slice_base(host: &Host) -> Occupancy {
    let full = Occupancy::from_layout(&host.layout);
    Occupancy {
        mask: full.mask,
        ..Occupancy::default()
    }
}

/// Compute and memory capacity of a full GPU, used by bounds.
pub(crate) const FULL_GPU: (u8, u8) = (GPU_SLICES, GPU_SLICES + 1);
