//! Exact depth-first branch-and-bound over workload choices.
//!
//! Workloads are branched largest first. Each node carries the exact
//! objective of the decisions so far (opening costs, migrations and the waste
//! accrued so far, which never shrinks as bins fill up). The bound adds every
//! remaining reward and subtracts the cost of the GPUs that the remaining
//! demand still needs beyond the capacity already paid for.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Score;

use super::instance::{bin_waste, BinKind, Choice, Variables, WpmInstance, FULL_GPU};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    TimeCapped,
    Infeasible,
}

/// Solver outcome attached to plans and reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub status: SolveStatus,
    pub objective: Score,
    pub bound: Score,
    pub gap: Score,
}

#[derive(Clone, Debug)]
pub struct WpmSolution {
    /// `x`, one entry per instance workload.
    pub choices: Vec<Choice>,
    pub variables: Variables,
    pub objective: Score,
    /// Proven upper bound on the optimum.
    pub bound: Score,
    pub gap: Score,
    pub status: SolveStatus,
    pub nodes: u64,
}

impl WpmSolution {
    pub fn summary(&self) -> SolverSummary {
        SolverSummary {
            status: self.status,
            objective: self.objective,
            bound: self.bound,
            gap: self.gap,
        }
    }
}

pub fn solve(instance: &WpmInstance, time_limit: Duration) -> Result<WpmSolution> {
    solve_with_incumbents(instance, time_limit, &[])
}

/// Solves with known feasible points as starting incumbents. Infeasible seeds
/// are ignored.
pub fn solve_with_incumbents(
    instance: &WpmInstance,
    time_limit: Duration,
    seeds: &[Vec<Choice>],
) -> Result<WpmSolution> {
    let n = instance.workloads.len();
    let empty = vec![Choice::Unassigned; n];
    let (mut best, _) = instance.evaluate(&empty)?;
    let mut best_choices = empty;
    for seed in seeds {
        if let Ok((obj, _)) = instance.evaluate(seed) {
            if obj > best {
                best = obj;
                best_choices = seed.clone();
            }
        }
    }

    let mut search = Search::new(instance, best.0, best_choices, Instant::now() + time_limit);
    search.run();

    let timed_out = search.timed_out;
    let choices = search.best_choices;
    let (objective, variables) = instance.evaluate(&choices)?;
    if objective.0 != search.best {
        return Err(Error::ConstraintViolation(format!(
            "search objective {} disagrees with evaluation {}",
            Score(search.best),
            objective
        )));
    }
    let bound = if timed_out {
        Score(search.open_bound.max(objective.0))
    } else {
        objective
    };
    Ok(WpmSolution {
        choices,
        variables,
        objective,
        bound,
        gap: Score(bound.0 - objective.0),
        status: if timed_out { SolveStatus::TimeCapped } else { SolveStatus::Optimal },
        nodes: search.nodes,
    })
}

const UNASSIGNED_RANK: usize = usize::MAX;

fn rank(choice: Choice) -> usize {
    match choice {
        Choice::Stay => 0,
        Choice::Bin(b) => b + 1,
        Choice::Unassigned => UNASSIGNED_RANK,
    }
}

struct Search<'a> {
    inst: &'a WpmInstance,
    order: Vec<usize>,
    /// Whether the workload at this depth is interchangeable with the previous.
    same_as_prev: Vec<bool>,
    suffix_reward: Vec<i64>,
    suffix_c: Vec<i64>,
    suffix_m: Vec<i64>,
    demand: Vec<(u8, u8, bool)>,
    /// Bin of the twin of each host, if any.
    twin_of_host: Vec<Option<usize>>,
    /// Index of the free-GPU symmetry group for free bins.
    free_group: Vec<Option<usize>>,
    gpu_bound: bool,
    q: i64,

    used_c: Vec<u8>,
    used_m: Vec<u8>,
    media: Vec<u8>,
    count: Vec<u32>,
    host_refs: Vec<u32>,
    host_media: Vec<u8>,
    current: Vec<Choice>,
    ranks: Vec<usize>,
    acc: i64,

    best: i64,
    best_choices: Vec<Choice>,
    nodes: u64,
    deadline: Instant,
    timed_out: bool,
    open_bound: i64,
}

impl<'a> Search<'a> {
    fn new(inst: &'a WpmInstance, best: i64, best_choices: Vec<Choice>, deadline: Instant) -> Self {
        let n = inst.workloads.len();
        let key = |w: usize| {
            let wl = &inst.workloads[w];
            (
                wl.profile,
                inst.origins[w],
                inst.reward(w),
                inst.migration_penalty(w),
            )
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| key(a).cmp(&key(b)).then_with(|| inst.workloads[a].id.cmp(&inst.workloads[b].id)));
        let same_as_prev = (0..n).map(|d| d > 0 && key(order[d]) == key(order[d - 1])).collect();

        let demand: Vec<(u8, u8, bool)> = inst
            .workloads
            .iter()
            .map(|w| {
                let s = w.spec();
                (s.compute_slices, s.memory_slices, s.has_media_ext)
            })
            .collect();
        let mut suffix_reward = vec![0i64; n + 1];
        let mut suffix_c = vec![0i64; n + 1];
        let mut suffix_m = vec![0i64; n + 1];
        for d in (0..n).rev() {
            let w = order[d];
            suffix_reward[d] = suffix_reward[d + 1] + inst.reward(w).0;
            suffix_c[d] = suffix_c[d + 1] + i64::from(demand[w].0);
            suffix_m[d] = suffix_m[d + 1] + i64::from(demand[w].1);
        }

        let mut groups: Vec<&str> = Vec::new();
        let free_group = inst
            .bins
            .iter()
            .map(|b| match b.kind {
                BinKind::Free { gpu } => {
                    let model = inst.free_gpus[gpu].spec.model_name.as_str();
                    Some(groups.iter().position(|&g| g == model).unwrap_or_else(|| {
                        groups.push(model);
                        groups.len() - 1
                    }))
                }
                _ => None,
            })
            .collect();

        let q = inst.weights.gpu_cost.0;
        // Dropping a workload to save a GPU must never pay off for the GPU
        // bound to be valid.
        let min_reward = (0..n).map(|w| inst.reward(w).0).min().unwrap_or(i64::MAX);
        let gpu_bound = min_reward >= q;

        let nb = inst.bins.len();
        let host_refs: Vec<u32> = inst.hosts.iter().map(|h| h.pinned.len() as u32).collect();
        let acc = -q * host_refs.iter().filter(|&&r| r > 0).count() as i64;
        Search {
            inst,
            order,
            same_as_prev,
            suffix_reward,
            suffix_c,
            suffix_m,
            demand,
            twin_of_host: inst.hosts.iter().map(|h| h.twin).collect(),
            free_group,
            gpu_bound,
            q,
            used_c: vec![0; nb],
            used_m: vec![0; nb],
            media: vec![0; nb],
            count: vec![0; nb],
            host_refs,
            host_media: inst.hosts.iter().map(|h| h.pinned_media()).collect(),
            current: vec![Choice::Unassigned; n],
            ranks: vec![0; n],
            acc,
            best,
            best_choices,
            nodes: 0,
            deadline,
            timed_out: false,
            open_bound: i64::MIN,
        }
    }

    fn run(&mut self) {
        self.dfs(0);
    }

    fn bound(&self, depth: usize) -> i64 {
        let mut bound = self.acc + self.suffix_reward[depth];
        if !self.gpu_bound {
            return bound;
        }
        let inst = self.inst;
        let mut resid_c = 0i64;
        let mut resid_m = 0i64;
        for (b, bin) in inst.bins.iter().enumerate() {
            let usable = match bin.kind {
                BinKind::Free { .. } | BinKind::Twin { .. } => self.count[b] > 0,
                BinKind::Partition { host, .. } => self.host_refs[host] > 0,
            };
            if usable {
                resid_c += i64::from(bin.compute - self.used_c[b]);
                resid_m += i64::from(bin.memory - self.used_m[b]);
            }
        }
        for &w in &self.order[depth..] {
            if let Some(h) = inst.origins[w] {
                if self.host_refs[h] > 0 {
                    resid_c += i64::from(self.demand[w].0);
                    resid_m += i64::from(self.demand[w].1);
                }
            }
        }
        let need_c = self.suffix_c[depth] - resid_c;
        let need_m = self.suffix_m[depth] - resid_m;
        let extra = [
            ceil_div(need_c, i64::from(FULL_GPU.0)),
            ceil_div(need_m, i64::from(FULL_GPU.1)),
            0,
        ]
        .into_iter()
        .max()
        .unwrap_or(0);
        bound -= self.q * extra;
        bound
    }

    fn dfs(&mut self, depth: usize) {
        self.nodes += 1;
        if self.nodes.is_multiple_of(1024) && Instant::now() >= self.deadline {
            self.timed_out = true;
        }
        if depth == self.order.len() {
            if self.acc > self.best {
                self.best = self.acc;
                self.best_choices = self.current.clone();
            }
            return;
        }
        let bound = self.bound(depth);
        if bound <= self.best {
            return;
        }
        if self.timed_out {
            self.open_bound = self.open_bound.max(bound);
            return;
        }

        let w = self.order[depth];
        let min_rank = if self.same_as_prev[depth] {
            self.ranks[depth - 1]
        } else {
            0
        };
        let mut children = self.children(w, min_rank);
        children.sort_by(|a, b| b.1.cmp(&a.1).then(rank(a.0).cmp(&rank(b.0))));
        let total = children.len();
        for (i, (choice, delta)) in children.into_iter().enumerate() {
            self.apply(w, choice, delta);
            self.ranks[depth] = rank(choice);
            self.dfs(depth + 1);
            self.undo(w, choice, delta);
            if self.timed_out {
                if i + 1 < total {
                    self.open_bound = self.open_bound.max(bound);
                }
                return;
            }
        }
    }

    /// Feasible choices for `w` with their objective change.
    fn children(&self, w: usize, min_rank: usize) -> Vec<(Choice, i64)> {
        let inst = self.inst;
        let (c, m, me) = self.demand[w];
        let reward = inst.reward(w).0;
        let mig = inst.migration_penalty(w).0;
        let origin = inst.origins[w];
        let gamma_w = inst.weights.waste_penalty.0;
        let mut out = Vec::new();

        if let Some(h) = origin {
            let twin_open = self.twin_of_host[h].is_some_and(|t| self.count[t] > 0);
            if rank(Choice::Stay) >= min_rank && !twin_open && (!me || self.host_media[h] == 0) {
                let open_cost = if self.host_refs[h] == 0 { self.q } else { 0 };
                out.push((Choice::Stay, reward - open_cost));
            }
        }

        for (b, bin) in inst.bins.iter().enumerate() {
            if b + 1 < min_rank {
                continue;
            }
            if self.used_c[b] + c > bin.compute || self.used_m[b] + m > bin.memory {
                continue;
            }
            let mut delta = reward;
            match bin.kind {
                BinKind::Free { .. } => {
                    if me && self.media[b] > 0 {
                        continue;
                    }
                    if self.count[b] == 0 {
                        // Identical unused GPUs are interchangeable: only the
                        // first unopened one of each model is tried.
                        if !self.first_unopened(b) {
                            continue;
                        }
                        delta -= self.q;
                    }
                }
                BinKind::Twin { host } => {
                    if self.host_refs[host] > 0 || (me && self.media[b] > 0) {
                        continue;
                    }
                    if self.count[b] == 0 {
                        delta -= self.q + inst.weights.repartition_penalty.0;
                    }
                }
                BinKind::Partition { host, .. } => {
                    let twin_open = self.twin_of_host[host].is_some_and(|t| self.count[t] > 0);
                    if twin_open || (me && self.host_media[host] > 0) {
                        continue;
                    }
                    if self.host_refs[host] == 0 {
                        delta -= self.q;
                    }
                }
            }
            if origin.is_some() && !inst.is_own_twin(w, b) {
                delta -= mig;
            }
            let (u0, v0) = bin_waste(bin, self.used_c[b], self.used_m[b]);
            let (u1, v1) = bin_waste(bin, self.used_c[b] + c, self.used_m[b] + m);
            delta -= gamma_w * (i64::from(u1 + v1) - i64::from(u0 + v0));
            out.push((Choice::Bin(b), delta));
        }

        let unassigned = if origin.is_some() { -mig } else { 0 };
        out.push((Choice::Unassigned, unassigned));
        out
    }

    fn first_unopened(&self, b: usize) -> bool {
        let g = self.free_group[b];
        (0..b).all(|o| self.free_group[o] != g || self.count[o] > 0)
    }

    fn apply(&mut self, w: usize, choice: Choice, delta: i64) {
        let (c, m, me) = self.demand[w];
        match choice {
            Choice::Unassigned => {}
            Choice::Stay => {
                let h = self.inst.origins[w].expect("stay needs an origin");
                self.host_refs[h] += 1;
                self.host_media[h] += u8::from(me);
            }
            Choice::Bin(b) => {
                self.used_c[b] += c;
                self.used_m[b] += m;
                self.count[b] += 1;
                match self.inst.bins[b].kind {
                    BinKind::Partition { host, .. } => {
                        self.host_refs[host] += 1;
                        self.host_media[host] += u8::from(me);
                    }
                    _ => self.media[b] += u8::from(me),
                }
            }
        }
        self.current[w] = choice;
        self.acc += delta;
    }

    fn undo(&mut self, w: usize, choice: Choice, delta: i64) {
        let (c, m, me) = self.demand[w];
        match choice {
            Choice::Unassigned => {}
            Choice::Stay => {
                let h = self.inst.origins[w].expect("stay needs an origin");
                self.host_refs[h] -= 1;
                self.host_media[h] -= u8::from(me);
            }
            Choice::Bin(b) => {
                self.used_c[b] -= c;
                self.used_m[b] -= m;
                self.count[b] -= 1;
                match self.inst.bins[b].kind {
                    BinKind::Partition { host, .. } => {
                        self.host_refs[host] -= 1;
                        self.host_media[host] -= u8::from(me);
                    }
                    _ => self.media[b] -= u8::from(me),
                }
            }
        }
        self.current[w] = Choice::Unassigned;
        self.acc -= delta;
    }
}

fn ceil_div(a: i64, b: i64) -> i64 {
    if a <= 0 {
        0
    } else {
        (a + b - 1) / b
    }
}
