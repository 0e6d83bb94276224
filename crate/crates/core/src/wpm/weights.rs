use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{Score, WorkloadId};

/// Objective weights. The defaults encode a strict priority: placing a
/// workload beats everything else, saving a GPU beats all penalties combined.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WpmWeights {
    pub placement_reward: Score,
    pub gpu_cost: Score,
    pub repartition_penalty: Score,
    pub migration_penalty: Score,
    pub waste_penalty: Score,
    /// Per-workload migration penalties that replace `migration_penalty`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub migration_overrides: BTreeMap<WorkloadId, Score>,
}

/// Largest compute plus memory slice count of one bin.
const MAX_BIN_WASTE: i64 = 15;

impl Default for WpmWeights {
    fn default() -> Self {
        WpmWeights {
            placement_reward: Score::from_points(1_000_000),
            gpu_cost: Score::from_points(1_000),
            repartition_penalty: Score::from_points(10),
            migration_penalty: Score::from_points(1),
            waste_penalty: Score::from_f64(0.05),
            migration_overrides: BTreeMap::new(),
        }
    }
}

impl WpmWeights {
    pub fn migration_penalty_for(&self, w: &WorkloadId) -> Score {
        self.migration_overrides
            .get(w)
            .copied()
            .unwrap_or(self.migration_penalty)
    }

    /// Whether the priority chain holds for an instance with `bins` packing
    /// bins and `workloads` workloads.
    pub fn dominance_holds(&self, bins: usize, workloads: usize) -> bool {
        let (bins, workloads) = (bins as i64, workloads as i64);
        let penalties = workloads * self.migration_penalty.0
            + bins * self.repartition_penalty.0
            + bins * self.waste_penalty.0 * MAX_BIN_WASTE;
        self.gpu_cost.0 > penalties && self.placement_reward.0 > bins * self.gpu_cost.0 + penalties
    }
}

/// Default weights for an instance size. When the chain fails, reward and GPU
/// cost are scaled up by powers of ten, which keeps every weight an exact
/// multiple of the fixed-point unit.
pub fn default_weights(bins: usize, workloads: usize) -> WpmWeights {
    let mut w = WpmWeights::default();
    while !w.dominance_holds(bins, workloads) {
        w.gpu_cost.0 *= 10;
        w.placement_reward.0 *= 10;
    }
    w
}
