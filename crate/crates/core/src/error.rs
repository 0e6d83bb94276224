use thiserror::Error;

use crate::feasibility::LayoutViolation;
use crate::model::{GpuId, ProfileId, WorkloadId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown MIG profile {0}")]
    UnknownProfile(u8),

    #[error("profile {profile} cannot start at slice index {index}")]
    InfeasibleIndex { profile: ProfileId, index: u8 },

    #[error("cache size inputs must be positive")]
    NonPositiveInput,

    #[error("cache size overflows a 64-bit byte count")]
    Overflow,

    #[error("unknown GPU model {0:?}")]
    UnknownGpuModel(String),

    #[error("unknown GPU {0}")]
    UnknownGpu(GpuId),

    #[error("workload {0} appears more than once")]
    DuplicateWorkload(WorkloadId),

    #[error("GPU {0} appears more than once")]
    DuplicateGpu(GpuId),

    #[error("invalid layout on GPU {gpu}: {violation}")]
    InvalidLayout {
        gpu: GpuId,
        violation: LayoutViolation,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A bin assignment that satisfies the packing constraints could not be
    /// turned into slice indexes. This would falsify the permutation property
    /// the optimizer relies on, so it is never swallowed.
    #[error("no index layout exists for the profiles assigned to {bin}")]
    LayoutFailure { bin: String },

    #[error("solution violates model constraint {0}")]
    ConstraintViolation(String),

    #[error("normalization needs equal case counts, got {0:?}")]
    MismatchedCaseCounts(Vec<usize>),

    #[error("unsupported format version {0}")]
    UnsupportedFormat(u32),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownProfile(_) => "unknown_profile",
            Error::InfeasibleIndex { .. } => "infeasible_index",
            Error::NonPositiveInput => "non_positive_input",
            Error::Overflow => "overflow",
            Error::UnknownGpuModel(_) => "unknown_gpu_model",
            Error::UnknownGpu(_) => "unknown_gpu",
            Error::DuplicateWorkload(_) => "duplicate_workload",
            Error::DuplicateGpu(_) => "duplicate_gpu",
            Error::InvalidLayout { .. } => "invalid_layout",
            Error::InvalidInput(_) => "invalid_input",
            Error::LayoutFailure { .. } => "layout_failure",
            Error::ConstraintViolation(_) => "constraint_violation",
            Error::MismatchedCaseCounts(_) => "mismatched_case_counts",
            Error::UnsupportedFormat(_) => "unsupported_format",
            Error::Json(_) => "json",
            Error::Io(_) => "io",
        }
    }

    /// True for errors that indicate a broken internal invariant rather than
    /// bad user input.
    pub fn is_internal(&self) -> bool {
        matches!(
            self,
            Error::LayoutFailure { .. } | Error::ConstraintViolation(_)
        )
    }
}
