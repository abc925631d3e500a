use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TbmError>;

#[derive(Debug, Error)]
pub enum TbmError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("volume sums to zero")]
    AllZeroVolume,
    #[error("non-finite value at voxel {0}")]
    NonFiniteInput(usize),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic tag")]
    BadMagic,
    #[error("file truncated: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("not a single-file NIfTI-1 volume")]
    NotNifti1,
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("dimensionality out of range: {0}")]
    DimensionalityOutOfRange(String),

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("map is not diffeomorphic (min det {0:e})")]
    NonDiffeomorphicMap(f64),

    #[error("cohort is empty")]
    EmptyCohort,
    #[error("requested rank {requested} exceeds maximum {max}")]
    RankTooLarge { requested: usize, max: usize },
    #[error("covariate is constant")]
    ConstantCovariate,
    #[error("within-class scatter is singular and alpha is zero")]
    SingularPenalty,
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("invalid cohort: {0}")]
    InvalidCohort(String),

    #[error("masses differ: {0:e} vs {1:e}")]
    MassMismatch(f64, f64),
    #[error("problem too large: {voxels} voxels exceeds cap {cap}")]
    TooLarge { voxels: usize, cap: usize },
    #[error("linear program infeasible: {0}")]
    Infeasible(String),
}
