//! Independent reference solutions and synthetic cohorts used to validate
//! the solver and the statistics.

mod fd;
mod lp;
mod omt1d;
mod phantom;

pub use fd::{directional_check, fd_check_with, fd_objective_check, fd_single_voxel, smooth_direction, FD_EPS, FD_MAX_DIM};
pub use lp::{kantorovich_lp, transport_lp, DEFAULT_MAX_VOXELS};
pub use omt1d::{omt_1d, Omt1d};
pub use phantom::{
    head_pair, make_phantom_cohort, smooth_pair, HeadParams, Lump, Phantom, PhantomCohort, PhantomFamily, PhantomSpec,
    Subject, MARGIN_VOXELS,
};
