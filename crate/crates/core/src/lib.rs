//! Transport-based morphometry.
//!
//! A curl-regularized variational optimal mass transport solver for 2D and
//! 3D density grids, the linearized optimal transport (LOT) embedding and its
//! generative inverse, and linear statistics in transport space.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod calculus;
pub mod error;
pub mod grid;
pub mod lot;
pub mod oracles;
pub mod solver;
pub mod stats;
pub mod validate;
pub mod volume;

pub use error::{Result, TbmError};
pub use grid::GridSpec;
pub use volume::DensityVolume;
