//! Regular voxel grids.
//!
//! Values live at voxel centers: the world coordinate of voxel `i` along an
//! axis is `(i + 0.5) * spacing`. Storage is row-major, the last axis varies
//! fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TbmError};

/// Smallest allowed extent along any axis; the one-sided second-order
/// stencils need three samples plus one interior point.
pub const MIN_DIM: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dims: Vec<usize>,
    spacing: Vec<f64>,
}

impl GridSpec {
    pub fn new(dims: &[usize], spacing: &[f64]) -> Result<Self> {
        if dims.len() != 2 && dims.len() != 3 {
            return Err(TbmError::InvalidGrid(format!(
                "expected 2 or 3 axes, got {}",
                dims.len()
            )));
        }
        if spacing.len() != dims.len() {
            return Err(TbmError::InvalidGrid(format!(
                "{} dims but {} spacings",
                dims.len(),
                spacing.len()
            )));
        }
        if let Some(d) = dims.iter().find(|&&d| d < MIN_DIM) {
            return Err(TbmError::InvalidGrid(format!(
                "axis of length {d} is below the minimum {MIN_DIM}"
            )));
        }
        if spacing.iter().any(|&h| !(h.is_finite() && h > 0.0)) {
            return Err(TbmError::InvalidGrid(format!(
                "spacing must be strictly positive, got {spacing:?}"
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            spacing: spacing.to_vec(),
        })
    }

    /// Grid with unit spacing on every axis.
    pub fn unit(dims: &[usize]) -> Result<Self> {
        Self::new(dims, &vec![1.0; dims.len()])
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Total voxel count.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Row-major strides (in elements) for each axis.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.ndim()];
        for a in (0..self.ndim().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * self.dims[a + 1];
        }
        strides
    }

    /// Physical length of the domain along `axis`.
    pub fn extent(&self, axis: usize) -> f64 {
        self.dims[axis] as f64 * self.spacing[axis]
    }

    /// World coordinate of voxel index `i` along `axis`.
    #[inline]
    pub fn center(&self, axis: usize, i: usize) -> f64 {
        (i as f64 + 0.5) * self.spacing[axis]
    }

    /// Multi-index of a flat voxel offset.
    pub fn unravel(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        for a in (0..self.ndim()).rev() {
            idx[a] = flat % self.dims[a];
            flat /= self.dims[a];
        }
        idx
    }

    /// World coordinates of every voxel center, one vector per axis.
    pub fn coordinates(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let strides = self.strides();
        (0..self.ndim())
            .map(|a| {
                (0..n)
                    .map(|flat| self.center(a, (flat / strides[a]) % self.dims[a]))
                    .collect()
            })
            .collect()
    }

    /// Grid with the given voxel counts covering the same physical extent.
    pub fn resized(&self, new_dims: &[usize]) -> Result<Self> {
        if new_dims.len() != self.ndim() {
            return Err(TbmError::InvalidGrid(format!(
                "cannot resize a {}-axis grid to {} axes",
                self.ndim(),
                new_dims.len()
            )));
        }
        let spacing: Vec<f64> = (0..self.ndim())
            .map(|a| self.extent(a) / new_dims[a] as f64)
            .collect();
        Self::new(new_dims, &spacing)
    }

    /// Factor-two coarsening, or `None` when any axis would drop below
    /// [`MIN_DIM`].
    pub fn coarsened(&self) -> Option<Self> {
        let dims: Vec<usize> = self.dims.iter().map(|&d| d / 2).collect();
        if dims.iter().any(|&d| d < MIN_DIM) {
            return None;
        }
        self.resized(&dims).ok()
    }

    /// Same voxel counts and spacing up to a relative tolerance.
    pub fn matches(&self, other: &GridSpec) -> bool {
        self.dims == other.dims
            && self
                .spacing
                .iter()
                .zip(&other.spacing)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()))
    }

    /// `GridMismatch` unless the grids agree in shape and spacing.
    pub fn ensure_matches(&self, other: &GridSpec) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(TbmError::GridMismatch(format!(
                "{:?}/{:?} vs {:?}/{:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }
}
