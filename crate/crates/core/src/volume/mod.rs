//! Scalar density volumes, intensity normalization and resampling.

mod io;
mod nifti;

pub use io::{read_embedding, read_volume, write_embedding, write_volume, VolumeHeader, MAGIC};
pub use nifti::read_nifti1;

use crate::error::{Result, TbmError};
use crate::grid::GridSpec;

/// Default normalization target: every subject carries this total mass.
pub const DEFAULT_TARGET_MASS: f64 = 1e6;
/// Default additive floor applied after scaling to the target mass.
pub const DEFAULT_FLOOR: f64 = 0.1;

/// A nonnegative scalar field sampled at voxel centers.
///
/// Values are densities: the mass carried by a voxel is `value * voxel_volume`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityVolume {
    grid: GridSpec,
    values: Vec<f64>,
}

impl DensityVolume {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(TbmError::InvalidVolume(format!(
                "{} values for a grid of {} voxels",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(TbmError::NonFiniteInput(i));
        }
        if let Some(i) = values.iter().position(|&v| v < 0.0) {
            return Err(TbmError::InvalidVolume(format!(
                "negative value {} at voxel {i}",
                values[i]
            )));
        }
        Ok(Self { grid, values })
    }

    /// Volume whose value at each voxel center is `f(coords)`.
    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let coords = grid.coordinates();
        let mut x = vec![0.0; grid.ndim()];
        let values = (0..grid.len())
            .map(|i| {
                for (a, c) in coords.iter().enumerate() {
                    x[a] = c[i];
                }
                f(&x)
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Sum of `value * voxel_volume`.
    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.voxel_volume()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Same field rescaled to carry `mass` in total.
    pub fn with_mass(&self, mass: f64) -> Result<Self> {
        let current = self.total_mass();
        if current <= 0.0 {
            return Err(TbmError::AllZeroVolume);
        }
        let s = mass / current;
        Ok(Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
        })
    }

    /// Mass-weighted mean position along each axis.
    pub fn centroid(&self) -> Vec<f64> {
        let coords = self.grid.coordinates();
        let total: f64 = self.values.iter().sum();
        coords
            .iter()
            .map(|c| c.iter().zip(&self.values).map(|(x, v)| x * v).sum::<f64>() / total)
            .collect()
    }

    /// Relative L2 distance `|self - other| / |other|`.
    pub fn relative_l2(&self, other: &DensityVolume) -> f64 {
        let num: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let den: f64 = other.values.iter().map(|b| b * b).sum();
        (num / den).sqrt()
    }
}

/// Scale to `target_mass`, add `floor` to every voxel, then rescale to
/// `target_mass` again. The result is strictly positive whenever `floor > 0`.
pub fn normalize_density(v: &DensityVolume, target_mass: f64, floor: f64) -> Result<DensityVolume> {
    if !(floor >= 0.0 && floor.is_finite()) {
        return Err(TbmError::InvalidVolume(format!("floor must be >= 0, got {floor}")));
    }
    if !(target_mass > 0.0 && target_mass.is_finite()) {
        return Err(TbmError::InvalidVolume(format!(
            "target mass must be > 0, got {target_mass}"
        )));
    }
    if let Some(i) = v.values.iter().position(|x| !x.is_finite()) {
        return Err(TbmError::NonFiniteInput(i));
    }
    let scaled = v.with_mass(target_mass)?;
    let floored = DensityVolume {
        grid: scaled.grid,
        values: scaled.values.into_iter().map(|x| x + floor).collect(),
    };
    floored.with_mass(target_mass)
}

/// Smallest value [`normalize_density`] can produce for a grid, i.e. the
/// value of a voxel that was zero in the input.
pub fn floor_density(grid: &GridSpec, target_mass: f64, floor: f64) -> f64 {
    floor * target_mass / (target_mass + floor * grid.len() as f64 * grid.voxel_volume())
}

/// Multilinear resampling onto a grid with `new_dims` voxels covering the
/// same extent, renormalized to the source's total mass.
pub fn resample(v: &DensityVolume, new_dims: &[usize]) -> Result<DensityVolume> {
    let target = v.grid.resized(new_dims)?;
    let coords = target.coordinates();
    let src = &v.grid;
    let strides = src.strides();
    let nd = src.ndim();
    let mut values = Vec::with_capacity(target.len());
    let mut lo = [0usize; 3];
    let mut t = [0.0f64; 3];
    for i in 0..target.len() {
        for a in 0..nd {
            let u = (coords[a][i] / src.spacing()[a] - 0.5).clamp(0.0, (src.dims()[a] - 1) as f64);
            let l = (u.floor() as usize).min(src.dims()[a] - 2);
            lo[a] = l;
            t[a] = u - l as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << nd) {
            let mut w = 1.0;
            let mut off = 0;
            for a in 0..nd {
                let bit = (corner >> a) & 1;
                w *= if bit == 1 { t[a] } else { 1.0 - t[a] };
                off += (lo[a] + bit) * strides[a];
            }
            acc += w * v.values[off];
        }
        values.push(acc);
    }
    let out = DensityVolume::new(target, values)?;
    let mass = v.total_mass();
    if mass > 0.0 {
        out.with_mass(mass)
    } else {
        Ok(out)
    }
}
