use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calculus::VectorField;
use crate::error::{Result, TbmError};
use crate::grid::GridSpec;
use crate::solver::{el_gradient, objective, Weights};
use crate::volume::DensityVolume;

/// Step of the central difference.
pub const FD_EPS: f64 = 1e-5;

/// Largest grid the checker accepts, per axis.
pub const FD_MAX_DIM: usize = 16;

/// Random smooth direction: one sinusoid per component with unit amplitude.
pub fn smooth_direction(grid: &GridSpec, rng: &mut impl Rng) -> VectorField {
    let n = grid.ndim();
    let x = grid.coordinates();
    let comps = (0..n)
        .map(|_| {
            let k: Vec<f64> = (0..n).map(|a| rng.gen_range(0.5..2.0) / grid.extent(a)).collect();
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            (0..grid.len())
                .map(|v| {
                    let arg: f64 = (0..n).map(|a| k[a] * x[a][v]).sum::<f64>();
                    (std::f64::consts::TAU * arg + phase).sin()
                })
                .collect()
        })
        .collect();
    VectorField::new(grid.clone(), comps).expect("component count matches grid")
}

/// Central difference of `objective_fn` along `h` compared with
/// `<gradient, h> dV`; returns `(finite difference, analytic)`.
pub fn directional_check(
    f: &VectorField,
    h: &VectorField,
    objective_fn: &dyn Fn(&VectorField) -> f64,
    gradient: &VectorField,
) -> (f64, f64) {
    let mut fp = f.clone();
    fp.add_scaled(FD_EPS, h);
    let mut fm = f.clone();
    fm.add_scaled(-FD_EPS, h);
    let fd = (objective_fn(&fp) - objective_fn(&fm)) / (2.0 * FD_EPS);
    (fd, gradient.dot(h) * f.grid().voxel_volume())
}

fn relative_error(fd: f64, an: f64) -> f64 {
    let scale = fd.abs().max(an.abs());
    if scale == 0.0 {
        0.0
    } else {
        (fd - an).abs() / scale
    }
}

fn check_size(grid: &GridSpec) -> Result<()> {
    if grid.dims().iter().any(|&d| d > FD_MAX_DIM) {
        return Err(TbmError::TooLarge {
            voxels: grid.len(),
            cap: FD_MAX_DIM.pow(grid.ndim() as u32),
        });
    }
    Ok(())
}

/// Worst relative error over `trials` random smooth directions for an
/// arbitrary objective/gradient pair.
pub fn fd_check_with(
    f: &VectorField,
    trials: usize,
    seed: u64,
    objective_fn: &dyn Fn(&VectorField) -> f64,
    gradient_fn: &dyn Fn(&VectorField) -> VectorField,
) -> Result<f64> {
    check_size(f.grid())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grad = gradient_fn(f);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let h = smooth_direction(f.grid(), &mut rng);
        let (fd, an) = directional_check(f, &h, objective_fn, &grad);
        worst = worst.max(relative_error(fd, an));
    }
    Ok(worst)
}

/// Worst relative error between the Euler-Lagrange gradient and central
/// differences of the penalized objective over `trials` directions.
pub fn fd_objective_check(
    f: &VectorField,
    i0: &DensityVolume,
    i1: &DensityVolume,
    w: Weights,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    f.grid().ensure_matches(i0.grid())?;
    i0.grid().ensure_matches(i1.grid())?;
    fd_check_with(
        f,
        trials,
        seed,
        &|g| objective(g, i0, i1, w).expect("grids checked"),
        &|g| el_gradient(g, i0, i1, w).expect("grids checked"),
    )
}

/// The derivative with respect to one component of one voxel:
/// `(finite difference, analytic)`.
pub fn fd_single_voxel(
    f: &VectorField,
    i0: &DensityVolume,
    i1: &DensityVolume,
    w: Weights,
    voxel: usize,
    component: usize,
) -> Result<(f64, f64)> {
    f.grid().ensure_matches(i0.grid())?;
    check_size(f.grid())?;
    if voxel >= f.grid().len() || component >= f.grid().ndim() {
        return Err(TbmError::InvalidConfig("voxel or component out of range".into()));
    }
    let mut h = VectorField::zeros(f.grid());
    h.components_mut()[component][voxel] = 1.0;
    let grad = el_gradient(f, i0, i1, w)?;
    Ok(directional_check(
        f,
        &h,
        &|g| objective(g, i0, i1, w).expect("grids checked"),
        &grad,
    ))
}
