//! Synthetic phantoms and seeded cohorts with known structure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TbmError};
use crate::grid::GridSpec;
use crate::volume::{normalize_density, DensityVolume, DEFAULT_FLOOR, DEFAULT_TARGET_MASS};

/// Low-mass margin kept at every face, in voxels.
pub const MARGIN_VOXELS: f64 = 4.0;

/// Gaussian lump inside a head phantom. Positions are fractions of the
/// extent along each axis, `sigma` a fraction of the smallest extent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lump {
    pub center: Vec<f64>,
    pub sigma: f64,
    pub amplitude: f64,
}

/// Elliptical tissue body with a central low-intensity cavity, the stand-in
/// for a brain slice with its ventricles. Geometry is given as fractions of
/// the grid extent so the same phantom renders at any resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub center: Vec<f64>,
    /// Outer semi-axes.
    pub radii: Vec<f64>,
    /// Cavity semi-axes relative to the outer ones.
    pub cavity: f64,
    /// Cavity intensity relative to tissue.
    pub cavity_level: f64,
    /// Width of the soft edges, in voxels.
    pub edge: f64,
    pub lumps: Vec<Lump>,
}

impl HeadParams {
    /// The aging family's body with cavity fraction interpolated by `t`.
    pub fn aging(ndim: usize, t: f64) -> Self {
        Self {
            center: vec![0.5; ndim],
            radii: (0..ndim).map(|a| if a == 0 { 0.34 } else { 0.3 }).collect(),
            cavity: 0.25 + 0.3 * t,
            cavity_level: 0.15,
            edge: 3.0,
            lumps: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Phantom {
    /// Isotropic Gaussian bump; center and sigma in world units.
    Bump { center: Vec<f64>, sigma: f64 },
    Head(HeadParams),
    /// Sum of Gaussian lumps in grid fractions.
    Mixture { lumps: Vec<Lump> },
}

fn soft_inside(rho: f64, scale: f64, edge: f64) -> f64 {
    // rho is the normalized elliptic radius; scale converts (rho - 1) to voxels.
    0.5 * (1.0 - (((rho - 1.0) * scale) / edge).tanh())
}

impl Phantom {
    pub fn generator(&self) -> &'static str {
        match self {
            Phantom::Bump { .. } => "bump",
            Phantom::Head(_) => "head",
            Phantom::Mixture { .. } => "mixture",
        }
    }

    /// Unnormalized intensity.
    pub fn raw(&self, grid: &GridSpec) -> Result<DensityVolume> {
        let n = grid.ndim();
        match self {
            Phantom::Bump { center, sigma } => {
                if center.len() != n || !(*sigma > 0.0) {
                    return Err(TbmError::InvalidVolume("bump parameters do not match the grid".into()));
                }
                DensityVolume::from_fn(grid.clone(), |x| {
                    let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                    (-r2 / (2.0 * sigma * sigma)).exp()
                })
            }
            Phantom::Head(p) => {
                if p.center.len() != n || p.radii.len() != n || p.lumps.iter().any(|l| l.center.len() != n) {
                    return Err(TbmError::InvalidVolume("head parameters do not match the grid".into()));
                }
                let ext: Vec<f64> = (0..n).map(|a| grid.extent(a)).collect();
                let c: Vec<f64> = (0..n).map(|a| p.center[a] * ext[a]).collect();
                let r: Vec<f64> = (0..n).map(|a| p.radii[a] * ext[a]).collect();
                let h = grid.min_spacing();
                let rmin = r.iter().copied().fold(f64::INFINITY, f64::min);
                let emin = ext.iter().copied().fold(f64::INFINITY, f64::min);
                DensityVolume::from_fn(grid.clone(), |x| {
                    let rho = (0..n).map(|a| ((x[a] - c[a]) / r[a]).powi(2)).sum::<f64>().sqrt();
                    let body = soft_inside(rho, rmin / h, p.edge);
                    let hole = soft_inside(rho / p.cavity, p.cavity * rmin / h, p.edge);
                    let mut v = body * (1.0 - (1.0 - p.cavity_level) * hole);
                    for l in &p.lumps {
                        let s = l.sigma * emin;
                        let r2: f64 = (0..n).map(|a| (x[a] - l.center[a] * ext[a]).powi(2)).sum();
                        v += l.amplitude * (-r2 / (2.0 * s * s)).exp();
                    }
                    v.max(0.0)
                })
            }
            Phantom::Mixture { lumps } => {
                if lumps.is_empty() || lumps.iter().any(|l| l.center.len() != n || !(l.sigma > 0.0)) {
                    return Err(TbmError::InvalidVolume("mixture parameters do not match the grid".into()));
                }
                let ext: Vec<f64> = (0..n).map(|a| grid.extent(a)).collect();
                let emin = ext.iter().copied().fold(f64::INFINITY, f64::min);
                DensityVolume::from_fn(grid.clone(), |x| {
                    let mut v = 0.0;
                    for l in lumps {
                        let s = l.sigma * emin;
                        let r2: f64 = (0..n).map(|a| (x[a] - l.center[a] * ext[a]).powi(2)).sum();
                        v += l.amplitude * (-r2 / (2.0 * s * s)).exp();
                    }
                    v.max(0.0)
                })
            }
        }
    }

    /// Intensity normalized to the standard mass with the standard floor.
    pub fn render(&self, grid: &GridSpec) -> Result<DensityVolume> {
        normalize_density(&self.raw(grid)?, DEFAULT_TARGET_MASS, DEFAULT_FLOOR)
    }
}

/// Cohort families. Shifts, jitters and separations are in voxels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhantomFamily {
    /// Bump moved along the first axis by `step * k`, k = 0..count, centered
    /// on the grid; covariate is the shift.
    Translation { sigma: f64, step: f64 },
    /// Head whose cavity grows with atrophy `t ~ U(0, 1)`; covariate is
    /// `t + N(0, noise^2)`. Each subject also gets a small random lump.
    Aging { noise: f64 },
    /// Bumps shifted by `-separation/2` (label 0) or `+separation/2`
    /// (label 1) along the first axis, with uniform positional jitter.
    TwoClass { sigma: f64, separation: f64, jitter: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub family: PhantomFamily,
    pub dims: Vec<usize>,
    pub count: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Subject {
    pub id: String,
    pub phantom: Phantom,
    pub volume: DensityVolume,
    pub covariate: f64,
    pub label: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct PhantomCohort {
    pub grid: GridSpec,
    pub subjects: Vec<Subject>,
}

impl PhantomCohort {
    pub fn volumes(&self) -> Vec<DensityVolume> {
        self.subjects.iter().map(|s| s.volume.clone()).collect()
    }

    pub fn covariates(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.covariate).collect()
    }

    pub fn labels(&self) -> Option<Vec<usize>> {
        self.subjects.iter().map(|s| s.label).collect()
    }
}

fn check_margin(grid: &GridSpec, center: &[f64], reach: f64) -> Result<()> {
    for (a, c) in center.iter().enumerate() {
        let m = MARGIN_VOXELS * grid.spacing()[a];
        if c - reach < m || c + reach > grid.extent(a) - m {
            return Err(TbmError::InvalidConfig(format!(
                "phantom reaches within {MARGIN_VOXELS} voxels of the boundary on axis {a}"
            )));
        }
    }
    Ok(())
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw per call keeps the stream layout simple.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Generates a deterministic cohort: the same spec always yields bit-identical
/// volumes.
pub fn make_phantom_cohort(spec: &PhantomSpec) -> Result<PhantomCohort> {
    let grid = GridSpec::unit(&spec.dims)?;
    if spec.count == 0 {
        return Err(TbmError::InvalidConfig("phantom cohort needs at least one subject".into()));
    }
    let n = grid.ndim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mid: Vec<f64> = (0..n).map(|a| 0.5 * grid.extent(a)).collect();
    let mut subjects = Vec::with_capacity(spec.count);
    for k in 0..spec.count {
        let (phantom, covariate, label) = match &spec.family {
            PhantomFamily::Translation { sigma, step } => {
                let shift = step * (k as f64 - 0.5 * (spec.count - 1) as f64);
                let mut center = mid.clone();
                center[0] += shift;
                check_margin(&grid, &center, 3.0 * sigma)?;
                (Phantom::Bump { center, sigma: *sigma }, shift, None)
            }
            PhantomFamily::Aging { noise } => {
                let t: f64 = rng.gen();
                let mut head = HeadParams::aging(n, t);
                let lump_center: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3..0.7)).collect();
                head.lumps.push(Lump {
                    center: lump_center,
                    sigma: 0.04,
                    amplitude: rng.gen_range(0.1..0.3),
                });
                let v = t + noise * standard_normal(&mut rng);
                (Phantom::Head(head), v, None)
            }
            PhantomFamily::TwoClass { sigma, separation, jitter } => {
                let label = k % 2;
                let sign = if label == 0 { -1.0 } else { 1.0 };
                let mut center = mid.clone();
                center[0] += sign * 0.5 * separation;
                for c in center.iter_mut() {
                    *c += rng.gen_range(-jitter..=*jitter);
                }
                let s = sigma * rng.gen_range(0.9..1.1);
                check_margin(&grid, &center, 3.0 * s)?;
                (Phantom::Bump { center, sigma: s }, label as f64, Some(label))
            }
        };
        let volume = phantom.render(&grid)?;
        subjects.push(Subject {
            id: format!("s{k:03}"),
            phantom,
            volume,
            covariate,
            label,
        });
    }
    Ok(PhantomCohort { grid, subjects })
}

/// Smooth template/subject pair of head phantoms differing by random changes
/// of position, shape, cavity size and internal lumps. `strength` scales the
/// differences; at 1 the body moves by up to a voxel.
pub fn head_pair(grid: &GridSpec, strength: f64, seed: u64) -> Result<(DensityVolume, DensityVolume)> {
    let n = grid.ndim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base = HeadParams::aging(n, rng.gen_range(0.2..0.5));
    for _ in 0..2 {
        base.lumps.push(Lump {
            center: (0..n).map(|_| rng.gen_range(0.35..0.65)).collect(),
            sigma: rng.gen_range(0.04..0.07),
            amplitude: rng.gen_range(0.2..0.4),
        });
    }
    let mut other = base.clone();
    let emin = (0..n).map(|a| grid.extent(a)).fold(f64::INFINITY, f64::min);
    let vox = grid.min_spacing() / emin;
    for c in other.center.iter_mut() {
        *c += strength * rng.gen_range(-1.0..1.0) * vox;
    }
    for r in other.radii.iter_mut() {
        *r *= 1.0 + strength * rng.gen_range(-0.03..0.03);
    }
    other.cavity *= 1.0 + strength * rng.gen_range(-0.1..0.1);
    for l in other.lumps.iter_mut() {
        for c in l.center.iter_mut() {
            *c += strength * rng.gen_range(-1.5..1.5) * vox;
        }
        l.amplitude *= 1.0 + strength * rng.gen_range(-0.15..0.15);
    }
    Ok((Phantom::Head(base).render(grid)?, Phantom::Head(other).render(grid)?))
}

/// Two Gaussian mixtures with three lumps each; the second moves every lump
/// by up to `strength` voxels per axis and rescales widths and amplitudes.
pub fn smooth_pair(grid: &GridSpec, strength: f64, seed: u64) -> Result<(DensityVolume, DensityVolume)> {
    let n = grid.ndim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emin = (0..n).map(|a| grid.extent(a)).fold(f64::INFINITY, f64::min);
    let vox = grid.min_spacing() / emin;
    let base: Vec<Lump> = (0..3)
        .map(|_| Lump {
            center: (0..n).map(|_| rng.gen_range(0.35..0.65)).collect(),
            sigma: rng.gen_range(0.08..0.12),
            amplitude: rng.gen_range(0.5..1.0),
        })
        .collect();
    let other: Vec<Lump> = base
        .iter()
        .map(|l| Lump {
            center: l.center.iter().map(|c| c + strength * rng.gen_range(-1.0..1.0) * vox).collect(),
            sigma: l.sigma * (1.0 + rng.gen_range(-0.1..0.1)),
            amplitude: l.amplitude * (1.0 + rng.gen_range(-0.2..0.2)),
        })
        .collect();
    Ok((Phantom::Mixture { lumps: base }.render(grid)?, Phantom::Mixture { lumps: other }.render(grid)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cavity_area(v: &DensityVolume) -> usize {
        // Voxels near the center darker than half the rim level.
        let g = v.grid();
        let mid: Vec<f64> = (0..g.ndim()).map(|a| 0.5 * g.extent(a)).collect();
        let rim = v.max_value();
        let x = g.coordinates();
        (0..g.len())
            .filter(|&i| {
                let r2: f64 = (0..g.ndim()).map(|a| (x[a][i] - mid[a]).powi(2)).sum();
                r2 < (0.3 * g.extent(1)).powi(2) && v.values()[i] < 0.5 * rim
            })
            .count()
    }

    #[test]
    fn cohorts_are_deterministic() {
        let spec = PhantomSpec {
            family: PhantomFamily::Aging { noise: 0.05 },
            dims: vec![32, 32],
            count: 4,
            seed: 9,
        };
        let a = make_phantom_cohort(&spec).unwrap();
        let b = make_phantom_cohort(&spec).unwrap();
        for (x, y) in a.subjects.iter().zip(&b.subjects) {
            assert_eq!(x.volume, y.volume);
            assert_eq!(x.covariate.to_bits(), y.covariate.to_bits());
        }
        let c = make_phantom_cohort(&PhantomSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.subjects[0].volume, c.subjects[0].volume);
    }

    #[test]
    fn aging_cavity_grows_and_rim_loses_mass() {
        let g = GridSpec::unit(&[64, 64]).unwrap();
        let young = Phantom::Head(HeadParams::aging(2, 0.0)).render(&g).unwrap();
        let old = Phantom::Head(HeadParams::aging(2, 1.0)).render(&g).unwrap();
        assert!(cavity_area(&old) > cavity_area(&young));
        let rim_mass = |v: &DensityVolume| -> f64 {
            let m = v.max_value();
            v.values().iter().filter(|&&x| x >= 0.5 * m).sum()
        };
        assert!(rim_mass(&old) < rim_mass(&young));
        assert!((young.total_mass() - DEFAULT_TARGET_MASS).abs() < 1e-6);
    }

    #[test]
    fn two_class_means_differ() {
        let spec = PhantomSpec {
            family: PhantomFamily::TwoClass { sigma: 4.0, separation: 6.0, jitter: 1.0 },
            dims: vec![48, 48],
            count: 10,
            seed: 1,
        };
        let c = make_phantom_cohort(&spec).unwrap();
        let labels = c.labels().unwrap();
        let mean_x = |l: usize| -> f64 {
            let xs: Vec<f64> = c
                .subjects
                .iter()
                .zip(&labels)
                .filter(|(_, &k)| k == l)
                .map(|(s, _)| s.volume.centroid()[0])
                .collect();
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        let d = mean_x(1) - mean_x(0);
        assert!(d > 4.0 && d < 8.0, "{d}");
    }

    #[test]
    fn translation_family_is_evenly_spaced() {
        let spec = PhantomSpec {
            family: PhantomFamily::Translation { sigma: 3.0, step: 1.0 },
            dims: vec![40, 32],
            count: 5,
            seed: 0,
        };
        let c = make_phantom_cohort(&spec).unwrap();
        assert_eq!(c.covariates(), vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        let x: Vec<f64> = c.subjects.iter().map(|s| s.volume.centroid()[0]).collect();
        for w in x.windows(2) {
            assert!((w[1] - w[0] - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn margin_is_enforced() {
        let spec = PhantomSpec {
            family: PhantomFamily::Translation { sigma: 3.0, step: 4.0 },
            dims: vec![32, 32],
            count: 5,
            seed: 0,
        };
        assert!(matches!(make_phantom_cohort(&spec), Err(TbmError::InvalidConfig(_))));
    }
}
