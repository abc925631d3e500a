//! Linearized optimal transport: templates, the forward embedding of a
//! subject and the generative inverse.

use std::path::Path;

use crate::calculus::{determinant, interp_at, jacobian, VectorField};
use crate::error::{Result, TbmError};
use crate::grid::GridSpec;
use crate::solver::{solve, SolveResult, SolverConfig};
use crate::volume::{
    floor_density, read_embedding, write_embedding, DensityVolume, DEFAULT_FLOOR, DEFAULT_TARGET_MASS,
};

/// Reference density all subjects are embedded against.
#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub density: DensityVolume,
    /// Identifiers of the subjects that were averaged.
    pub provenance: Vec<String>,
}

impl Template {
    pub fn new(density: DensityVolume, provenance: Vec<String>) -> Self {
        Self { density, provenance }
    }

    pub fn grid(&self) -> &GridSpec {
        self.density.grid()
    }

    /// Density of a voxel that is empty apart from the normalization floor.
    /// Displacements are not reconstructed at or below this level.
    pub fn floor_level(&self) -> f64 {
        floor_density(self.grid(), self.density.total_mass(), DEFAULT_FLOOR)
    }
}

/// Voxelwise mean of the subjects, renormalized to the standard mass.
pub fn build_template<S: AsRef<str>>(subjects: &[DensityVolume], ids: &[S]) -> Result<Template> {
    let Some(first) = subjects.first() else {
        return Err(TbmError::EmptyCohort);
    };
    if ids.len() != subjects.len() {
        return Err(TbmError::InvalidCohort(format!(
            "{} identifiers for {} subjects",
            ids.len(),
            subjects.len()
        )));
    }
    let mut acc = vec![0.0; first.grid().len()];
    for s in subjects {
        first.grid().ensure_matches(s.grid())?;
        for (a, v) in acc.iter_mut().zip(s.values()) {
            *a += v;
        }
    }
    let k = subjects.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    let density = DensityVolume::new(first.grid().clone(), acc)?.with_mass(DEFAULT_TARGET_MASS)?;
    Ok(Template::new(density, ids.iter().map(|s| s.as_ref().to_string()).collect()))
}

/// `(f(x) - x) sqrt(I0(x))` per voxel and component.
#[derive(Clone, Debug, PartialEq)]
pub struct LotEmbedding {
    grid: GridSpec,
    components: Vec<Vec<f64>>,
}

impl LotEmbedding {
    pub fn new(grid: GridSpec, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != grid.ndim() || components.iter().any(|c| c.len() != grid.len()) {
            return Err(TbmError::InvalidVolume("embedding layout does not match the grid".into()));
        }
        if let Some(i) = components.iter().flatten().position(|x| !x.is_finite()) {
            return Err(TbmError::NonFiniteInput(i));
        }
        Ok(Self { grid, components })
    }

    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            grid: grid.clone(),
            components: vec![vec![0.0; grid.len()]; grid.ndim()],
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    /// Length of the flattened vector, `ndim * voxels`.
    pub fn dim(&self) -> usize {
        self.grid.ndim() * self.grid.len()
    }

    /// Component blocks concatenated in order.
    pub fn to_vector(&self) -> Vec<f64> {
        self.components.concat()
    }

    pub fn from_vector(grid: &GridSpec, v: &[f64]) -> Result<Self> {
        if v.len() != grid.ndim() * grid.len() {
            return Err(TbmError::InvalidVolume(format!(
                "vector of length {} for a {}-component grid of {} voxels",
                v.len(),
                grid.ndim(),
                grid.len()
            )));
        }
        Self::new(grid.clone(), v.chunks_exact(grid.len()).map(<[f64]>::to_vec).collect())
    }

    /// `sum |e|^2 dV`, which equals the transport cost of the embedded map.
    pub fn norm_sq(&self) -> f64 {
        self.components.iter().flatten().map(|x| x * x).sum::<f64>() * self.grid.voxel_volume()
    }

    pub fn add_scaled(&mut self, a: f64, other: &LotEmbedding) -> Result<()> {
        self.grid.ensure_matches(&other.grid)?;
        for (c, o) in self.components.iter_mut().zip(&other.components) {
            for (x, y) in c.iter_mut().zip(o) {
                *x += a * y;
            }
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_embedding(&self.grid, &self.components, path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let (grid, components) = read_embedding(path)?;
        Self::new(grid, components)
    }
}

/// Embedding of a map relative to the template.
pub fn embed_map(template: &Template, map: &VectorField) -> Result<LotEmbedding> {
    template.grid().ensure_matches(map.grid())?;
    let w: Vec<f64> = template.density.values().iter().map(|v| v.sqrt()).collect();
    let d = map.displacement();
    let components = d
        .components()
        .iter()
        .map(|c| c.iter().zip(&w).map(|(x, s)| x * s).collect())
        .collect();
    LotEmbedding::new(map.grid().clone(), components)
}

/// Solves template to subject and embeds the map, keeping the solver result.
pub fn analyze_with_result(
    template: &Template,
    subject: &DensityVolume,
    cfg: &SolverConfig,
) -> Result<(LotEmbedding, SolveResult)> {
    let r = solve(&template.density, subject, cfg)?;
    Ok((embed_map(template, &r.map)?, r))
}

pub fn analyze(template: &Template, subject: &DensityVolume, cfg: &SolverConfig) -> Result<LotEmbedding> {
    analyze_with_result(template, subject, cfg).map(|(e, _)| e)
}

/// Map `id + e / sqrt(I0)`, with zero displacement where the template is at
/// its floor.
pub fn map_from_embedding(template: &Template, embedding: &LotEmbedding) -> Result<VectorField> {
    template.grid().ensure_matches(embedding.grid())?;
    let cut = template.floor_level() * (1.0 + 1e-6);
    let i0 = template.density.values();
    let disp = embedding
        .components()
        .iter()
        .map(|c| {
            c.iter()
                .zip(i0)
                .map(|(e, &v)| if v <= cut { 0.0 } else { e / v.sqrt() })
                .collect()
        })
        .collect();
    Ok(VectorField::from_displacement(&VectorField::new(template.grid().clone(), disp)?))
}

/// Subdivisions per axis used by [`synthesize`].
pub fn default_subdivisions(ndim: usize) -> usize {
    if ndim == 2 {
        8
    } else {
        4
    }
}

/// Density obtained by moving the mass of `density` along `map`.
///
/// Every voxel is split into `subdivisions^n` sub-samples whose mass comes
/// from the cubic interpolant of the density; each sub-sample is carried to
/// `map` evaluated at its position and deposited on the neighbouring voxel
/// centres with multilinear weights. The deposit kernel's blur is removed to
/// first order by one step of `I - Laplacian / 12`. Output is clamped at zero
/// and carries the input's total mass.
pub fn pushforward(density: &DensityVolume, map: &VectorField, subdivisions: usize) -> Result<DensityVolume> {
    let g = density.grid();
    g.ensure_matches(map.grid())?;
    if subdivisions == 0 {
        return Err(TbmError::InvalidConfig("subdivisions must be >= 1".into()));
    }
    let n = g.ndim();
    let dims = g.dims();
    let h = g.spacing();
    let strides = g.strides();
    let s = subdivisions;
    let per_voxel = s.pow(n as u32);
    let disp = map.displacement();
    let centers = g.coordinates();
    let offsets: Vec<Vec<f64>> = (0..n)
        .map(|a| (0..s).map(|k| ((k as f64 + 0.5) / s as f64 - 0.5) * h[a]).collect())
        .collect();

    let mut out = vec![0.0; g.len()];
    const CHUNK: usize = 4096;
    for start in (0..g.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(g.len());
        let m = (end - start) * per_voxel;
        let mut pts = vec![Vec::with_capacity(m); n];
        for v in start..end {
            for sub in 0..per_voxel {
                let mut r = sub;
                for a in (0..n).rev() {
                    pts[a].push(centers[a][v] + offsets[a][r % s]);
                    r /= s;
                }
            }
        }
        let mass = interp_at(g, density.values(), &pts);
        let moved: Vec<Vec<f64>> = (0..n)
            .map(|a| {
                interp_at(g, disp.component(a), &pts)
                    .iter()
                    .zip(&pts[a])
                    .map(|(d, x)| x + d)
                    .collect()
            })
            .collect();
        for q in 0..m {
            let w = mass[q].max(0.0);
            if w == 0.0 {
                continue;
            }
            let mut lo = [0usize; 3];
            let mut t = [0.0f64; 3];
            for a in 0..n {
                let u = (moved[a][q] / h[a] - 0.5).clamp(0.0, (dims[a] - 1) as f64);
                let l = (u.floor() as usize).min(dims[a].saturating_sub(2));
                lo[a] = l;
                t[a] = u - l as f64;
            }
            for corner in 0..(1usize << n) {
                let mut idx = 0;
                let mut wt = w;
                for a in 0..n {
                    let up = (corner >> a) & 1;
                    idx += (lo[a] + up) * strides[a];
                    wt *= if up == 1 { t[a] } else { 1.0 - t[a] };
                }
                out[idx] += wt;
            }
        }
    }

    let mut sharp = out.clone();
    for a in 0..n {
        let st = strides[a];
        for (i, v) in sharp.iter_mut().enumerate() {
            let k = (i / st) % dims[a];
            let prev = if k == 0 { out[i] } else { out[i - st] };
            let next = if k + 1 == dims[a] { out[i] } else { out[i + st] };
            *v -= (prev - 2.0 * out[i] + next) / 12.0;
        }
    }
    sharp.iter_mut().for_each(|v| *v = v.max(0.0));
    DensityVolume::new(g.clone(), sharp)?.with_mass(density.total_mass())
}

/// Image represented by an embedding: the template pushed forward by the
/// reconstructed map.
pub fn synthesize(template: &Template, embedding: &LotEmbedding) -> Result<DensityVolume> {
    let f = map_from_embedding(template, embedding)?;
    let min_det = determinant(&jacobian(&f)).into_iter().fold(f64::INFINITY, f64::min);
    if !(min_det > 0.0) {
        return Err(TbmError::NonDiffeomorphicMap(min_det));
    }
    pushforward(&template.density, &f, default_subdivisions(template.grid().ndim()))
}

/// `synthesize(mean + nu * direction)` for every `nu`; failures are reported
/// per entry.
pub fn sample_direction(
    template: &Template,
    mean: &LotEmbedding,
    direction: &LotEmbedding,
    nus: &[f64],
) -> Result<Vec<Result<DensityVolume>>> {
    template.grid().ensure_matches(mean.grid())?;
    mean.grid().ensure_matches(direction.grid())?;
    Ok(nus
        .iter()
        .map(|&nu| {
            let mut e = mean.clone();
            e.add_scaled(nu, direction)?;
            synthesize(template, &e)
        })
        .collect())
}
