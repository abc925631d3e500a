//! Discrete vector calculus on regular grids.
//!
//! Every first derivative uses the same stencil: central differences in the
//! interior and one-sided second-order differences on the two boundary
//! planes. The stencil is exact on quadratics, so affine fields are
//! differentiated to round-off everywhere.
//!
//! The `*_transpose` operators are the exact matrix transposes of the
//! corresponding discrete operators under the plain voxel-sum inner product.
//! They are what the solver needs to differentiate a discretized objective
//! exactly.

use rayon::prelude::*;

use crate::error::{Result, TbmError};
use crate::grid::GridSpec;
use crate::volume::DensityVolume;

/// An `n`-component field on an `n`-axis grid, values in world units.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: GridSpec,
    components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn new(grid: GridSpec, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != grid.ndim() {
            return Err(TbmError::InvalidVolume(format!(
                "{} components on a {}-axis grid",
                components.len(),
                grid.ndim()
            )));
        }
        for c in &components {
            if c.len() != grid.len() {
                return Err(TbmError::InvalidVolume(format!(
                    "component of length {} on a grid of {} voxels",
                    c.len(),
                    grid.len()
                )));
            }
            if let Some(i) = c.iter().position(|x| !x.is_finite()) {
                return Err(TbmError::NonFiniteInput(i));
            }
        }
        Ok(Self { grid, components })
    }

    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            grid: grid.clone(),
            components: vec![vec![0.0; grid.len()]; grid.ndim()],
        }
    }

    /// The identity map `id(x) = x`.
    pub fn identity(grid: &GridSpec) -> Self {
        Self {
            grid: grid.clone(),
            components: grid.coordinates(),
        }
    }

    /// `id + displacement`.
    pub fn from_displacement(displacement: &VectorField) -> Self {
        let mut f = Self::identity(&displacement.grid);
        f.add_scaled(1.0, displacement);
        f
    }

    /// `self - id`.
    pub fn displacement(&self) -> VectorField {
        let mut d = self.clone();
        for (c, x) in d.components.iter_mut().zip(self.grid.coordinates()) {
            for (ci, xi) in c.iter_mut().zip(x) {
                *ci -= xi;
            }
        }
        d
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i]
    }

    pub fn components_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.components
    }

    pub fn into_components(self) -> Vec<Vec<f64>> {
        self.components
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, a: f64, other: &VectorField) {
        for (c, o) in self.components.iter_mut().zip(&other.components) {
            for (ci, oi) in c.iter_mut().zip(o) {
                *ci += a * oi;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for c in &mut self.components {
            for ci in c.iter_mut() {
                *ci *= a;
            }
        }
    }

    /// Plain voxel-sum inner product.
    pub fn dot(&self, other: &VectorField) -> f64 {
        self.components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    /// Euclidean length of the vector at voxel `i`.
    pub fn norm_at(&self, i: usize) -> f64 {
        self.components.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt()
    }

    /// Largest per-voxel Euclidean length.
    pub fn max_norm(&self) -> f64 {
        (0..self.grid.len()).map(|i| self.norm_at(i)).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(|c| c.iter().all(|x| x.is_finite()))
    }
}

/// Per-voxel `n x n` Jacobian, entry `(i, k)` = d f^i / d x^k.
#[derive(Clone, Debug)]
pub struct JacobianField {
    grid: GridSpec,
    entries: Vec<Vec<f64>>,
}

impl JacobianField {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.ndim()
    }

    /// Entry `(i, k)` at every voxel.
    pub fn entry(&self, i: usize, k: usize) -> &[f64] {
        &self.entries[i * self.n() + k]
    }

    /// The matrix at voxel `v`, row-major.
    pub fn matrix_at(&self, v: usize) -> Vec<f64> {
        self.entries.iter().map(|e| e[v]).collect()
    }

    /// Builds a field from per-voxel row-major matrices.
    pub fn from_matrices(grid: &GridSpec, matrices: &[Vec<f64>]) -> Result<Self> {
        let n = grid.ndim();
        if matrices.len() != grid.len() || matrices.iter().any(|m| m.len() != n * n) {
            return Err(TbmError::InvalidVolume("matrix field shape mismatch".into()));
        }
        let entries = (0..n * n)
            .map(|e| matrices.iter().map(|m| m[e]).collect())
            .collect();
        Ok(Self {
            grid: grid.clone(),
            entries,
        })
    }
}

fn lines(grid: &GridSpec, axis: usize) -> (usize, usize, usize) {
    let dims = grid.dims();
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

/// First derivative of `s` along `axis`.
pub fn derivative(grid: &GridSpec, s: &[f64], axis: usize) -> Vec<f64> {
    let (outer, n, inner) = lines(grid, axis);
    let c = 0.5 / grid.spacing()[axis];
    let mut out = vec![0.0; s.len()];
    out.par_chunks_mut(n * inner)
        .zip(s.par_chunks(n * inner))
        .for_each(|(o, u)| {
            let at = |i: usize, k: usize| u[i * inner + k];
            for k in 0..inner {
                o[k] = c * (-3.0 * at(0, k) + 4.0 * at(1, k) - at(2, k));
                o[(n - 1) * inner + k] =
                    c * (3.0 * at(n - 1, k) - 4.0 * at(n - 2, k) + at(n - 3, k));
            }
            for i in 1..n - 1 {
                for k in 0..inner {
                    o[i * inner + k] = c * (at(i + 1, k) - at(i - 1, k));
                }
            }
        });
    debug_assert_eq!(outer * n * inner, s.len());
    out
}

/// Transpose of [`derivative`]: `<derivative(u), g> = <u, derivative_transpose(g)>`.
pub fn derivative_transpose(grid: &GridSpec, g: &[f64], axis: usize) -> Vec<f64> {
    let (_, n, inner) = lines(grid, axis);
    let c = 0.5 / grid.spacing()[axis];
    let mut out = vec![0.0; g.len()];
    out.par_chunks_mut(n * inner)
        .zip(g.par_chunks(n * inner))
        .for_each(|(o, gl)| {
            let at = |i: usize, k: usize| gl[i * inner + k];
            for k in 0..inner {
                // Row 0 and row n-1 scatter into three columns each.
                o[k] -= 3.0 * c * at(0, k);
                o[inner + k] += 4.0 * c * at(0, k);
                o[2 * inner + k] -= c * at(0, k);
                o[(n - 1) * inner + k] += 3.0 * c * at(n - 1, k);
                o[(n - 2) * inner + k] -= 4.0 * c * at(n - 1, k);
                o[(n - 3) * inner + k] += c * at(n - 1, k);
            }
            for i in 1..n - 1 {
                for k in 0..inner {
                    let gi = c * at(i, k);
                    o[(i + 1) * inner + k] += gi;
                    o[(i - 1) * inner + k] -= gi;
                }
            }
        });
    out
}

pub fn gradient(grid: &GridSpec, s: &[f64]) -> VectorField {
    VectorField {
        grid: grid.clone(),
        components: (0..grid.ndim()).map(|a| derivative(grid, s, a)).collect(),
    }
}

pub fn divergence(f: &VectorField) -> Vec<f64> {
    let mut out = vec![0.0; f.grid.len()];
    for (a, c) in f.components.iter().enumerate() {
        for (o, d) in out.iter_mut().zip(derivative(&f.grid, c, a)) {
            *o += d;
        }
    }
    out
}

pub fn jacobian(f: &VectorField) -> JacobianField {
    let n = f.grid.ndim();
    let mut entries = Vec::with_capacity(n * n);
    for i in 0..n {
        for k in 0..n {
            entries.push(derivative(&f.grid, &f.components[i], k));
        }
    }
    JacobianField {
        grid: f.grid.clone(),
        entries,
    }
}

pub fn determinant(j: &JacobianField) -> Vec<f64> {
    let e = &j.entries;
    let len = j.grid.len();
    match j.n() {
        2 => (0..len).map(|v| e[0][v] * e[3][v] - e[1][v] * e[2][v]).collect(),
        _ => (0..len)
            .map(|v| {
                let (a, b, c) = (e[0][v], e[1][v], e[2][v]);
                let (d, ee, f) = (e[3][v], e[4][v], e[5][v]);
                let (g, h, i) = (e[6][v], e[7][v], e[8][v]);
                a * (ee * i - f * h) - b * (d * i - f * g) + c * (d * h - ee * g)
            })
            .collect(),
    }
}

/// Adjugate (transposed cofactor matrix): `J adj(J) = det(J) I`.
pub fn adjugate(j: &JacobianField) -> JacobianField {
    let e = &j.entries;
    let len = j.grid.len();
    let entries: Vec<Vec<f64>> = match j.n() {
        2 => vec![
            e[3].clone(),
            e[1].iter().map(|x| -x).collect(),
            e[2].iter().map(|x| -x).collect(),
            e[0].clone(),
        ],
        _ => {
            let m = |r: usize, c: usize, v: usize| e[r * 3 + c][v];
            let cof = |r0: usize, r1: usize, c0: usize, c1: usize| -> Vec<f64> {
                (0..len)
                    .map(|v| m(r0, c0, v) * m(r1, c1, v) - m(r0, c1, v) * m(r1, c0, v))
                    .collect()
            };
            // adj[i][k] = cofactor[k][i]
            vec![
                cof(1, 2, 1, 2),
                cof(0, 2, 2, 1),
                cof(0, 1, 1, 2),
                cof(1, 2, 2, 0),
                cof(0, 2, 0, 2),
                cof(0, 1, 2, 0),
                cof(1, 2, 0, 1),
                cof(0, 2, 1, 0),
                cof(0, 1, 0, 1),
            ]
        }
    };
    JacobianField {
        grid: j.grid.clone(),
        entries,
    }
}

/// Discrete curl. One component (the scalar `d f2/dx1 - d f1/dx2`) in 2D,
/// three in 3D.
pub fn curl(f: &VectorField) -> Vec<Vec<f64>> {
    let g = &f.grid;
    let d = |i: usize, k: usize| derivative(g, &f.components[i], k);
    let sub = |a: Vec<f64>, b: Vec<f64>| -> Vec<f64> { a.iter().zip(&b).map(|(x, y)| x - y).collect() };
    match g.ndim() {
        2 => vec![sub(d(1, 0), d(0, 1))],
        _ => vec![
            sub(d(2, 1), d(1, 2)),
            sub(d(0, 2), d(2, 0)),
            sub(d(1, 0), d(0, 1)),
        ],
    }
}

/// Transpose of [`curl`], mapping curl-shaped data back to a vector field.
pub fn curl_transpose(grid: &GridSpec, c: &[Vec<f64>]) -> VectorField {
    let dt = |s: &[f64], k: usize| derivative_transpose(grid, s, k);
    let sub = |a: Vec<f64>, b: Vec<f64>| -> Vec<f64> { a.iter().zip(&b).map(|(x, y)| x - y).collect() };
    let components = match grid.ndim() {
        2 => {
            let w = &c[0];
            vec![dt(w, 1).iter().map(|x| -x).collect(), dt(w, 0)]
        }
        _ => vec![
            sub(dt(&c[1], 2), dt(&c[2], 1)),
            sub(dt(&c[2], 0), dt(&c[0], 2)),
            sub(dt(&c[0], 1), dt(&c[1], 0)),
        ],
    };
    VectorField {
        grid: grid.clone(),
        components,
    }
}

/// `curl^T curl f`, the exact gradient of `1/2 sum |curl f|^2`. In the
/// interior it is the central-difference discretization of curl curl f.
pub fn curl_curl(f: &VectorField) -> VectorField {
    curl_transpose(&f.grid, &curl(f))
}

/// `[1, 2, 1] / 4` filter along every axis of every component, with
/// mirrored edges. Removes the alternating mode that central differences
/// cannot see.
pub fn binomial_smooth(f: &VectorField) -> VectorField {
    let dims = f.grid.dims().to_vec();
    let strides = f.grid.strides();
    let components = f
        .components
        .iter()
        .map(|c| {
            let mut v = c.clone();
            for (axis, &n) in dims.iter().enumerate() {
                if n < 2 {
                    continue;
                }
                let s = strides[axis];
                let src = v.clone();
                for (i, out) in v.iter_mut().enumerate() {
                    let k = (i / s) % n;
                    let lo = if k == 0 { i } else { i - s };
                    let hi = if k + 1 == n { i } else { i + s };
                    *out = 0.25 * (src[lo] + 2.0 * src[i] + src[hi]);
                }
            }
            v
        })
        .collect();
    VectorField {
        grid: f.grid.clone(),
        components,
    }
}

/// Mean over voxels of the Euclidean norm of the curl.
pub fn mean_curl_magnitude(f: &VectorField) -> f64 {
    let c = curl(f);
    let n = f.grid.len();
    (0..n)
        .map(|v| c.iter().map(|ci| ci[v] * ci[v]).sum::<f64>().sqrt())
        .sum::<f64>()
        / n as f64
}

/// Catmull-Rom weights over the window `base..base + 4` along one axis,
/// together with their derivatives with respect to the world coordinate.
/// Samples beyond the boundary are linearly extrapolated, so affine data are
/// reproduced up to the edge; queries outside the sample range clamp.
#[inline]
fn axis_weights(x: f64, n: usize, h: f64) -> (usize, [f64; 4], [f64; 4]) {
    let u = x / h - 0.5;
    let hi = (n - 1) as f64;
    let (u, inside) = if u < 0.0 {
        (0.0, false)
    } else if u > hi {
        (hi, false)
    } else {
        (u, true)
    };
    let l = (u.floor() as usize).min(n - 2);
    let t = u - l as f64;
    let t2 = t * t;
    let t3 = t2 * t;
    let mut w = [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ];
    let mut dw = if inside {
        let s = 0.5 / h;
        [
            s * (-3.0 * t2 + 4.0 * t - 1.0),
            s * (9.0 * t2 - 10.0 * t),
            s * (-9.0 * t2 + 8.0 * t + 1.0),
            s * (3.0 * t2 - 2.0 * t),
        ]
    } else {
        [0.0; 4]
    };
    if l == 0 {
        // ghost p[-1] = 2 p[0] - p[1]; window becomes 0..4
        for arr in [&mut w, &mut dw] {
            let g = arr[0];
            *arr = [arr[1] + 2.0 * g, arr[2] - g, arr[3], 0.0];
        }
        (0, w, dw)
    } else if l == n - 2 {
        // ghost p[n] = 2 p[n-1] - p[n-2]; window becomes n-4..n
        for arr in [&mut w, &mut dw] {
            let g = arr[3];
            *arr = [0.0, arr[0], arr[1] - g, arr[2] + 2.0 * g];
        }
        (n - 4, w, dw)
    } else {
        (l - 1, w, dw)
    }
}

fn interp_impl(grid: &GridSpec, v: &[f64], comps: &[Vec<f64>], with_grad: bool) -> (Vec<f64>, Vec<Vec<f64>>) {
    let nd = grid.ndim();
    let dims = grid.dims();
    let h = grid.spacing();
    let strides = grid.strides();
    let len = comps[0].len();

    let eval = |q: usize| -> [f64; 4] {
        let mut base = [0usize; 3];
        let mut w = [[0.0f64; 4]; 3];
        let mut dw = [[0.0f64; 4]; 3];
        for a in 0..nd {
            let (b, wa, da) = axis_weights(comps[a][q], dims[a], h[a]);
            base[a] = b;
            w[a] = wa;
            dw[a] = da;
        }
        let mut acc = [0.0f64; 4];
        if nd == 2 {
            for i in 0..4 {
                let row = (base[0] + i) * strides[0] + base[1];
                let mut s = 0.0;
                let mut sd = 0.0;
                for j in 0..4 {
                    let p = v[row + j];
                    s += w[1][j] * p;
                    sd += dw[1][j] * p;
                }
                acc[0] += w[0][i] * s;
                acc[1] += dw[0][i] * s;
                acc[2] += w[0][i] * sd;
            }
        } else {
            for i in 0..4 {
                let mut si = [0.0f64; 3];
                for j in 0..4 {
                    let row = (base[0] + i) * strides[0] + (base[1] + j) * strides[1] + base[2];
                    let mut s = 0.0;
                    let mut sd = 0.0;
                    for k in 0..4 {
                        let p = v[row + k];
                        s += w[2][k] * p;
                        sd += dw[2][k] * p;
                    }
                    si[0] += w[1][j] * s;
                    si[1] += dw[1][j] * s;
                    si[2] += w[1][j] * sd;
                }
                acc[0] += w[0][i] * si[0];
                acc[1] += dw[0][i] * si[0];
                acc[2] += w[0][i] * si[1];
                acc[3] += w[0][i] * si[2];
            }
        }
        acc
    };

    if !with_grad {
        let values = (0..len).into_par_iter().map(|q| eval(q)[0]).collect();
        return (values, Vec::new());
    }
    let all: Vec<[f64; 4]> = (0..len).into_par_iter().map(eval).collect();
    let values = all.iter().map(|a| a[0]).collect();
    let grads = (0..nd).map(|a| all.iter().map(|r| r[a + 1]).collect()).collect();
    (values, grads)
}

/// `v(f(x))` at every voxel of `f`'s grid, with `v` sampled on `grid`.
pub fn interp(grid: &GridSpec, v: &[f64], f: &VectorField) -> Vec<f64> {
    interp_impl(grid, v, &f.components, false).0
}

/// `v` at arbitrary points given as one coordinate array per axis.
pub fn interp_at(grid: &GridSpec, v: &[f64], points: &[Vec<f64>]) -> Vec<f64> {
    assert_eq!(points.len(), grid.ndim(), "one coordinate array per axis");
    interp_impl(grid, v, points, false).0
}

/// `v(f(x))` together with the interpolant's spatial gradient evaluated at
/// `f(x)`. The gradient is zero along axes where the query was clamped.
pub fn interp_with_gradient(grid: &GridSpec, v: &[f64], f: &VectorField) -> (Vec<f64>, VectorField) {
    let (values, grads) = interp_impl(grid, v, &f.components, true);
    (
        values,
        VectorField {
            grid: f.grid.clone(),
            components: grads,
        },
    )
}

/// `det(Df) * I1(f) - I0` per voxel.
pub fn pushforward_residual(f: &VectorField, i1: &DensityVolume, i0: &DensityVolume) -> Result<Vec<f64>> {
    f.grid.ensure_matches(i1.grid())?;
    f.grid.ensure_matches(i0.grid())?;
    let det = determinant(&jacobian(f));
    let warped = interp(i1.grid(), i1.values(), f);
    Ok(det
        .iter()
        .zip(&warped)
        .zip(i0.values())
        .map(|((d, w), z)| d * w - z)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn field_from(grid: &GridSpec, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> VectorField {
        let coords = grid.coordinates();
        let n = grid.ndim();
        let mut comps = vec![vec![0.0; grid.len()]; n];
        for v in 0..grid.len() {
            let x: Vec<f64> = coords.iter().map(|c| c[v]).collect();
            for (i, val) in f(&x).into_iter().enumerate() {
                comps[i][v] = val;
            }
        }
        VectorField::new(grid.clone(), comps).unwrap()
    }

    fn scalar_from(grid: &GridSpec, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let coords = grid.coordinates();
        (0..grid.len())
            .map(|v| {
                let x: Vec<f64> = coords.iter().map(|c| c[v]).collect();
                f(&x)
            })
            .collect()
    }

    fn interior(grid: &GridSpec, margin: usize) -> Vec<usize> {
        (0..grid.len())
            .filter(|&v| {
                let idx = grid.unravel(v);
                (0..grid.ndim()).all(|a| idx[a] >= margin && idx[a] + margin < grid.dims()[a])
            })
            .collect()
    }

    #[test]
    fn gradient_of_constant_and_affine() {
        let g = GridSpec::new(&[6, 9], &[0.5, 1.3]).unwrap();
        let c = gradient(&g, &vec![4.2; g.len()]);
        assert!(c.max_norm() < 1e-12);
        let s = scalar_from(&g, |x| 3.0 * x[0] + 2.0 * x[1]);
        let gr = gradient(&g, &s);
        for v in 0..g.len() {
            assert!((gr.component(0)[v] - 3.0).abs() < 1e-12);
            assert!((gr.component(1)[v] - 2.0).abs() < 1e-12);
        }
    }

    fn sin_error(n: usize) -> f64 {
        let h = 1.0 / n as f64;
        let g = GridSpec::new(&[n, 4], &[h, h]).unwrap();
        let s = scalar_from(&g, |x| (2.0 * PI * x[0]).sin());
        let d = derivative(&g, &s, 0);
        let coords = g.coordinates();
        d.iter()
            .zip(&coords[0])
            .map(|(di, x)| (di - 2.0 * PI * (2.0 * PI * x).cos()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn gradient_is_second_order() {
        let e64 = sin_error(64);
        let e128 = sin_error(128);
        let ratio = e64 / e128;
        assert!((ratio - 4.0).abs() <= 0.15 * 4.0, "ratio {ratio}");
    }

    #[test]
    fn derivative_transpose_is_adjoint() {
        let g = GridSpec::new(&[5, 7, 6], &[1.0, 0.5, 2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for axis in 0..3 {
            let lhs: f64 = derivative(&g, &u, axis).iter().zip(&w).map(|(a, b)| a * b).sum();
            let rhs: f64 = u.iter().zip(derivative_transpose(&g, &w, axis)).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn jacobian_of_identity_and_affine() {
        let g = GridSpec::unit(&[5, 6, 4]).unwrap();
        let j = jacobian(&VectorField::identity(&g));
        for v in 0..g.len() {
            let m = j.matrix_at(v);
            for i in 0..3 {
                for k in 0..3 {
                    let want = if i == k { 1.0 } else { 0.0 };
                    assert!((m[i * 3 + k] - want).abs() < 1e-12);
                }
            }
        }
        let a = [[1.1, 0.2, -0.3], [0.0, 0.9, 0.4], [0.5, -0.1, 1.3]];
        let f = field_from(&g, |x| {
            (0..3).map(|i| (0..3).map(|k| a[i][k] * x[k]).sum()).collect()
        });
        let j = jacobian(&f);
        for v in 0..g.len() {
            let m = j.matrix_at(v);
            for i in 0..3 {
                for k in 0..3 {
                    assert!((m[i * 3 + k] - a[i][k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn jacobian_of_sin_perturbation_converges() {
        let err = |n: usize| {
            let h = 1.0 / n as f64;
            let g = GridSpec::new(&[n, n], &[h, h]).unwrap();
            let f = field_from(&g, |x| {
                vec![
                    x[0] + 0.1 * (2.0 * PI * x[1]).sin(),
                    x[1] + 0.1 * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos(),
                ]
            });
            let j = jacobian(&f);
            let coords = g.coordinates();
            (0..g.len())
                .map(|v| {
                    let (x, y) = (coords[0][v], coords[1][v]);
                    let tw = 2.0 * PI;
                    let exact = [
                        1.0,
                        0.1 * tw * (tw * y).cos(),
                        0.1 * tw * (tw * x).cos() * (tw * y).cos(),
                        1.0 - 0.1 * tw * (tw * x).sin() * (tw * y).sin(),
                    ];
                    let m = j.matrix_at(v);
                    (0..4).map(|e| (m[e] - exact[e]).abs()).fold(0.0, f64::max)
                })
                .fold(0.0, f64::max)
        };
        let ratio = err(32) / err(64);
        assert!((ratio - 4.0).abs() < 0.6, "ratio {ratio}");
    }

    #[test]
    fn determinant_and_adjugate_closed_forms() {
        let g = GridSpec::unit(&[4, 4]).unwrap();
        let diag: Vec<Vec<f64>> = (0..16).map(|_| vec![2.0, 0.0, 0.0, 3.0]).collect();
        let j = JacobianField::from_matrices(&g, &diag).unwrap();
        assert!(determinant(&j).iter().all(|&d| d == 6.0));
        let adj = adjugate(&j);
        assert_eq!(adj.matrix_at(7), vec![3.0, 0.0, 0.0, 2.0]);

        let g3 = GridSpec::unit(&[4, 4, 4]).unwrap();
        let ident: Vec<Vec<f64>> = (0..64)
            .map(|_| vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .collect();
        let j = JacobianField::from_matrices(&g3, &ident).unwrap();
        assert!(determinant(&j).iter().all(|&d| d == 1.0));
        assert_eq!(adjugate(&j).matrix_at(0), ident[0]);
    }

    #[test]
    fn adjugate_identity_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dims in [vec![4usize, 5], vec![4, 4, 5]] {
            let g = GridSpec::unit(&dims).unwrap();
            let n = g.ndim();
            let mats: Vec<Vec<f64>> = (0..g.len())
                .map(|_| (0..n * n).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let j = JacobianField::from_matrices(&g, &mats).unwrap();
            let det = determinant(&j);
            let adj = adjugate(&j);
            for v in 0..g.len() {
                let a = &mats[v];
                let b = adj.matrix_at(v);
                for r in 0..n {
                    for c in 0..n {
                        let p: f64 = (0..n).map(|k| a[r * n + k] * b[k * n + c]).sum();
                        let want = if r == c { det[v] } else { 0.0 };
                        assert!((p - want).abs() <= 1e-12, "{p} vs {want}");
                    }
                }
            }
        }
    }

    #[test]
    fn curl_of_gradient_and_rotation() {
        let g = GridSpec::unit(&[8, 9, 7]).unwrap();
        let grad = field_from(&g, |x| x.iter().map(|xi| 2.0 * xi).collect());
        let c = curl(&grad);
        for comp in &c {
            assert!(comp.iter().all(|v| v.abs() <= 1e-10));
        }
        let rot = field_from(&g, |x| vec![-x[1], x[0], 0.0]);
        let c = curl(&rot);
        for v in interior(&g, 1) {
            assert!(c[0][v].abs() < 1e-12 && c[1][v].abs() < 1e-12);
            assert!((c[2][v] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn curl_curl_matches_inner_product_form() {
        let g = GridSpec::unit(&[12, 12, 12]).unwrap();
        let f = field_from(&g, |x| {
            vec![
                (0.3 * x[1]).sin() * (0.2 * x[2]).cos(),
                (0.25 * x[0]).cos() + 0.1 * x[2] * x[2] / 12.0,
                (0.2 * x[0] * x[1] / 12.0).sin(),
            ]
        });
        // g vanishes within two voxels of the boundary.
        let bump = |t: f64| {
            let s = (t - 6.0) / 3.5;
            if s.abs() < 1.0 {
                (1.0 - s * s).powi(3)
            } else {
                0.0
            }
        };
        let h = field_from(&g, |x| {
            let b = bump(x[0]) * bump(x[1]) * bump(x[2]);
            vec![b, -0.5 * b, 0.3 * b]
        });
        let lhs = curl_curl(&f).dot(&h);
        let cf = curl(&f);
        let ch = curl(&h);
        let rhs: f64 = cf
            .iter()
            .zip(&ch)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum();
        assert!((lhs - rhs).abs() <= 0.01 * rhs.abs(), "{lhs} vs {rhs}");
    }

    #[test]
    fn curl_2d_convention() {
        let g = GridSpec::unit(&[8, 8]).unwrap();
        let rot = field_from(&g, |x| vec![-x[1], x[0]]);
        assert!(curl(&rot)[0].iter().all(|&c| (c - 2.0).abs() < 1e-12));
        // Away from the boundary rows the transpose is a central difference, so
        // curl_curl = (d w / dx2, -d w / dx1) for w = curl f.
        let f = field_from(&g, |x| vec![0.0, 0.05 * x[0] * x[0]]);
        let cc = curl_curl(&f);
        for v in interior(&g, 3) {
            assert!(cc.component(0)[v].abs() < 1e-12);
            assert!((cc.component(1)[v] + 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn interp_identity_and_affine() {
        let g = GridSpec::new(&[7, 9], &[1.0, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let out = interp(&g, &v, &VectorField::identity(&g));
        for (a, b) in out.iter().zip(&v) {
            assert!((a - b).abs() < 1e-14);
        }

        let lin = scalar_from(&g, |x| 1.5 - 0.7 * x[0] + 2.0 * x[1]);
        let f = field_from(&g, |_| {
            vec![rng.gen_range(0.5..6.5), rng.gen_range(0.25..4.25)]
        });
        let out = interp(&g, &lin, &f);
        for (q, o) in out.iter().enumerate() {
            let x = f.component(0)[q];
            let y = f.component(1)[q];
            assert!((o - (1.5 - 0.7 * x + 2.0 * y)).abs() < 1e-10);
        }
    }

    #[test]
    fn interp_shifted_gaussian() {
        let g = GridSpec::unit(&[64, 64]).unwrap();
        let sigma = 6.0;
        let gauss = |x: f64, y: f64| (-((x - 30.0).powi(2) + (y - 32.0).powi(2)) / (2.0 * sigma * sigma)).exp();
        let v = scalar_from(&g, |x| gauss(x[0], x[1]));
        let f = field_from(&g, |x| vec![x[0] + 3.25, x[1]]);
        let out = interp(&g, &v, &f);
        let mut num = 0.0;
        let mut den = 0.0;
        for q in interior(&g, 8) {
            let (x, y) = (f.component(0)[q], f.component(1)[q]);
            let want = gauss(x, y);
            num += (out[q] - want).powi(2);
            den += want * want;
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-3, "relative error {rel}");
    }

    #[test]
    fn interp_gradient_matches_finite_difference() {
        let g = GridSpec::unit(&[6, 7, 8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let f = field_from(&g, |x| x.iter().map(|xi| xi + rng.gen_range(-0.8..0.8)).collect());
        let (_, grad) = interp_with_gradient(&g, &v, &f);
        let eps = 1e-6;
        for a in 0..3 {
            let mut fp = f.clone();
            let mut fm = f.clone();
            for q in 0..g.len() {
                fp.components_mut()[a][q] += eps;
                fm.components_mut()[a][q] -= eps;
            }
            let vp = interp(&g, &v, &fp);
            let vm = interp(&g, &v, &fm);
            for q in 0..g.len() {
                let fd = (vp[q] - vm[q]) / (2.0 * eps);
                assert!((fd - grad.component(a)[q]).abs() < 1e-6, "axis {a} voxel {q}");
            }
        }
    }

    #[test]
    fn interp_clamps_outside_domain() {
        let g = GridSpec::unit(&[5, 5]).unwrap();
        let v: Vec<f64> = (0..25).map(|i| i as f64).collect();
        let f = field_from(&g, |_| vec![-10.0, 100.0]);
        let out = interp(&g, &v, &f);
        assert!(out.iter().all(|&o| (o - v[4]).abs() < 1e-12));
    }

    #[test]
    fn residual_identities() {
        let g = GridSpec::unit(&[6, 6]).unwrap();
        let i0 = DensityVolume::new(g.clone(), (0..36).map(|i| 1.0 + i as f64).collect()).unwrap();
        let i1 = DensityVolume::new(g.clone(), (0..36).map(|i| 2.0 + (i % 5) as f64).collect()).unwrap();
        let id = VectorField::identity(&g);
        assert!(pushforward_residual(&id, &i0, &i0).unwrap().iter().all(|r| r.abs() < 1e-12));
        let r = pushforward_residual(&id, &i1, &i0).unwrap();
        for v in 0..36 {
            assert!((r[v] - (i1.values()[v] - i0.values()[v])).abs() < 1e-12);
        }
    }

    #[test]
    fn operators_are_linear() {
        let g = GridSpec::unit(&[6, 5, 7]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut rand_field = || {
            let comps = (0..3)
                .map(|_| (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            VectorField::new(g.clone(), comps).unwrap()
        };
        let f = rand_field();
        let h = rand_field();
        let (a, b) = (1.7, -0.4);
        let mut combo = f.clone();
        combo.scale(a);
        combo.add_scaled(b, &h);
        let check = |x: &[f64], y: &[f64], z: &[f64]| {
            for i in 0..x.len() {
                assert!((x[i] - (a * y[i] + b * z[i])).abs() < 1e-12);
            }
        };
        check(&divergence(&combo), &divergence(&f), &divergence(&h));
        for c in 0..3 {
            check(&curl(&combo)[c], &curl(&f)[c], &curl(&h)[c]);
            check(curl_curl(&combo).component(c), curl_curl(&f).component(c), curl_curl(&h).component(c));
        }
    }

    #[test]
    fn divergence_of_curl_is_small() {
        let n = 24;
        let h = 1.0 / n as f64;
        let g = GridSpec::new(&[n, n, n], &[h, h, h]).unwrap();
        let f = field_from(&g, |x| {
            vec![
                (2.0 * x[1]).sin() * x[2],
                (1.5 * x[2]).cos() * x[0],
                (x[0] * x[1]).sin(),
            ]
        });
        let c = curl(&f);
        let cf = VectorField::new(g.clone(), c).unwrap();
        let d = divergence(&cf);
        let max = interior(&g, 2).into_iter().map(|v| d[v].abs()).fold(0.0, f64::max);
        assert!(max < 10.0 * h * h, "max {max}");
    }
}
