//! The penalized transport objective and its exact discrete gradient.
//!
//! ```text
//! M(f) = 1/2 sum |x - f|^2 I0 dV + gamma/2 sum |curl f|^2 dV
//!      + lambda/2 sum (det(Df) I1(f) - I0)^2 dV
//! ```
//!
//! The gradient differentiates this sum exactly (stencil transposes and the
//! analytic derivative of the cubic interpolant), so it agrees with finite
//! differences of [`objective`] to round-off rather than to O(h^2).

use crate::calculus::{
    adjugate, curl, curl_curl, derivative_transpose, determinant, interp, interp_with_gradient,
    jacobian, VectorField,
};
use crate::error::Result;
use crate::volume::DensityVolume;

/// Penalty weights in effect for one evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Weights {
    pub lambda: f64,
    /// Effective curl weight: zero until the curl penalty is activated.
    pub gamma: f64,
}

/// The three objective terms, already multiplied by their weights.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveTerms {
    pub transport: f64,
    pub curl: f64,
    pub mass: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.transport + self.curl + self.mass
    }
}

/// A template/subject pair on a shared grid with cached voxel coordinates.
pub(crate) struct Problem<'a> {
    pub i0: &'a DensityVolume,
    pub i1: &'a DensityVolume,
    pub identity: VectorField,
}

/// Map-quality metrics that do not depend on the weights.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MapMetrics {
    pub rel_mse: f64,
    /// `sum (det(Df) I1(f) - I0)^2`, without the voxel volume.
    pub residual_sq: f64,
    pub min_det: f64,
}

impl<'a> Problem<'a> {
    pub fn new(i0: &'a DensityVolume, i1: &'a DensityVolume) -> Result<Self> {
        i0.grid().ensure_matches(i1.grid())?;
        Ok(Self {
            i0,
            i1,
            identity: VectorField::identity(i0.grid()),
        })
    }

    pub fn sum_i0_sq(&self) -> f64 {
        self.i0.values().iter().map(|v| v * v).sum()
    }

    /// `sum |f - x|^2 I0 dV`.
    pub fn transport_cost(&self, f: &VectorField) -> f64 {
        let dv = self.i0.grid().voxel_volume();
        let mut acc = 0.0;
        for (fc, xc) in f.components().iter().zip(self.identity.components()) {
            acc += fc
                .iter()
                .zip(xc)
                .zip(self.i0.values())
                .map(|((a, b), w)| (a - b) * (a - b) * w)
                .sum::<f64>();
        }
        acc * dv
    }

    /// `det(Df) I1(f) - I0` together with `det(Df)`.
    pub fn residual(&self, f: &VectorField) -> (Vec<f64>, Vec<f64>) {
        let det = determinant(&jacobian(f));
        let warped = interp(self.i1.grid(), self.i1.values(), f);
        let r = det
            .iter()
            .zip(&warped)
            .zip(self.i0.values())
            .map(|((d, w), z)| d * w - z)
            .collect();
        (r, det)
    }

    pub fn metrics(&self, f: &VectorField) -> MapMetrics {
        let (r, det) = self.residual(f);
        let num: f64 = r.iter().map(|x| x * x).sum();
        let den = self.sum_i0_sq();
        MapMetrics {
            rel_mse: num / den,
            residual_sq: num,
            min_det: det.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn terms(&self, f: &VectorField, w: Weights) -> ObjectiveTerms {
        let dv = self.i0.grid().voxel_volume();
        let transport = 0.5 * self.transport_cost(f);
        let curl_term = if w.gamma != 0.0 {
            let c = curl(f);
            let s: f64 = c.iter().map(|ci| ci.iter().map(|x| x * x).sum::<f64>()).sum();
            0.5 * w.gamma * s * dv
        } else {
            0.0
        };
        let mass = if w.lambda != 0.0 {
            let (r, _) = self.residual(f);
            0.5 * w.lambda * r.iter().map(|x| x * x).sum::<f64>() * dv
        } else {
            0.0
        };
        ObjectiveTerms {
            transport,
            curl: curl_term,
            mass,
        }
    }

    /// Gradient of the objective per unit voxel volume, so that
    /// `<gradient, h> * dV` is the directional derivative along `h`.
    pub fn gradient(&self, f: &VectorField, w: Weights) -> VectorField {
        let grid = self.i0.grid();
        let n = grid.ndim();
        let i0 = self.i0.values();

        let mut g = f.clone();
        for (gc, xc) in g.components_mut().iter_mut().zip(self.identity.components()) {
            for ((gi, xi), wi) in gc.iter_mut().zip(xc).zip(i0) {
                *gi = (*gi - xi) * wi;
            }
        }

        if w.lambda != 0.0 {
            let jac = jacobian(f);
            let det = determinant(&jac);
            let adj = adjugate(&jac);
            let (warped, dwarped) = interp_with_gradient(self.i1.grid(), self.i1.values(), f);
            let r: Vec<f64> = det
                .iter()
                .zip(&warped)
                .zip(i0)
                .map(|((d, v), z)| d * v - z)
                .collect();
            let rw: Vec<f64> = r.iter().zip(&warped).map(|(a, b)| a * b).collect();
            for i in 0..n {
                let gi = &mut g.components_mut()[i];
                for ((gv, (rv, dv)), dw) in gi.iter_mut().zip(r.iter().zip(&det)).zip(dwarped.component(i)) {
                    *gv += w.lambda * rv * dv * dw;
                }
                for k in 0..n {
                    // d det / d J_ik is the cofactor C_ik = adj_ki.
                    let weighted: Vec<f64> = rw.iter().zip(adj.entry(k, i)).map(|(a, c)| a * c).collect();
                    let t = derivative_transpose(grid, &weighted, k);
                    for (gv, tv) in gi.iter_mut().zip(t) {
                        *gv += w.lambda * tv;
                    }
                }
            }
        }

        if w.gamma != 0.0 {
            g.add_scaled(w.gamma, &curl_curl(f));
        }
        g
    }
}

/// Value of the penalized objective.
pub fn objective(f: &VectorField, i0: &DensityVolume, i1: &DensityVolume, w: Weights) -> Result<f64> {
    Ok(objective_terms(f, i0, i1, w)?.total())
}

pub fn objective_terms(
    f: &VectorField,
    i0: &DensityVolume,
    i1: &DensityVolume,
    w: Weights,
) -> Result<ObjectiveTerms> {
    f.grid().ensure_matches(i0.grid())?;
    Ok(Problem::new(i0, i1)?.terms(f, w))
}

/// Euler-Lagrange gradient of [`objective`] per unit voxel volume:
///
/// ```text
/// (f - id) I0 + lambda [ I_err det(Df) grad I1(f) - div_h(I_err I1(f) cof(Df)) ]
///             + gamma curl curl f
/// ```
///
/// where `div_h` is the negative transpose of the discrete gradient, applied
/// row-wise to the cofactor matrix.
pub fn el_gradient(f: &VectorField, i0: &DensityVolume, i1: &DensityVolume, w: Weights) -> Result<VectorField> {
    f.grid().ensure_matches(i0.grid())?;
    Ok(Problem::new(i0, i1)?.gradient(f, w))
}

/// `sum |f(x) - x|^2 I0(x) dV`.
pub fn transport_cost(f: &VectorField, i0: &DensityVolume) -> Result<f64> {
    f.grid().ensure_matches(i0.grid())?;
    Ok(Problem::new(i0, i0)?.transport_cost(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_density(grid: &GridSpec, seed: u64) -> DensityVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = grid.ndim();
        let c: Vec<f64> = (0..n).map(|a| grid.extent(a) * rng.gen_range(0.35..0.65)).collect();
        let s = grid.extent(0) * rng.gen_range(0.15..0.25);
        let v = DensityVolume::from_fn(grid.clone(), |x| {
            let r2: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
            (-r2 / (2.0 * s * s)).exp()
        })
        .unwrap();
        crate::volume::normalize_density(&v, 1e6, 0.1).unwrap()
    }

    fn smooth_perturbation(grid: &GridSpec, amp: f64, seed: u64) -> VectorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = grid.ndim();
        let coords = grid.coordinates();
        let comps = (0..n)
            .map(|_| {
                let k: Vec<f64> = (0..n).map(|a| rng.gen_range(0.5..2.0) / grid.extent(a)).collect();
                let ph = rng.gen_range(0.0..std::f64::consts::TAU);
                (0..grid.len())
                    .map(|v| {
                        let arg: f64 = (0..n).map(|a| std::f64::consts::TAU * k[a] * coords[a][v]).sum::<f64>() + ph;
                        amp * arg.sin()
                    })
                    .collect()
            })
            .collect();
        VectorField::new(grid.clone(), comps).unwrap()
    }

    #[test]
    fn identity_on_identical_pair_is_stationary() {
        let g = GridSpec::unit(&[8, 8, 8]).unwrap();
        let i0 = smooth_density(&g, 1);
        let id = VectorField::identity(&g);
        let w = Weights { lambda: 100.0, gamma: 6.5e4 };
        assert!(objective(&id, &i0, &i0, w).unwrap().abs() < 1e-12);
        let grad = el_gradient(&id, &i0, &i0, w).unwrap();
        assert!(grad.max_norm() < 1e-6);
    }

    #[test]
    fn identity_on_different_pair_is_pure_mass_term() {
        let g = GridSpec::unit(&[8, 8]).unwrap();
        let i0 = smooth_density(&g, 1);
        let i1 = smooth_density(&g, 2);
        let id = VectorField::identity(&g);
        let w = Weights { lambda: 100.0, gamma: 6.5e4 };
        let t = objective_terms(&id, &i0, &i1, w).unwrap();
        let want: f64 = 50.0
            * i0.values()
                .iter()
                .zip(i1.values())
                .map(|(a, b)| (b - a) * (b - a))
                .sum::<f64>();
        assert_eq!(t.transport, 0.0);
        assert!(t.curl.abs() < 1e-12);
        assert!((t.mass - want).abs() < 1e-9 * want);
    }

    #[test]
    fn constant_shift_transport_term() {
        let g = GridSpec::unit(&[16, 16]).unwrap();
        let i0 = DensityVolume::new(g.clone(), vec![1e6 / 256.0; 256]).unwrap();
        let mut f = VectorField::identity(&g);
        for (c, t) in f.components_mut().iter_mut().zip([0.3, -0.4]) {
            c.iter_mut().for_each(|x| *x += t);
        }
        let t = objective_terms(&f, &i0, &i0, Weights { lambda: 0.0, gamma: 0.0 }).unwrap();
        assert!((t.transport - 0.5 * 0.25 * 1e6).abs() < 1e-6);
        assert!((transport_cost(&f, &i0).unwrap() - 0.25 * 1e6).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_directional_finite_difference() {
        let g = GridSpec::unit(&[8, 8, 8]).unwrap();
        let w = Weights { lambda: 100.0, gamma: 6.5e4 };
        for seed in 0..4 {
            let i0 = smooth_density(&g, 10 + seed);
            let i1 = smooth_density(&g, 20 + seed);
            let mut f = VectorField::identity(&g);
            f.add_scaled(1.0, &smooth_perturbation(&g, 0.3, 30 + seed));
            let h = smooth_perturbation(&g, 1.0, 40 + seed);
            let eps = 1e-5;
            let mut fp = f.clone();
            fp.add_scaled(eps, &h);
            let mut fm = f.clone();
            fm.add_scaled(-eps, &h);
            let fd = (objective(&fp, &i0, &i1, w).unwrap() - objective(&fm, &i0, &i1, w).unwrap()) / (2.0 * eps);
            let an = el_gradient(&f, &i0, &i1, w).unwrap().dot(&h) * g.voxel_volume();
            assert!((fd - an).abs() <= 1e-3 * fd.abs(), "seed {seed}: fd {fd} analytic {an}");
        }
    }

    #[test]
    fn curl_only_configuration_isolates_terms() {
        let g = GridSpec::unit(&[8, 8, 8]).unwrap();
        let i0 = DensityVolume::new(g.clone(), vec![1e6 / 512.0; 512]).unwrap();
        let coords = g.coordinates();
        let mut f = VectorField::identity(&g);
        for v in 0..g.len() {
            f.components_mut()[0][v] -= 0.01 * coords[1][v];
            f.components_mut()[1][v] += 0.01 * coords[0][v];
        }
        let gamma = 6.5e4;
        let grad = el_gradient(&f, &i0, &i0, Weights { lambda: 0.0, gamma }).unwrap();
        let cc = curl_curl(&f);
        let disp = f.displacement();
        for a in 0..3 {
            for v in 0..g.len() {
                let want = disp.component(a)[v] * i0.values()[v] + gamma * cc.component(a)[v];
                assert!((grad.component(a)[v] - want).abs() < 1e-9 * want.abs().max(1.0));
            }
        }
    }
}
