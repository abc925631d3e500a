//! Multiscale accelerated descent on the penalized transport objective.

mod config;
mod nesterov;
mod objective;

pub use config::SolverConfig;
pub use nesterov::{
    enforce_diffeomorphism, momentum_coefficient, nesterov_step, DiffeoCheck, NesterovState, StepOutcome,
    MAX_HALVINGS,
};
pub use objective::{el_gradient, objective, objective_terms, transport_cost, ObjectiveTerms, Weights};

use std::fmt::Write as _;

use crate::calculus::{binomial_smooth, curl, determinant, jacobian, mean_curl_magnitude, VectorField};
use crate::error::Result;
use crate::grid::GridSpec;
use crate::volume::{resample, DensityVolume};

use objective::Problem;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    /// Global iteration counter across scales.
    pub iter: usize,
    /// Pyramid level, 0 = coarsest.
    pub scale: usize,
    pub rel_mse: f64,
    pub mean_curl: f64,
    pub cost: f64,
    /// Largest per-voxel displacement of the accepted update, world units.
    pub step: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveTrace {
    pub rows: Vec<TraceRow>,
}

impl SolveTrace {
    pub const CSV_HEADER: &'static str = "iter,scale,rel_mse,mean_curl,cost,step";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:e},{:e},{:e},{:e}",
                r.iter, r.scale, r.rel_mse, r.mean_curl, r.cost, r.step
            );
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    Stagnated,
    MaxIters,
    Stationary,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub map: VectorField,
    pub trace: SolveTrace,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub rel_mse: f64,
    pub mean_curl: f64,
    /// `sum |f - x|^2 I0 dV`.
    pub transport_cost: f64,
    /// Transport cost divided by the template's total mass.
    pub normalized_cost: f64,
    pub min_det: f64,
    /// Updates discarded by the diffeomorphism guard.
    pub rejected_steps: usize,
}

/// Relative MSE `sum (det(Df) I1(f) - I0)^2 / sum I0^2`.
pub fn relative_mse(f: &VectorField, i0: &DensityVolume, i1: &DensityVolume) -> Result<f64> {
    f.grid().ensure_matches(i0.grid())?;
    Ok(Problem::new(i0, i1)?.metrics(f).rel_mse)
}

/// Cubic upsampling of a map onto a finer grid covering the same extent:
/// the displacement is resampled axis by axis and the fine identity added
/// back. Fine voxel centers beyond the outermost coarse centers are linearly
/// extrapolated, so affine maps are reproduced everywhere.
pub fn upsample_map(f: &VectorField, fine: &GridSpec) -> VectorField {
    upsample_with(f, fine, true)
}

/// Multilinear counterpart of [`upsample_map`]. It cannot overshoot, so it
/// is the fallback when the cubic version folds.
pub fn upsample_map_linear(f: &VectorField, fine: &GridSpec) -> VectorField {
    upsample_with(f, fine, false)
}

fn upsample_with(f: &VectorField, fine: &GridSpec, cubic: bool) -> VectorField {
    let disp = f.displacement();
    let fine_id = VectorField::identity(fine);
    let comps: Vec<Vec<f64>> = disp
        .components()
        .iter()
        .zip(fine_id.components())
        .map(|(d, x)| {
            let mut dims = f.grid().dims().to_vec();
            let mut vals = d.clone();
            for axis in 0..dims.len() {
                vals = resample_axis(&vals, &dims, axis, f.grid().spacing()[axis], fine.dims()[axis], fine.spacing()[axis], cubic);
                dims[axis] = fine.dims()[axis];
            }
            vals.into_iter().zip(x).map(|(di, xi)| di + xi).collect()
        })
        .collect();
    VectorField::new(fine.clone(), comps).expect("upsampled map is finite")
}

/// Catmull-Rom resampling of row-major `v` along `axis` from `n` samples at
/// spacing `h` to `m` samples at spacing `hm`, both cell-centered.
fn resample_axis(v: &[f64], dims: &[usize], axis: usize, h: f64, m: usize, hm: f64, cubic: bool) -> Vec<f64> {
    let n = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let taps: Vec<(isize, [f64; 4], f64)> = (0..m)
        .map(|j| {
            let u = ((j as f64 + 0.5) * hm) / h - 0.5;
            if u <= 0.0 {
                (-1, [0.0; 4], u)
            } else if u >= (n - 1) as f64 {
                (-2, [0.0; 4], u - (n - 1) as f64)
            } else {
                let l = (u.floor() as usize).min(n - 2);
                let t = u - l as f64;
                if !cubic {
                    return (l as isize, [0.0, 1.0 - t, t, 0.0], 0.0);
                }
                let (t2, t3) = (t * t, t * t * t);
                let w = [
                    0.5 * (-t3 + 2.0 * t2 - t),
                    0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
                    0.5 * (-3.0 * t3 + 4.0 * t2 + t),
                    0.5 * (t3 - t2),
                ];
                (l as isize, w, 0.0)
            }
        })
        .collect();
    let mut out = vec![0.0; outer * m * inner];
    let mut line = vec![0.0; n];
    for o in 0..outer {
        for i in 0..inner {
            for (k, x) in line.iter_mut().enumerate() {
                *x = v[(o * n + k) * inner + i];
            }
            let at = |k: isize| -> f64 {
                // Linear ghosts one sample beyond either end.
                if k < 0 {
                    2.0 * line[0] - line[1]
                } else if k as usize >= n {
                    2.0 * line[n - 1] - line[n - 2]
                } else {
                    line[k as usize]
                }
            };
            for (j, (l, w, e)) in taps.iter().enumerate() {
                let val = match *l {
                    -1 => line[0] + e * (line[1] - line[0]),
                    -2 => line[n - 1] + e * (line[n - 1] - line[n - 2]),
                    l => (0..4).map(|q| w[q] * at(l - 1 + q as isize)).sum(),
                };
                out[(o * m + j) * inner + i] = val;
            }
        }
    }
    out
}

fn min_det_of(f: &VectorField) -> f64 {
    determinant(&jacobian(f)).into_iter().fold(f64::INFINITY, f64::min)
}

fn mean_magnitude(c: &[Vec<f64>]) -> f64 {
    let n = c[0].len();
    (0..n).map(|v| c.iter().map(|ci| ci[v] * ci[v]).sum::<f64>().sqrt()).sum::<f64>() / n as f64
}

fn stagnated(best_history: &[f64], cfg: &SolverConfig) -> bool {
    let w = cfg.stagnation_window;
    let n = best_history.len();
    n > w && best_history[n - 1 - w] - best_history[n - 1] <= cfg.stagnation_tolerance * best_history[n - 1].abs()
}

struct ScaleOutcome {
    best: VectorField,
    best_mse: f64,
    reason: StopReason,
    rejected: usize,
}

fn solve_scale(
    problem: &Problem<'_>,
    start: VectorField,
    cfg: &SolverConfig,
    scale: usize,
    curl_target: Option<f64>,
    trace: &mut SolveTrace,
) -> ScaleOutcome {
    let max_disp = cfg.max_step_voxels * problem.i0.grid().min_spacing();
    let initial = problem.metrics(&start).rel_mse;
    let mut best = start.clone();
    let mut best_mse = initial;
    let mut rejected = 0;
    let mut iter_base = trace.rows.last().map_or(0, |r| r.iter);
    trace.rows.push(TraceRow {
        iter: iter_base,
        scale,
        rel_mse: initial,
        mean_curl: mean_curl_magnitude(&start),
        cost: problem.transport_cost(&start),
        step: 0.0,
    });
    if initial <= cfg.mse_termination && curl_target.is_none_or(|t| trace.rows.last().expect("pushed").mean_curl <= t) {
        return ScaleOutcome {
            best,
            best_mse,
            reason: StopReason::Converged,
            rejected,
        };
    }
    iter_base += 1;

    let mut state = NesterovState::new(start);
    let mut gamma_active = cfg.gamma_activation_fraction >= 1.0;
    // Past the MSE target only the curl target remains, so the curl penalty
    // must be on.
    let activation_floor = if curl_target.is_some() { cfg.mse_termination } else { 0.0 };
    let mut best_objective = f64::INFINITY;
    let mut history = Vec::with_capacity(cfg.max_iters.min(1 << 16));
    let mut reason = StopReason::MaxIters;

    for it in 0..cfg.max_iters {
        let look = state.lookahead();
        let grad = binomial_smooth(&problem.gradient(&look, cfg.weights(gamma_active)));
        let step = nesterov_step(&state, &look, &grad, max_disp);
        if step.stationary {
            reason = StopReason::Stationary;
            break;
        }
        let check = enforce_diffeomorphism(&step.state.current, &state.current, cfg.diffeo_min_det);
        if check.rejected {
            rejected += 1;
            state = NesterovState::new(state.current);
            history.push(best_objective);
            if stagnated(&history, cfg) {
                reason = StopReason::Stagnated;
                break;
            }
            continue;
        }
        let mut moved = check.field.clone();
        moved.add_scaled(-1.0, &state.current);
        state = NesterovState {
            previous: state.current,
            current: check.field,
            k: step.state.k,
        };

        let m = problem.metrics(&state.current);
        let c = curl(&state.current);
        let mean_curl = mean_magnitude(&c);
        let cost = problem.transport_cost(&state.current);
        trace.rows.push(TraceRow {
            iter: iter_base + it,
            scale,
            rel_mse: m.rel_mse,
            mean_curl,
            cost,
            step: moved.max_norm(),
        });
        match curl_target {
            None => {
                if m.rel_mse < best_mse {
                    best_mse = m.rel_mse;
                    best = state.current.clone();
                }
                if best_mse <= cfg.mse_termination {
                    reason = StopReason::Converged;
                    break;
                }
            }
            Some(t) => {
                if m.rel_mse <= cfg.mse_termination && mean_curl <= t {
                    best_mse = m.rel_mse;
                    best = state.current.clone();
                    reason = StopReason::Converged;
                    break;
                }
                if m.rel_mse < best_mse {
                    best_mse = m.rel_mse;
                    best = state.current.clone();
                }
            }
        }
        if !gamma_active && m.rel_mse <= (cfg.gamma_activation_fraction * initial).max(activation_floor) {
            // The objective changes with the weights; stagnation restarts.
            gamma_active = true;
            best_objective = f64::INFINITY;
            history.clear();
        }
        let w = cfg.weights(gamma_active);
        let curl_sq: f64 = c.iter().flatten().map(|x| x * x).sum();
        let value = 0.5 * (cost + (w.gamma * curl_sq + w.lambda * m.residual_sq) * problem.i0.grid().voxel_volume());
        best_objective = best_objective.min(value);
        history.push(best_objective);
        if stagnated(&history, cfg) {
            reason = StopReason::Stagnated;
            break;
        }
    }
    ScaleOutcome {
        best,
        best_mse,
        reason,
        rejected,
    }
}

/// Pyramid of `(template, subject)` pairs, finest first.
fn pyramid(i0: &DensityVolume, i1: &DensityVolume, scales: usize) -> Result<Vec<(DensityVolume, DensityVolume)>> {
    let mut levels = vec![(i0.clone(), i1.clone())];
    while levels.len() < scales {
        let (a, b) = levels.last().expect("non-empty");
        let Some(coarse) = a.grid().coarsened() else {
            break;
        };
        let next = (resample(a, coarse.dims())?, resample(b, coarse.dims())?);
        levels.push(next);
    }
    Ok(levels)
}

/// Computes a transport map from `i0` (template) to `i1` (subject): a map `f`
/// with `det(Df) I1(f) ~ I0` and small transport cost.
pub fn solve(i0: &DensityVolume, i1: &DensityVolume, cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    i0.grid().ensure_matches(i1.grid())?;
    let levels = pyramid(i0, i1, cfg.scales)?;
    let mut trace = SolveTrace::default();
    let mut map: Option<VectorField> = None;
    let mut reason = StopReason::MaxIters;
    let mut rejected = 0;
    for (scale, (a, b)) in levels.iter().rev().enumerate() {
        let identity = VectorField::identity(a.grid());
        let start = match map.take() {
            None => identity,
            // Cubic upsampling can fold a map that was valid on the coarse grid.
            Some(coarse) => {
                let mut up = upsample_map(&coarse, a.grid());
                if min_det_of(&up) <= cfg.diffeo_min_det {
                    up = upsample_map_linear(&coarse, a.grid());
                }
                enforce_diffeomorphism(&up, &identity, cfg.diffeo_min_det).field
            }
        };
        let problem = Problem::new(a, b)?;
        let curl_target = if scale + 1 == levels.len() { cfg.curl_termination } else { None };
        let out = solve_scale(&problem, start, cfg, scale, curl_target, &mut trace);
        rejected += out.rejected;
        reason = out.reason;
        map = Some(out.best);
        let _ = out.best_mse;
    }
    let map = map.expect("at least one level");
    let problem = Problem::new(i0, i1)?;
    let m = problem.metrics(&map);
    let cost = problem.transport_cost(&map);
    Ok(SolveResult {
        converged: m.rel_mse <= cfg.mse_termination
            && cfg.curl_termination.is_none_or(|t| mean_curl_magnitude(&map) <= t),
        stop_reason: reason,
        rel_mse: m.rel_mse,
        mean_curl: mean_curl_magnitude(&map),
        transport_cost: cost,
        normalized_cost: cost / i0.total_mass(),
        min_det: m.min_det,
        rejected_steps: rejected,
        trace,
        map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::normalize_density;

    fn gaussian(grid: &GridSpec, center: &[f64], sigma: f64) -> DensityVolume {
        let v = DensityVolume::from_fn(grid.clone(), |x| {
            let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            (-r2 / (2.0 * sigma * sigma)).exp()
        })
        .unwrap();
        normalize_density(&v, 1e6, 0.1).unwrap()
    }

    #[test]
    fn identical_pair_converges_immediately() {
        let g = GridSpec::unit(&[32, 32]).unwrap();
        let i0 = gaussian(&g, &[16.0, 16.0], 5.0);
        let r = solve(&i0, &i0, &SolverConfig::default()).unwrap();
        assert!(r.converged);
        assert!(r.transport_cost <= 1e-8 * i0.total_mass());
        assert_eq!(r.map, VectorField::identity(&g));
    }

    #[test]
    fn trace_csv_layout() {
        let t = SolveTrace {
            rows: vec![TraceRow { iter: 3, scale: 1, rel_mse: 0.5, mean_curl: 0.0, cost: 2.0, step: 0.01 }],
        };
        let csv = t.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("iter,scale,rel_mse,mean_curl,cost,step"));
        assert_eq!(lines.next(), Some("3,1,5e-1,0e0,2e0,1e-2"));
    }

    #[test]
    fn upsampling_reproduces_affine_maps_to_the_edge() {
        let g = GridSpec::new(&[16, 12], &[0.5, 1.0]).unwrap();
        let c = g.coarsened().unwrap();
        let mut f = VectorField::identity(&c);
        let x = c.coordinates();
        for (v, (a, b)) in x[0].iter().zip(&x[1]).enumerate() {
            f.components_mut()[0][v] += 0.3 + 0.02 * a - 0.01 * b;
            f.components_mut()[1][v] += -0.2 + 0.015 * a;
        }
        let up = upsample_map(&f, &g);
        let xf = g.coordinates();
        for (v, (a, b)) in xf[0].iter().zip(&xf[1]).enumerate() {
            assert!((up.components()[0][v] - (a + 0.3 + 0.02 * a - 0.01 * b)).abs() < 1e-12);
            assert!((up.components()[1][v] - (b - 0.2 + 0.015 * a)).abs() < 1e-12);
        }
    }

    #[test]
    fn upsampling_preserves_translations() {
        let g = GridSpec::unit(&[16, 16]).unwrap();
        let c = g.coarsened().unwrap();
        let mut f = VectorField::identity(&c);
        for comp in f.components_mut() {
            comp.iter_mut().for_each(|x| *x += 1.5);
        }
        let up = upsample_map(&f, &g);
        let d = up.displacement();
        for comp in d.components() {
            assert!(comp.iter().all(|x| (x - 1.5).abs() < 1e-12));
        }
    }
}
