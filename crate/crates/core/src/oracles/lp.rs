use std::collections::VecDeque;

use crate::error::{Result, TbmError};
use crate::volume::DensityVolume;

pub const DEFAULT_MAX_VOXELS: usize = 400;

#[derive(Clone, Copy, Debug)]
struct Arc {
    row: usize,
    col: usize,
    flow: f64,
}

/// Exact solution of the balanced transportation problem
/// `min sum c_ij x_ij` subject to row sums `supply` and column sums `demand`,
/// by the primal transportation simplex (u-v method) on a spanning-tree
/// basis. Returns the optimal cost and the positive flows.
pub fn transport_lp(supply: &[f64], demand: &[f64], cost: &dyn Fn(usize, usize) -> f64) -> Result<(f64, Vec<(usize, usize, f64)>)> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(TbmError::Infeasible("empty side".into()));
    }
    if supply.iter().chain(demand).any(|x| !x.is_finite() || *x < 0.0) {
        return Err(TbmError::Infeasible("negative or non-finite mass".into()));
    }
    let (ms, md) = (supply.iter().sum::<f64>(), demand.iter().sum::<f64>());
    if !(ms > 0.0) || (ms - md).abs() > 1e-9 * ms.max(md) {
        return Err(TbmError::Infeasible(format!("supply {ms:e} != demand {md:e}")));
    }
    let mut a = supply.to_vec();
    let mut b: Vec<f64> = demand.iter().map(|x| x * ms / md).collect();

    // North-west corner start: exactly m + n - 1 arcs, zero flows allowed.
    let mut arcs = Vec::with_capacity(m + n - 1);
    let (mut i, mut j) = (0, 0);
    while i < m && j < n {
        let x = a[i].min(b[j]);
        arcs.push(Arc { row: i, col: j, flow: x });
        a[i] -= x;
        b[j] -= x;
        if j + 1 == n || (i + 1 < m && a[i] == 0.0) {
            i += 1;
        } else {
            j += 1;
        }
    }
    debug_assert_eq!(arcs.len(), m + n - 1);

    let nodes = m + n;
    let cmax = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| cost(i, j).abs()).fold(0.0, f64::max);
    let tol = 1e-12 * cmax.max(1e-300);
    let mut pot = vec![0.0; nodes];
    let mut parent_arc = vec![usize::MAX; nodes];
    let mut depth = vec![0usize; nodes];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    let max_pivots = 50 * nodes * nodes;

    for _ in 0..max_pivots {
        for l in adj.iter_mut() {
            l.clear();
        }
        for (k, e) in arcs.iter().enumerate() {
            adj[e.row].push(k);
            adj[m + e.col].push(k);
        }
        // Potentials u_i + v_j = c_ij on the tree, rooted at row 0.
        parent_arc.iter_mut().for_each(|p| *p = usize::MAX);
        let mut seen = vec![false; nodes];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        pot[0] = 0.0;
        depth[0] = 0;
        while let Some(u) = queue.pop_front() {
            for &k in &adj[u] {
                let e = arcs[k];
                let w = if u < m { m + e.col } else { e.row };
                if !seen[w] {
                    seen[w] = true;
                    pot[w] = cost(e.row, e.col) - pot[u];
                    parent_arc[w] = k;
                    depth[w] = depth[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(TbmError::Infeasible("basis is not a spanning tree".into()));
        }

        // Dantzig pricing.
        let mut enter = None;
        let mut best = -tol;
        for i in 0..m {
            for j in 0..n {
                let r = cost(i, j) - pot[i] - pot[m + j];
                if r < best {
                    best = r;
                    enter = Some((i, j));
                }
            }
        }
        let Some((ei, ej)) = enter else {
            let total = arcs.iter().map(|e| e.flow * cost(e.row, e.col)).sum();
            let flows = arcs.iter().filter(|e| e.flow > 0.0).map(|e| (e.row, e.col, e.flow)).collect();
            return Ok((total, flows));
        };

        // Tree path between the two endpoints; arcs adjacent to either end
        // lose flow, then signs alternate toward the common ancestor.
        let (mut x, mut y) = (ei, m + ej);
        let (mut sx, mut sy) = (-1.0, -1.0);
        let mut cycle: Vec<(usize, f64)> = Vec::new();
        while x != y {
            if depth[x] >= depth[y] {
                let k = parent_arc[x];
                cycle.push((k, sx));
                sx = -sx;
                x = if x < m { m + arcs[k].col } else { arcs[k].row };
            } else {
                let k = parent_arc[y];
                cycle.push((k, sy));
                sy = -sy;
                y = if y < m { m + arcs[k].col } else { arcs[k].row };
            }
        }
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for &(k, s) in &cycle {
            if s < 0.0 && arcs[k].flow < theta {
                theta = arcs[k].flow;
                leave = k;
            }
        }
        for &(k, s) in &cycle {
            arcs[k].flow = (arcs[k].flow + s * theta).max(0.0);
        }
        arcs[leave] = Arc {
            row: ei,
            col: ej,
            flow: theta,
        };
    }
    Err(TbmError::Infeasible("pivot limit reached".into()))
}

fn lexicographic_le(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return x < y;
        }
    }
    true
}

/// Kantorovich optimal cost between two small densities with squared
/// Euclidean ground cost between voxel centers in world units. Masses are
/// `value * voxel volume`, as for [`crate::solver::transport_cost`].
pub fn kantorovich_lp(p: &DensityVolume, q: &DensityVolume, max_voxels: usize) -> Result<f64> {
    p.grid().ensure_matches(q.grid())?;
    let g = p.grid();
    if g.len() > max_voxels {
        return Err(TbmError::TooLarge {
            voxels: g.len(),
            cap: max_voxels,
        });
    }
    // Solve in a canonical orientation so that swapping the arguments
    // reproduces the same floating point result.
    let (a, b) = if lexicographic_le(p.values(), q.values()) { (p, q) } else { (q, p) };
    let dv = g.voxel_volume();
    let (ia, supply): (Vec<usize>, Vec<f64>) =
        a.values().iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(i, v)| (i, v * dv)).unzip();
    let (ib, demand): (Vec<usize>, Vec<f64>) =
        b.values().iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(i, v)| (i, v * dv)).unzip();
    let x = g.coordinates();
    let cost = |i: usize, j: usize| -> f64 {
        x.iter()
            .map(|c| {
                let d = c[ia[i]] - c[ib[j]];
                d * d
            })
            .sum()
    };
    Ok(transport_lp(&supply, &demand, &cost)?.0)
}
