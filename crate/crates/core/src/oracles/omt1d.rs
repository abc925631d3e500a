use crate::error::{Result, TbmError};

/// Closed-form 1D transport between two densities sampled at voxel centers
/// `(i + 0.5) h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Omt1d {
    /// `f(x_i)` at every voxel center.
    pub map: Vec<f64>,
    /// `sum (f(x) - x)^2 p(x) h`, the convention of the solver's transport
    /// cost.
    pub cost: f64,
    /// Exact transport cost between the piecewise constant densities.
    pub exact_cost: f64,
}

fn cumulative(v: &[f64], h: f64) -> Vec<f64> {
    let mut c = Vec::with_capacity(v.len() + 1);
    let mut acc = 0.0;
    c.push(0.0);
    for x in v {
        acc += x * h;
        c.push(acc);
    }
    c
}

/// Monotone rearrangement `f = Q^-1 o P`. Each density is constant on its
/// voxel, so both CDFs are piecewise linear and inverted exactly.
pub fn omt_1d(p: &[f64], q: &[f64], h: f64) -> Result<Omt1d> {
    if p.is_empty() || q.is_empty() || !(h > 0.0) {
        return Err(TbmError::InvalidVolume("empty 1D density or bad spacing".into()));
    }
    if let Some(i) = p.iter().chain(q).position(|x| !x.is_finite() || *x < 0.0) {
        return Err(TbmError::NonFiniteInput(i));
    }
    let cp = cumulative(p, h);
    let mut cq = cumulative(q, h);
    let (mp, mq) = (cp[p.len()], cq[q.len()]);
    if !(mp > 0.0) || (mp - mq).abs() > 1e-9 * mp.max(mq) {
        return Err(TbmError::MassMismatch(mp, mq));
    }
    let s = mp / mq;
    cq.iter_mut().for_each(|c| *c *= s);

    let mut k = 0;
    let mut map = Vec::with_capacity(p.len());
    let mut cost = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        let m = cp[i] + 0.5 * pi * h;
        // First cell whose upper cumulative mass reaches m; skips empty cells.
        while k + 1 < q.len() && cq[k + 1] < m {
            k += 1;
        }
        let w = cq[k + 1] - cq[k];
        let y = if w > 0.0 {
            (k as f64 + ((m - cq[k]) / w).clamp(0.0, 1.0)) * h
        } else {
            (k as f64 + 1.0) * h
        };
        let x = (i as f64 + 0.5) * h;
        cost += (y - x) * (y - x) * pi * h;
        map.push(y);
    }
    let exact_cost = exact_step_cost(p, q, &cp, &cq, h);
    Ok(Omt1d { map, cost, exact_cost })
}

/// Integrates `(y(m) - x(m))^2 dm` over mass levels. Between consecutive
/// breakpoints of either CDF both positions are linear in `m`, so each
/// piece is integrated exactly.
fn exact_step_cost(p: &[f64], q: &[f64], cp: &[f64], cq: &[f64], h: f64) -> f64 {
    let pos = |c: &[f64], v: &[f64], k: usize, m: f64| {
        if v[k] > 0.0 {
            (k as f64 + (m - c[k]) / (v[k] * h)) * h
        } else {
            k as f64 * h
        }
    };
    let total = cp[p.len()];
    let (mut i, mut k) = (0, 0);
    let mut lo = 0.0;
    let mut acc = 0.0;
    while lo < total {
        while i + 1 < p.len() && cp[i + 1] <= lo {
            i += 1;
        }
        while k + 1 < q.len() && cq[k + 1] <= lo {
            k += 1;
        }
        let hi = cp[i + 1].min(cq[k + 1]).min(total);
        if hi <= lo {
            break;
        }
        let da = pos(cq, q, k, lo) - pos(cp, p, i, lo);
        let db = pos(cq, q, k, hi) - pos(cp, p, i, hi);
        acc += (hi - lo) * (da * da + da * db + db * db) / 3.0;
        lo = hi;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(n: usize, c: f64, s: f64) -> Vec<f64> {
        (0..n).map(|i| (-((i as f64 + 0.5 - c) / s).powi(2) / 2.0).exp()).collect()
    }

    fn with_mass(v: Vec<f64>, m: f64) -> Vec<f64> {
        let t: f64 = v.iter().sum();
        v.into_iter().map(|x| x * m / t).collect()
    }

    #[test]
    fn identical_densities_give_identity() {
        let p = with_mass(gaussian(64, 30.0, 6.0), 1.0);
        let r = omt_1d(&p, &p, 1.0).unwrap();
        for (i, y) in r.map.iter().enumerate() {
            assert!((y - (i as f64 + 0.5)).abs() < 1e-9);
        }
        assert!(r.cost < 1e-15);
    }

    #[test]
    fn shift_is_recovered() {
        let p = gaussian(128, 50.0, 6.0);
        let mut q = vec![0.0; 128];
        q[7..].copy_from_slice(&p[..121]);
        let r = omt_1d(&p, &q, 1.0).unwrap();
        let mass: f64 = p.iter().sum();
        assert!((r.cost - 49.0 * mass).abs() < 1e-6 * mass);
    }

    #[test]
    fn gaussian_dilation_cost() {
        let p = with_mass(gaussian(256, 128.0, 5.0), 1.0);
        let q = with_mass(gaussian(256, 128.0, 10.0), 1.0);
        let r = omt_1d(&p, &q, 1.0).unwrap();
        assert!((r.exact_cost - 25.0).abs() < 0.01 * 25.0, "{}", r.exact_cost);
        // Midpoint quadrature converges at second order.
        assert!((r.cost - 25.0).abs() < 0.02 * 25.0, "{}", r.cost);
        // Slope two about the center.
        let d = r.map[140] - r.map[116];
        assert!((d - 48.0).abs() < 0.5, "{d}");
    }

    #[test]
    fn mass_mismatch_is_rejected() {
        let p = vec![1.0; 8];
        let q = vec![1.1; 8];
        assert!(matches!(omt_1d(&p, &q, 1.0), Err(TbmError::MassMismatch(..))));
    }

    #[test]
    fn spacing_scales_the_cost() {
        let p = with_mass(gaussian(64, 20.0, 4.0), 1.0);
        let q = with_mass(gaussian(64, 40.0, 6.0), 1.0);
        let a = omt_1d(&p, &q, 1.0).unwrap().cost;
        let pb: Vec<f64> = p.iter().map(|x| x / 0.5).collect();
        let qb: Vec<f64> = q.iter().map(|x| x / 0.5).collect();
        let b = omt_1d(&pb, &qb, 0.5).unwrap().cost;
        assert!((b - 0.25 * a).abs() < 1e-12 * a);
    }
}
