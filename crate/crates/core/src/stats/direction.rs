use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{full_rank, permutation_test, reduce, Cohort, Reduced};
use crate::error::{Result, TbmError};

/// A direction in data space with the subjects' projections on it.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionResult {
    /// Unit direction in data space.
    pub direction: Vec<f64>,
    /// The same direction in reduced coordinates.
    pub reduced: Vec<f64>,
    /// Projection of every centered subject on the direction.
    pub scores: Vec<f64>,
    /// Pearson r for regression, the generalized Rayleigh quotient for PLDA.
    pub statistic: f64,
    pub p_value: Option<f64>,
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

fn finish(red: &Reduced, w: DVector<f64>, statistic: f64) -> DirectionResult {
    let scores = red.scores.tr_mul(&w);
    DirectionResult {
        direction: red.lift_direction(&w).iter().copied().collect(),
        reduced: w.iter().copied().collect(),
        scores: scores.iter().copied().collect(),
        statistic,
        p_value: None,
    }
}

/// `w = Z v / |Z v|` on centered reduced data `Z` and centered `v`, with
/// the Pearson correlation of the projections.
fn correlation_core(z: &DMatrix<f64>, v: &[f64]) -> Result<(DVector<f64>, f64)> {
    if v.len() != z.ncols() {
        return Err(TbmError::InvalidCohort("covariate length does not match the cohort".into()));
    }
    if v.iter().all(|x| *x == v[0]) {
        return Err(TbmError::ConstantCovariate);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let vc = DVector::from_iterator(v.len(), v.iter().map(|x| x - m));
    let zv = z * &vc;
    let norm = zv.norm();
    if norm == 0.0 {
        return Err(TbmError::InvalidCohort("no direction correlates with the covariate".into()));
    }
    let w = zv / norm;
    let s: Vec<f64> = z.tr_mul(&w).iter().copied().collect();
    Ok((w, pearson(&s, v)))
}

fn covariate_of(cohort: &Cohort) -> Result<&[f64]> {
    cohort
        .covariate()
        .ok_or_else(|| TbmError::InvalidCohort("cohort has no covariate".into()))
}

fn labels_of(cohort: &Cohort) -> Result<&[usize]> {
    cohort
        .labels()
        .ok_or_else(|| TbmError::DegenerateLabels("cohort has no labels".into()))
}

/// Direction in the reduced space whose projections correlate best with `v`.
pub fn correlation_in(red: &Reduced, v: &[f64]) -> Result<DirectionResult> {
    let (w, r) = correlation_core(&red.scores, v)?;
    Ok(finish(red, w, r))
}

/// Maximally correlated direction using the full-rank reduction.
pub fn correlation_direction(cohort: &Cohort) -> Result<DirectionResult> {
    let red = reduce(cohort, full_rank(cohort))?;
    correlation_in(&red, covariate_of(cohort)?)
}

/// [`correlation_direction`] with a covariate-permutation p-value.
pub fn correlation_test(cohort: &Cohort, trials: usize, seed: u64) -> Result<DirectionResult> {
    let red = reduce(cohort, full_rank(cohort))?;
    let v = covariate_of(cohort)?;
    let mut out = correlation_in(&red, v)?;
    let stat = |p: &[f64]| correlation_core(&red.scores, p).map_or(f64::NEG_INFINITY, |x| x.1);
    let (_, p) = permutation_test(v, stat, trials, seed)?;
    out.p_value = Some(p);
    Ok(out)
}

/// Top generalized eigenvector of `S_T w = mu (S_W + alpha I) w` on reduced
/// data, oriented so that the last class scores above the first.
fn plda_core(z: &DMatrix<f64>, labels: &[usize], alpha: f64) -> Result<(DVector<f64>, f64)> {
    let (r, k) = z.shape();
    if labels.len() != k {
        return Err(TbmError::DegenerateLabels(format!("{} labels for {k} subjects", labels.len())));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(TbmError::DegenerateLabels("at least two classes are required".into()));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(TbmError::InvalidConfig(format!("alpha must be >= 0, got {alpha}")));
    }
    let kf = k as f64;
    let st = z * z.transpose() / kf;
    let mut sw = DMatrix::zeros(r, r);
    let mut means = Vec::with_capacity(classes.len());
    for &c in &classes {
        let idx: Vec<usize> = (0..k).filter(|&i| labels[i] == c).collect();
        let mut mu = DVector::zeros(r);
        for &i in &idx {
            mu += z.column(i);
        }
        mu /= idx.len() as f64;
        for &i in &idx {
            let d = z.column(i) - &mu;
            sw += &d * d.transpose();
        }
        means.push(mu);
    }
    sw /= kf;
    if alpha == 0.0 {
        let ev = SymmetricEigen::new(sw.clone()).eigenvalues;
        let scale = ev.amax().max(f64::MIN_POSITIVE);
        if ev.min() <= 1e-12 * scale {
            return Err(TbmError::SingularPenalty);
        }
    }
    let a = &sw + DMatrix::identity(r, r) * alpha;
    let chol = a.cholesky().ok_or(TbmError::SingularPenalty)?;
    let l = chol.l();
    let b = l.solve_lower_triangular(&st).ok_or(TbmError::SingularPenalty)?;
    let m = l.solve_lower_triangular(&b.transpose()).ok_or(TbmError::SingularPenalty)?;
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let top = eig.eigenvalues.imax();
    let y = eig.eigenvectors.column(top).into_owned();
    let mut w = l.transpose().solve_upper_triangular(&y).ok_or(TbmError::SingularPenalty)?;
    w /= w.norm();
    let gap = (&means[means.len() - 1] - &means[0]).dot(&w);
    if gap < 0.0 {
        w.neg_mut();
    }
    Ok((w, eig.eigenvalues[top]))
}

pub fn plda_in(red: &Reduced, labels: &[usize], alpha: f64) -> Result<DirectionResult> {
    let (w, mu) = plda_core(&red.scores, labels, alpha)?;
    Ok(finish(red, w, mu))
}

/// Penalized LDA direction using the full-rank reduction.
pub fn plda(cohort: &Cohort, alpha: f64) -> Result<DirectionResult> {
    let red = reduce(cohort, full_rank(cohort))?;
    plda_in(&red, labels_of(cohort)?, alpha)
}

/// [`plda`] with a label-permutation p-value on the Rayleigh quotient.
pub fn plda_test(cohort: &Cohort, alpha: f64, trials: usize, seed: u64) -> Result<DirectionResult> {
    let red = reduce(cohort, full_rank(cohort))?;
    let labels = labels_of(cohort)?;
    let mut out = plda_in(&red, labels, alpha)?;
    let stat = |p: &[usize]| plda_core(&red.scores, p, alpha).map_or(f64::NEG_INFINITY, |x| x.1);
    let (_, p) = permutation_test(labels, stat, trials, seed)?;
    out.p_value = Some(p);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaScanRow {
    pub alpha_from: f64,
    pub alpha_to: f64,
    /// Principal angle between the two directions, radians.
    pub angle: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlphaScan {
    pub rows: Vec<AlphaScanRow>,
    pub warnings: Vec<String>,
}

impl AlphaScan {
    pub const CSV_HEADER: &'static str = "alpha_from,alpha_to,angle";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            s.push_str(&format!("{:e},{:e},{:e}\n", r.alpha_from, r.alpha_to, r.angle));
        }
        s
    }
}

/// Angle between PLDA directions at consecutive penalties. Penalties whose
/// system is singular are skipped with a warning.
pub fn alpha_stability_scan(cohort: &Cohort, alphas: &[f64]) -> Result<AlphaScan> {
    if alphas.len() < 2 {
        return Err(TbmError::InvalidConfig("alpha scan needs at least two values".into()));
    }
    let red = reduce(cohort, full_rank(cohort))?;
    let labels = labels_of(cohort)?;
    let mut scan = AlphaScan::default();
    let mut prev: Option<(f64, DVector<f64>)> = None;
    for &a in alphas {
        match plda_core(&red.scores, labels, a) {
            Ok((w, _)) => {
                if let Some((pa, pw)) = &prev {
                    let c = pw.dot(&w).abs().min(1.0);
                    scan.rows.push(AlphaScanRow {
                        alpha_from: *pa,
                        alpha_to: a,
                        angle: c.acos(),
                    });
                }
                prev = Some((a, w));
            }
            Err(TbmError::SingularPenalty) => {
                scan.warnings.push(format!("alpha {a:e}: within-class scatter is singular, skipped"));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(scan)
}

#[cfg(test)]
mod tests {
    use super::super::pca;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("s{i}")).collect()
    }

    fn noise_cols(d: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..k).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn single_feature_equal_to_the_covariate() {
        let v: Vec<f64> = (0..8).map(|i| (i * i) as f64).collect();
        let cols: Vec<Vec<f64>> = v.iter().map(|&x| vec![0.0, x, 0.0]).collect();
        let c = Cohort::new(ids(8), &cols).unwrap().with_covariate(v).unwrap();
        let r = correlation_direction(&c).unwrap();
        assert!((r.statistic - 1.0).abs() < 1e-12);
        assert!((r.direction[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn direction_dominates_random_unit_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cols = noise_cols(6, 12, &mut rng);
        let v: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..1.0)).collect();
        let c = Cohort::new(ids(12), &cols).unwrap().with_covariate(v.clone()).unwrap();
        let r = correlation_direction(&c).unwrap();
        let x = c.data();
        let mean = c.mean();
        let vm = v.iter().sum::<f64>() / 12.0;
        let objective = |w: &[f64]| -> f64 {
            let w = DVector::from_column_slice(w);
            let s: f64 = (0..12).map(|k| (x.column(k) - &mean).dot(&w) * (v[k] - vm)).sum();
            s / w.norm()
        };
        let best = objective(&r.direction);
        for _ in 0..100 {
            let w: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert!(objective(&w) <= best + 1e-12);
        }
    }

    #[test]
    fn pearson_is_invariant_to_affine_covariate_changes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cols = noise_cols(5, 10, &mut rng);
        let v: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..1.0)).collect();
        let base = Cohort::new(ids(10), &cols).unwrap();
        let a = correlation_direction(&base.clone().with_covariate(v.clone()).unwrap()).unwrap();
        let w: Vec<f64> = v.iter().map(|x| 3.5 * x - 2.0).collect();
        let b = correlation_direction(&base.with_covariate(w).unwrap()).unwrap();
        assert!((a.statistic - b.statistic).abs() < 1e-12);
        for (x, y) in a.direction.iter().zip(&b.direction) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_covariate_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = Cohort::new(ids(5), &noise_cols(3, 5, &mut rng)).unwrap().with_covariate(vec![2.0; 5]).unwrap();
        assert!(matches!(correlation_direction(&c), Err(TbmError::ConstantCovariate)));
    }

    fn two_class(d: usize, k: usize, gap: f64, seed: u64) -> Cohort {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cols = noise_cols(d, k, &mut rng);
        let labels: Vec<usize> = (0..k).map(|i| i % 2).collect();
        for (c, &l) in cols.iter_mut().zip(&labels) {
            c[0] += if l == 1 { gap } else { -gap };
        }
        Cohort::new(ids(k), &cols).unwrap().with_labels(labels).unwrap()
    }

    #[test]
    fn separated_classes_get_disjoint_scores() {
        let c = two_class(4, 20, 3.0, 2);
        let r = plda(&c, 1e-3).unwrap();
        let labels = c.labels().unwrap();
        let max0 = r.scores.iter().zip(labels).filter(|(_, &l)| l == 0).map(|(s, _)| *s).fold(f64::MIN, f64::max);
        let min1 = r.scores.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(s, _)| *s).fold(f64::MAX, f64::min);
        assert!(min1 > max0);
    }

    #[test]
    fn large_penalty_recovers_the_first_component() {
        let c = two_class(6, 16, 0.5, 3);
        let red = reduce(&c, full_rank(&c)).unwrap();
        let z = &red.scores;
        let labels = c.labels().unwrap();
        // Trace of the within-class scatter sets the penalty scale.
        let mut tr = 0.0;
        for cl in 0..2 {
            let idx: Vec<usize> = (0..16).filter(|&i| labels[i] == cl).collect();
            let mut mu = DVector::zeros(z.nrows());
            for &i in &idx {
                mu += z.column(i);
            }
            mu /= idx.len() as f64;
            tr += idx.iter().map(|&i| (z.column(i) - &mu).norm_squared()).sum::<f64>() / 16.0;
        }
        let r = plda(&c, 1e9 * tr).unwrap();
        let pc1 = pca(&c, 1).unwrap();
        let dot: f64 = r.direction.iter().zip(pc1.components.column(0).iter()).map(|(a, b)| a * b).sum();
        assert!(dot.abs().min(1.0).acos() <= 1e-3);
    }

    #[test]
    fn scores_are_invariant_under_basis_rotation() {
        let c = two_class(5, 12, 1.0, 8);
        let red = reduce(&c, full_rank(&c)).unwrap();
        let labels = c.labels().unwrap();
        let a = plda_in(&red, labels, 0.1).unwrap();
        let r = red.rank();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = DMatrix::from_fn(r, r, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
        let rotated = Reduced {
            mean: red.mean.clone(),
            basis: &red.basis * &q,
            scores: q.transpose() * &red.scores,
            variances: red.variances.clone(),
        };
        let b = plda_in(&rotated, labels, 0.1).unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()), "{x} {y}");
        }
    }

    #[test]
    fn singular_scatter_needs_a_penalty() {
        // Fewer subjects per class than dimensions: S_W is singular in the
        // full-rank reduction.
        let c = two_class(10, 6, 1.0, 4);
        assert!(matches!(plda(&c, 0.0), Err(TbmError::SingularPenalty)));
        let scan = alpha_stability_scan(&c, &[0.0, 1.0, 10.0]).unwrap();
        assert_eq!(scan.warnings.len(), 1);
        assert_eq!(scan.rows.len(), 1);
    }

    #[test]
    fn degenerate_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = Cohort::new(ids(4), &noise_cols(3, 4, &mut rng)).unwrap().with_labels(vec![1; 4]).unwrap();
        assert!(matches!(plda(&c, 1.0), Err(TbmError::DegenerateLabels(_))));
    }

    #[test]
    fn repeated_alpha_has_zero_angle() {
        let c = two_class(4, 12, 1.0, 5);
        let scan = alpha_stability_scan(&c, &[0.5, 0.5]).unwrap();
        assert_eq!(scan.rows[0].angle, 0.0);
        assert!(scan.to_csv().starts_with("alpha_from,alpha_to,angle\n"));
    }

    #[test]
    fn angles_decay_at_large_alpha() {
        let c = two_class(6, 24, 2.0, 9);
        let alphas: Vec<f64> = (-3..=6).map(|e| 10f64.powi(e)).collect();
        let scan = alpha_stability_scan(&c, &alphas).unwrap();
        let last = scan.rows.last().unwrap().angle;
        let first = scan.rows.iter().map(|r| r.angle).fold(0.0, f64::max);
        assert!(last < 1e-3 && last < first);
    }
}
