//! Linear statistics in transport space.
//!
//! Every model works on the rank-reduced data matrix: the centered columns
//! are projected on the leading eigenvectors of the covariance, obtained
//! from the small `K x K` Gram matrix instead of the `d x d` covariance.

mod covariates;
mod direction;
mod permutation;

pub use covariates::{parse_covariates, read_covariates, CovariateRecord};
pub use direction::{
    alpha_stability_scan, correlation_direction, correlation_test, pearson, plda, plda_test, AlphaScan, AlphaScanRow,
    DirectionResult,
};
pub use permutation::permutation_test;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, TbmError};
use crate::lot::LotEmbedding;

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOLERANCE: f64 = 1e-12;

/// Data matrix `X` (`d x K`, one column per subject) with optional
/// covariate and class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    ids: Vec<String>,
    x: DMatrix<f64>,
    covariate: Option<Vec<f64>>,
    labels: Option<Vec<usize>>,
}

impl Cohort {
    pub fn new(ids: Vec<String>, columns: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = columns.first() else {
            return Err(TbmError::EmptyCohort);
        };
        if ids.len() != columns.len() {
            return Err(TbmError::InvalidCohort(format!("{} ids for {} subjects", ids.len(), columns.len())));
        }
        let d = first.len();
        if d == 0 || columns.iter().any(|c| c.len() != d) {
            return Err(TbmError::InvalidCohort("subjects have inconsistent dimension".into()));
        }
        if let Some(i) = columns.iter().flatten().position(|x| !x.is_finite()) {
            return Err(TbmError::NonFiniteInput(i));
        }
        let x = DMatrix::from_fn(d, columns.len(), |i, k| columns[k][i]);
        Ok(Self {
            ids,
            x,
            covariate: None,
            labels: None,
        })
    }

    pub fn from_embeddings(ids: Vec<String>, embeddings: &[LotEmbedding]) -> Result<Self> {
        if let Some(e) = embeddings.first() {
            for o in embeddings {
                e.grid().ensure_matches(o.grid())?;
            }
        }
        let cols: Vec<Vec<f64>> = embeddings.iter().map(LotEmbedding::to_vector).collect();
        Self::new(ids, &cols)
    }

    pub fn with_covariate(mut self, v: Vec<f64>) -> Result<Self> {
        if v.len() != self.len() {
            return Err(TbmError::InvalidCohort(format!("{} covariate values for {} subjects", v.len(), self.len())));
        }
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(TbmError::NonFiniteInput(i));
        }
        self.covariate = Some(v);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(TbmError::DegenerateLabels(format!("{} labels for {} subjects", labels.len(), self.len())));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Number of subjects `K`.
    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    /// Feature dimension `d`.
    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn covariate(&self) -> Option<&[f64]> {
        self.covariate.as_deref()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.x.column_mean()
    }

    /// `sum_k |x_k - mean|^2 / K`, the trace of the total scatter.
    pub fn total_variance(&self) -> f64 {
        let m = self.mean();
        self.x.column_iter().map(|c| (c - &m).norm_squared()).sum::<f64>() / self.len() as f64
    }
}

/// Cohort expressed in its leading principal directions.
#[derive(Clone, Debug, PartialEq)]
pub struct Reduced {
    pub mean: DVector<f64>,
    /// Orthonormal columns `U` (`d x r`).
    pub basis: DMatrix<f64>,
    /// Coordinates `U^T (x_k - mean)` (`r x K`).
    pub scores: DMatrix<f64>,
    /// Eigenvalues of the total scatter with the `1/K` convention,
    /// descending.
    pub variances: Vec<f64>,
}

impl Reduced {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(&(x - &self.mean))
    }

    /// Point in data space with reduced coordinates `z`.
    pub fn lift(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.mean + &self.basis * z
    }

    /// Direction in data space corresponding to a reduced direction.
    pub fn lift_direction(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.basis * w
    }
}

/// Top-`rank` principal subspace through the Gram matrix of the centered
/// columns. Directions with zero variance are dropped, so the result can
/// have fewer than `rank` columns.
pub fn reduce(cohort: &Cohort, rank: usize) -> Result<Reduced> {
    let k = cohort.len();
    if k < 2 {
        return Err(TbmError::InvalidCohort("at least two subjects are required".into()));
    }
    if rank == 0 || rank > k - 1 {
        return Err(TbmError::RankTooLarge {
            requested: rank,
            max: k - 1,
        });
    }
    let mean = cohort.mean();
    let mut xc = cohort.x.clone();
    for mut c in xc.column_iter_mut() {
        c -= &mean;
    }
    let gram = xc.tr_mul(&xc);
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let keep: Vec<usize> = order
        .into_iter()
        .take(rank)
        .filter(|&i| top > 0.0 && eig.eigenvalues[i] > RANK_TOLERANCE * top)
        .collect();
    let r = keep.len();
    let mut basis = DMatrix::zeros(cohort.dim(), r);
    let mut variances = Vec::with_capacity(r);
    for (j, &i) in keep.iter().enumerate() {
        let lam = eig.eigenvalues[i];
        let mut u = &xc * eig.eigenvectors.column(i) / lam.sqrt();
        // Orientation: the entry of largest magnitude is positive.
        let imax = u.iamax();
        if u[imax] < 0.0 {
            u.neg_mut();
        }
        basis.set_column(j, &u);
        variances.push(lam / k as f64);
    }
    let scores = basis.tr_mul(&xc);
    Ok(Reduced {
        mean,
        basis,
        scores,
        variances,
    })
}

/// Principal components and their variances.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// Orthonormal components, one per column.
    pub components: DMatrix<f64>,
    pub variances: Vec<f64>,
    pub total_variance: f64,
}

impl PcaModel {
    /// Share of the total variance carried by component `i`.
    pub fn explained_ratio(&self, i: usize) -> f64 {
        if self.total_variance > 0.0 {
            self.variances[i] / self.total_variance
        } else {
            0.0
        }
    }
}

pub fn pca(cohort: &Cohort, rank: usize) -> Result<PcaModel> {
    let red = reduce(cohort, rank)?;
    Ok(PcaModel {
        mean: red.mean,
        components: red.basis,
        variances: red.variances,
        total_variance: cohort.total_variance(),
    })
}

/// Largest rank a cohort supports, `K - 1`.
pub fn full_rank(cohort: &Cohort) -> usize {
    cohort.len().saturating_sub(1)
}
