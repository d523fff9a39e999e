use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{PooledTokens, ReductionError, Result};

/// Principal components of a sample set, from the eigendecomposition of the
/// `dim × dim` covariance (normalized by `n`).
#[derive(Debug, Clone)]
pub struct PcaModel {
    mean: DVector<f64>,
    /// Columns are components, ordered by decreasing eigenvalue.
    components: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    total_variance: f64,
}

impl PcaModel {
    /// Fits the top `k` components to `rows` (each of equal length).
    pub fn fit(rows: &[Vec<f64>], k: usize) -> Result<Self> {
        let n = rows.len();
        if n == 0 || n < k {
            return Err(ReductionError::InsufficientSamples {
                need: k.max(1),
                have: n,
            });
        }
        let dim = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(ReductionError::DimMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        if k > dim {
            return Err(ReductionError::DimMismatch { expected: dim, got: k });
        }
        let mut mean = DVector::zeros(dim);
        for r in rows {
            mean += DVector::from_column_slice(r);
        }
        mean /= n as f64;
        let centered = DMatrix::from_fn(n, dim, |i, j| rows[i][j] - mean[j]);
        let cov = (centered.transpose() * &centered) / n as f64;
        let total_variance = cov.trace();
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let order = &order[..k];
        let components = DMatrix::from_fn(dim, k, |i, c| eig.eigenvectors[(i, order[c])]);
        let eigenvalues = order.iter().map(|&c| eig.eigenvalues[c].max(0.0)).collect();
        Ok(Self {
            mean,
            components,
            eigenvalues,
            total_variance,
        })
    }

    pub fn k(&self) -> usize {
        self.components.ncols()
    }

    pub fn dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    /// Unit-norm component `c` as a vector of length `dim`.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.components.column(c).iter().copied().collect()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Share of total variance captured by the retained components.
    pub fn explained_variance_ratio(&self) -> f64 {
        if self.total_variance <= 0.0 {
            return 1.0;
        }
        (self.eigenvalues.iter().sum::<f64>() / self.total_variance).min(1.0)
    }

    /// Component scores of one sample.
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let centered = DVector::from_column_slice(x) - &self.mean;
        (self.components.transpose() * centered).iter().copied().collect()
    }

    /// Back-projection of component scores into the input space.
    pub fn reconstruct(&self, scores: &[f64]) -> Vec<f64> {
        let s = DVector::from_column_slice(scores);
        (&self.components * s + &self.mean).iter().copied().collect()
    }
}

/// Baseline embeddings for one axis of `N` volumes.
#[derive(Debug, Clone)]
pub struct PcaReduction {
    /// `N` rows of length `K · p²`, laid out (patch, component).
    pub rows: Vec<Vec<f32>>,
    /// Explained variance ratio of each per-patch fit.
    pub explained: Vec<f64>,
}

/// Fits an independent `K`-component PCA at every patch position over the
/// `N` pooled token vectors, then projects each sample.
pub fn pca_reduce(pooled_set: &[PooledTokens], k: usize) -> Result<PcaReduction> {
    let n = pooled_set.len();
    if n < k || n == 0 {
        return Err(ReductionError::InsufficientSamples {
            need: k.max(1),
            have: n,
        });
    }
    let first = &pooled_set[0];
    if pooled_set
        .iter()
        .any(|p| p.patches_per_side() != first.patches_per_side() || p.dim() != first.dim())
    {
        return Err(ReductionError::InconsistentInputs);
    }
    let patches = first.patches();
    let mut rows = vec![vec![0.0f32; k * patches]; n];
    let mut explained = Vec::with_capacity(patches);
    for q in 0..patches {
        let samples: Vec<Vec<f64>> = pooled_set
            .iter()
            .map(|p| p.token(q).iter().map(|&v| v as f64).collect())
            .collect();
        let model = PcaModel::fit(&samples, k)?;
        explained.push(model.explained_variance_ratio());
        for (row, x) in rows.iter_mut().zip(&samples) {
            for (dst, s) in row[q * k..(q + 1) * k].iter_mut().zip(model.transform(x)) {
                *dst = s as f32;
            }
        }
    }
    Ok(PcaReduction { rows, explained })
}
