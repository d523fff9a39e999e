//! Lightweight predictors fitted on frozen embeddings, and their metrics.

pub mod lbfgs;
pub mod logreg;
pub mod metrics;
pub mod mlp;
pub mod scarcity;
pub mod split;

use serde::Serialize;
use thiserror::Error;

pub use logreg::{fit_logreg, fit_logreg_on, LogRegFit, LogRegModel, LogRegProblem, DEFAULT_GRID};
pub use metrics::{
    accuracy, aupr, auroc, auroc_multiclass, average_precision, classification_report, pearson_r2, regression_report,
    Averaging, MetricReport,
};
pub use mlp::{fit_mlp, MlpConfig, MlpFit, MlpModel};
pub use scarcity::{scarcity_curve, ScarcityPoint, DEFAULT_SIZES};
pub use split::{make_split, SplitPlan, DEFAULT_RATIOS};

#[derive(Debug, Error)]
pub enum HeadsError {
    #[error("need at least {need} samples, have {have}")]
    TooFewSamples { need: usize, have: usize },
    #[error("split ratios must be in [0, 1] and sum to 1")]
    InvalidRatios,
    #[error("only one class present")]
    SingleClass,
    #[error("no positive samples")]
    NoPositives,
    #[error("non-finite value encountered")]
    NonFinite,
    #[error("inputs have inconsistent lengths")]
    DimMismatch,
}

pub type Result<T> = std::result::Result<T, HeadsError>;

/// Per-feature mean and standard deviation from training rows. Features
/// with zero spread keep a unit divisor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f32>]) -> Self {
        Self::fit_with(rows, |v: &f32| *v as f64)
    }

    pub fn fit_f64(rows: &[Vec<f64>]) -> Self {
        Self::fit_with(rows, |v: &f64| *v)
    }

    fn fit_with<T>(rows: &[Vec<T>], to_f64: impl Fn(&T) -> f64) -> Self {
        let dim = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0f64; dim];
        for r in rows {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += to_f64(v));
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; dim];
        for r in rows {
            var.iter_mut()
                .zip(r)
                .zip(&mean)
                .for_each(|((s, v), m)| *s += (to_f64(v) - m).powi(2));
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f32]) -> Vec<f32> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| ((*v as f64 - m) / s) as f32)
            .collect()
    }

    pub fn apply_f64(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// One more than the largest label.
pub fn class_count(y: &[usize]) -> usize {
    y.iter().copied().max().map_or(0, |m| m + 1)
}

pub(crate) fn gather<T: Clone>(rows: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| rows[i].clone()).collect()
}
