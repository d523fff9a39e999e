use serde::Serialize;

use super::lbfgs::{self, LbfgsOptions};
use super::metrics::{auroc_multiclass, Averaging};
use super::split::SplitPlan;
use super::{class_count, gather, HeadsError, Result, Standardizer};
use crate::par;

pub const DEFAULT_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

#[inline]
fn dot_mixed(w: &[f64], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * *b as f64).sum()
}

/// Multinomial softmax regression objective on a standardized design:
/// `(Σ_i CE_i + λ/2 ‖W‖²) / n`, bias unpenalized. Parameters are the
/// row-major `classes × dim` weights followed by the `classes` biases.
#[derive(Debug, Clone)]
pub struct LogRegProblem {
    x: Vec<f32>,
    n: usize,
    dim: usize,
    y: Vec<usize>,
    classes: usize,
    pub lambda: f64,
}

impl LogRegProblem {
    pub fn new(rows: &[Vec<f32>], y: &[usize], classes: usize, lambda: f64) -> Result<Self> {
        if rows.len() != y.len() || rows.is_empty() {
            return Err(HeadsError::DimMismatch);
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) || y.iter().any(|&c| c >= classes) {
            return Err(HeadsError::DimMismatch);
        }
        Ok(Self {
            x: rows.concat(),
            n: rows.len(),
            dim,
            y: y.to_vec(),
            classes,
            lambda,
        })
    }

    pub fn param_len(&self) -> usize {
        self.classes * (self.dim + 1)
    }

    pub fn value_grad(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let (c, dim) = (self.classes, self.dim);
        let (w, b) = params.split_at(c * dim);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut logits = vec![0.0f64; c];
        let mut loss = 0.0;
        for i in 0..self.n {
            let xi = &self.x[i * dim..(i + 1) * dim];
            for k in 0..c {
                logits[k] = dot_mixed(&w[k * dim..(k + 1) * dim], xi) + b[k];
            }
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            let lse = m + z.ln();
            loss += lse - logits[self.y[i]];
            for k in 0..c {
                let r = (logits[k] - lse).exp() - if k == self.y[i] { 1.0 } else { 0.0 };
                let gw = &mut grad[k * dim..(k + 1) * dim];
                gw.iter_mut().zip(xi).for_each(|(g, x)| *g += r * *x as f64);
                grad[c * dim + k] += r;
            }
        }
        let mut penalty = 0.0;
        for (g, wi) in grad[..c * dim].iter_mut().zip(w) {
            penalty += wi * wi;
            *g += self.lambda * wi;
        }
        let inv_n = 1.0 / self.n as f64;
        grad.iter_mut().for_each(|g| *g *= inv_n);
        (loss + 0.5 * self.lambda * penalty) * inv_n
    }

    /// Runs L-BFGS from zero.
    pub fn solve(&self, opts: LbfgsOptions) -> lbfgs::LbfgsResult {
        lbfgs::minimize(|p, g| self.value_grad(p, g), vec![0.0; self.param_len()], opts)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LogRegModel {
    pub classes: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub penalty: f64,
    pub standardizer: Standardizer,
    pub iterations: usize,
}

impl LogRegModel {
    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn predict_proba(&self, x: &[f32]) -> Vec<f64> {
        let xs = self.standardizer.apply(x);
        let logits: Vec<f64> = (0..self.classes)
            .map(|k| dot_mixed(&self.weights[k * self.dim..(k + 1) * self.dim], &xs) + self.bias[k])
            .collect();
        softmax(&logits)
    }

    pub fn predict_proba_rows(&self, rows: &[Vec<f32>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.predict_proba(r)).collect()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct LogRegFit {
    pub model: LogRegModel,
    /// `(penalty, validation AUROC-macro)` for every grid point.
    pub grid_scores: Vec<(f64, f64)>,
}

/// Fits one model per penalty on the train rows of `split`, then keeps the
/// one with the best validation AUROC-macro (earliest grid point on ties).
pub fn fit_logreg(x: &[Vec<f32>], y: &[usize], grid: &[f64], split: &SplitPlan) -> Result<LogRegFit> {
    fit_logreg_on(x, y, grid, &split.train, &split.val)
}

/// As [`fit_logreg`] with explicit train and validation indices.
pub fn fit_logreg_on(x: &[Vec<f32>], y: &[usize], grid: &[f64], train: &[usize], val: &[usize]) -> Result<LogRegFit> {
    if x.len() != y.len() || grid.is_empty() {
        return Err(HeadsError::DimMismatch);
    }
    let classes = class_count(y);
    let train_y: Vec<usize> = train.iter().map(|&i| y[i]).collect();
    if class_count_present(&train_y) < 2 {
        return Err(HeadsError::SingleClass);
    }
    let train_x = gather(x, train);
    if train_x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(HeadsError::NonFinite);
    }
    let standardizer = Standardizer::fit(&train_x);
    let std_rows: Vec<Vec<f32>> = train_x.iter().map(|r| standardizer.apply(r)).collect();
    let val_x = gather(x, val);
    let val_y: Vec<usize> = val.iter().map(|&i| y[i]).collect();

    let fits = par::map_slice(grid, |&lambda| -> Result<(LogRegModel, f64)> {
        let problem = LogRegProblem::new(&std_rows, &train_y, classes, lambda)?;
        let res = problem.solve(LbfgsOptions::default());
        if res.x.iter().any(|v| !v.is_finite()) {
            return Err(HeadsError::NonFinite);
        }
        let (weights, bias) = res.x.split_at(classes * problem.dim);
        let model = LogRegModel {
            classes,
            dim: problem.dim,
            weights: weights.to_vec(),
            bias: bias.to_vec(),
            penalty: lambda,
            standardizer: standardizer.clone(),
            iterations: res.iterations,
        };
        let score = if val.is_empty() {
            f64::NEG_INFINITY
        } else {
            auroc_multiclass(&model.predict_proba_rows(&val_x), &val_y, Averaging::Macro).unwrap_or(f64::NEG_INFINITY)
        };
        Ok((model, score))
    });
    let mut best: Option<(LogRegModel, f64)> = None;
    let mut grid_scores = Vec::with_capacity(grid.len());
    for fit in fits {
        let (model, score) = fit?;
        grid_scores.push((model.penalty, score));
        if best.as_ref().map_or(true, |(_, s)| score > *s) {
            best = Some((model, score));
        }
    }
    Ok(LogRegFit {
        model: best.expect("grid is nonempty").0,
        grid_scores,
    })
}

fn class_count_present(y: &[usize]) -> usize {
    let mut seen: Vec<usize> = y.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::metrics::{accuracy, max_relative_error};
    use crate::rng::CounterRng;

    fn blobs(seed: u64, n: usize, sep: f64) -> (Vec<Vec<f32>>, Vec<usize>) {
        let mut rng = CounterRng::new(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let shift = if c == 1 { sep } else { -sep };
            x.push(vec![(shift + rng.next_normal()) as f32, (rng.next_normal()) as f32]);
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn separable_data_fits_perfectly() {
        let (x, y) = blobs(1, 60, 6.0);
        let all: Vec<usize> = (0..60).collect();
        let fit = fit_logreg_on(&x, &y, &[0.01], &all, &all).unwrap();
        assert_eq!(accuracy(&fit.model.predict_proba_rows(&x), &y), 1.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = CounterRng::new(2);
        let rows: Vec<Vec<f32>> = (0..25)
            .map(|_| (0..4).map(|_| rng.next_normal() as f32).collect())
            .collect();
        let y: Vec<usize> = (0..25).map(|i| i % 3).collect();
        let problem = LogRegProblem::new(&rows, &y, 3, 0.7).unwrap();
        let m = problem.param_len();
        for _ in 0..20 {
            let p: Vec<f64> = (0..m).map(|_| rng.next_normal()).collect();
            let mut g = vec![0.0; m];
            problem.value_grad(&p, &mut g);
            let mut scratch = vec![0.0; m];
            let numeric: Vec<f64> = (0..m)
                .map(|i| {
                    let h = 1e-5;
                    let mut a = p.clone();
                    a[i] += h;
                    let mut b = p.clone();
                    b[i] -= h;
                    (problem.value_grad(&a, &mut scratch) - problem.value_grad(&b, &mut scratch)) / (2.0 * h)
                })
                .collect();
            assert!(max_relative_error(&g, &numeric, 1e-6) <= 1e-4);
        }
    }

    #[test]
    fn weight_norm_shrinks_along_grid() {
        let (x, y) = blobs(3, 80, 1.0);
        let all: Vec<usize> = (0..80).collect();
        let norms: Vec<f64> = DEFAULT_GRID
            .iter()
            .map(|&l| fit_logreg_on(&x, &y, &[l], &all, &all).unwrap().model.weight_norm())
            .collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    }

    #[test]
    fn global_scale_leaves_predictions() {
        let (x, y) = blobs(4, 50, 1.5);
        let scaled: Vec<Vec<f32>> = x.iter().map(|r| r.iter().map(|v| v * 8.0).collect()).collect();
        let all: Vec<usize> = (0..50).collect();
        let a = fit_logreg_on(&x, &y, &[1.0], &all, &all).unwrap().model;
        let b = fit_logreg_on(&scaled, &y, &[1.0], &all, &all).unwrap().model;
        for (ra, rb) in x.iter().zip(&scaled) {
            let (pa, pb) = (a.predict_proba(ra), b.predict_proba(rb));
            assert_eq!(pa[1] > pa[0], pb[1] > pb[0]);
        }
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![1.0f32], vec![2.0], vec![3.0]];
        let y = vec![1, 1, 1];
        assert!(matches!(
            fit_logreg_on(&x, &y, &[1.0], &[0, 1, 2], &[0]),
            Err(HeadsError::SingleClass)
        ));
    }
}
