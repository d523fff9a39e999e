//! Two-hidden-layer regression network:
//! `in → h (batch norm, ReLU) → h (ReLU) → out`, trained with Adam on MSE.
//!
//! Activations are stored feature-major (one column per sample). Parameters
//! live in one flat vector so the optimizer and gradient checks treat them
//! uniformly; each weight block is a column-major matrix.

use nalgebra::{DMatrix, DMatrixView, DVector};
use serde::Serialize;

use super::metrics::regression_report;
use super::split::SplitPlan;
use super::{gather, HeadsError, Result, Standardizer};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Serialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            lr: 1e-3,
            batch: 32,
            epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            seed: 0,
        }
    }
}

/// Shapes and parameter offsets.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MlpNet {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub bn_eps: f64,
}

struct Offsets {
    w1: usize,
    b1: usize,
    gamma: usize,
    beta: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    end: usize,
}

/// Batch statistics of the normalized layer from a training-mode pass.
pub struct BatchStats {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
}

fn add_bias(m: &mut DMatrix<f64>, b: &[f64]) {
    for mut col in m.column_iter_mut() {
        col.iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
    }
}

fn relu(m: &mut DMatrix<f64>) {
    m.iter_mut().for_each(|v| *v = v.max(0.0));
}

fn row_sums(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|r| m.row(r).sum()).collect()
}

impl MlpNet {
    pub fn new(in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            hidden,
            out_dim,
            bn_eps: 1e-5,
        }
    }

    fn offsets(&self) -> Offsets {
        let (i, h, o) = (self.in_dim, self.hidden, self.out_dim);
        let w1 = 0;
        let b1 = w1 + h * i;
        let gamma = b1 + h;
        let beta = gamma + h;
        let w2 = beta + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + o * h;
        Offsets {
            w1,
            b1,
            gamma,
            beta,
            w2,
            b2,
            w3,
            b3,
            end: b3 + o,
        }
    }

    pub fn param_len(&self) -> usize {
        self.offsets().end
    }

    /// Uniform `±1/√fan_in` weights and biases, unit scale and zero shift for
    /// the normalization.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let o = self.offsets();
        let mut rng = CounterRng::new(seed);
        let mut p = vec![0.0; o.end];
        let mut fill = |p: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            p.iter_mut().for_each(|v| *v = rng.uniform(-bound, bound));
        };
        fill(&mut p[o.w1..o.gamma], self.in_dim);
        p[o.gamma..o.beta].iter_mut().for_each(|v| *v = 1.0);
        fill(&mut p[o.w2..o.w3], self.hidden);
        fill(&mut p[o.w3..o.end], self.hidden);
        p
    }

    fn view<'a>(&self, p: &'a [f64], off: usize, rows: usize, cols: usize) -> DMatrixView<'a, f64> {
        DMatrixView::from_slice(&p[off..off + rows * cols], rows, cols)
    }

    /// Inference with fixed normalization statistics. `xt` is `in × n`.
    pub fn forward_eval(
        &self,
        p: &[f64],
        xt: &DMatrix<f64>,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> DMatrix<f64> {
        let o = self.offsets();
        let h = self.hidden;
        let mut a1 = self.view(p, o.w1, h, self.in_dim) * xt;
        add_bias(&mut a1, &p[o.b1..o.gamma]);
        for (r, mut row) in a1.row_iter_mut().enumerate() {
            let inv = 1.0 / (running_var[r] + self.bn_eps).sqrt();
            let (g, b) = (p[o.gamma + r], p[o.beta + r]);
            row.iter_mut().for_each(|v| *v = g * (*v - running_mean[r]) * inv + b);
        }
        relu(&mut a1);
        let mut a2 = self.view(p, o.w2, h, h) * &a1;
        add_bias(&mut a2, &p[o.b2..o.w3]);
        relu(&mut a2);
        let mut out = self.view(p, o.w3, self.out_dim, h) * &a2;
        add_bias(&mut out, &p[o.b3..o.end]);
        out
    }

    /// Training-mode MSE over a batch (`xt` is `in × B`, `yt` is `out × B`),
    /// with the gradient written to `grad` when given.
    pub fn loss_grad(
        &self,
        p: &[f64],
        xt: &DMatrix<f64>,
        yt: &DMatrix<f64>,
        grad: Option<&mut [f64]>,
    ) -> (f64, BatchStats) {
        let o = self.offsets();
        let (h, b) = (self.hidden, xt.ncols());
        let bf = b as f64;

        let mut a1 = self.view(p, o.w1, h, self.in_dim) * xt;
        add_bias(&mut a1, &p[o.b1..o.gamma]);
        let mean = DVector::from_iterator(h, (0..h).map(|r| a1.row(r).sum() / bf));
        let var = DVector::from_iterator(
            h,
            (0..h).map(|r| a1.row(r).iter().map(|v| (v - mean[r]).powi(2)).sum::<f64>() / bf),
        );
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.bn_eps).sqrt()).collect();
        let mut xhat = a1;
        for (r, mut row) in xhat.row_iter_mut().enumerate() {
            row.iter_mut().for_each(|v| *v = (*v - mean[r]) * inv_std[r]);
        }
        let mut bn = xhat.clone();
        for (r, mut row) in bn.row_iter_mut().enumerate() {
            let (g, s) = (p[o.gamma + r], p[o.beta + r]);
            row.iter_mut().for_each(|v| *v = g * *v + s);
        }
        let mut r1 = bn.clone();
        relu(&mut r1);
        let w2 = self.view(p, o.w2, h, h);
        let mut a2 = w2 * &r1;
        add_bias(&mut a2, &p[o.b2..o.w3]);
        let mut r2 = a2.clone();
        relu(&mut r2);
        let w3 = self.view(p, o.w3, self.out_dim, h);
        let mut out = w3 * &r2;
        add_bias(&mut out, &p[o.b3..o.end]);

        let diff = &out - yt;
        let count = (b * self.out_dim) as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
        let stats = BatchStats { mean, var };

        let Some(grad) = grad else {
            return (loss, stats);
        };
        let dout = diff * (2.0 / count);
        let dw3 = &dout * r2.transpose();
        grad[o.w3..o.b3].copy_from_slice(dw3.as_slice());
        grad[o.b3..o.end].copy_from_slice(&row_sums(&dout));

        let mut da2 = w3.tr_mul(&dout);
        da2.zip_apply(&a2, |g, a| {
            if a <= 0.0 {
                *g = 0.0
            }
        });
        let dw2 = &da2 * r1.transpose();
        grad[o.w2..o.b2].copy_from_slice(dw2.as_slice());
        grad[o.b2..o.w3].copy_from_slice(&row_sums(&da2));

        let mut dbn = w2.tr_mul(&da2);
        dbn.zip_apply(&bn, |g, a| {
            if a <= 0.0 {
                *g = 0.0
            }
        });
        let mut da1 = dbn.clone();
        for r in 0..h {
            let g = p[o.gamma + r];
            let dgamma: f64 = dbn.row(r).iter().zip(xhat.row(r).iter()).map(|(d, x)| d * x).sum();
            let dbeta: f64 = dbn.row(r).sum();
            grad[o.gamma + r] = dgamma;
            grad[o.beta + r] = dbeta;
            // dxhat = g·dbn; da1 = inv_std/B · (B·dxhat − Σdxhat − xhat·Σ(dxhat·xhat)).
            let sum_dx = g * dbeta;
            let sum_dx_xhat = g * dgamma;
            for c in 0..b {
                let dx = g * dbn[(r, c)];
                da1[(r, c)] = inv_std[r] / bf * (bf * dx - sum_dx - xhat[(r, c)] * sum_dx_xhat);
            }
        }
        let dw1 = &da1 * xt.transpose();
        grad[o.w1..o.b1].copy_from_slice(dw1.as_slice());
        grad[o.b1..o.gamma].copy_from_slice(&row_sums(&da1));
        (loss, stats)
    }
}

fn columns(rows: &[Vec<f64>], dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, rows.len(), |r, c| rows[c][r])
}

#[derive(Debug, Clone, Serialize)]
pub struct MlpModel {
    pub net: MlpNet,
    pub params: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub x_standardizer: Standardizer,
    pub y_standardizer: Standardizer,
    pub best_val_score: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

impl MlpModel {
    /// Predictions in the original target units.
    pub fn predict_rows(&self, rows: &[Vec<f32>]) -> Vec<Vec<f64>> {
        if rows.is_empty() {
            return Vec::new();
        }
        let xs: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| self.x_standardizer.apply(r).into_iter().map(f64::from).collect())
            .collect();
        let out = self.net.forward_eval(
            &self.params,
            &columns(&xs, self.net.in_dim),
            &self.running_mean,
            &self.running_var,
        );
        out.column_iter()
            .map(|c| {
                c.iter()
                    .zip(&self.y_standardizer.mean)
                    .zip(&self.y_standardizer.std)
                    .map(|((v, m), s)| v * s + m)
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MlpFit {
    pub model: MlpModel,
    /// Validation r²-mean after each epoch.
    pub val_history: Vec<f64>,
}

/// Trains on `split.train`, checkpointing whenever validation r²-mean
/// improves; returns the checkpoint.
pub fn fit_mlp(x: &[Vec<f32>], y: &[Vec<f64>], split: &SplitPlan, cfg: &MlpConfig) -> Result<MlpFit> {
    if x.len() != y.len() || x.is_empty() || y[0].is_empty() {
        return Err(HeadsError::DimMismatch);
    }
    if split.train.len() < 2 {
        return Err(HeadsError::TooFewSamples {
            need: 2,
            have: split.train.len(),
        });
    }
    let (in_dim, out_dim) = (x[0].len(), y[0].len());
    let train_x = gather(x, &split.train);
    let train_y = gather(y, &split.train);
    let x_std = Standardizer::fit(&train_x);
    let y_std = Standardizer::fit_f64(&train_y);
    let xs: Vec<Vec<f64>> = train_x
        .iter()
        .map(|r| x_std.apply(r).into_iter().map(f64::from).collect())
        .collect();
    let ys: Vec<Vec<f64>> = train_y.iter().map(|r| y_std.apply_f64(r)).collect();
    let val_x = gather(x, &split.val);
    let val_y = gather(y, &split.val);

    let mut net = MlpNet::new(in_dim, cfg.hidden, out_dim);
    net.bn_eps = cfg.bn_eps;
    let mut params = net.init_params(cfg.seed);
    let mut grad = vec![0.0; params.len()];
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut running_mean = vec![0.0; cfg.hidden];
    let mut running_var = vec![1.0; cfg.hidden];
    let mut step = 0i32;
    let mut best: Option<MlpModel> = None;
    let mut val_history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let order = CounterRng::derived(cfg.seed, epoch as u64 + 1).permutation(xs.len());
        for chunk in order.chunks(cfg.batch.max(2)) {
            // Batch statistics are undefined for a single sample.
            if chunk.len() < 2 {
                continue;
            }
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| xs[i].clone()).collect();
            let by: Vec<Vec<f64>> = chunk.iter().map(|&i| ys[i].clone()).collect();
            let (loss, stats) = net.loss_grad(&params, &columns(&bx, in_dim), &columns(&by, out_dim), Some(&mut grad));
            if !loss.is_finite() {
                return Err(HeadsError::NonFinite);
            }
            let unbias = chunk.len() as f64 / (chunk.len() - 1) as f64;
            for r in 0..cfg.hidden {
                running_mean[r] = (1.0 - cfg.bn_momentum) * running_mean[r] + cfg.bn_momentum * stats.mean[r];
                running_var[r] = (1.0 - cfg.bn_momentum) * running_var[r] + cfg.bn_momentum * stats.var[r] * unbias;
            }
            step += 1;
            let c1 = 1.0 - cfg.beta1.powi(step);
            let c2 = 1.0 - cfg.beta2.powi(step);
            for i in 0..params.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                params[i] -= cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.adam_eps);
            }
        }
        let candidate = MlpModel {
            net,
            params: params.clone(),
            running_mean: running_mean.clone(),
            running_var: running_var.clone(),
            x_standardizer: x_std.clone(),
            y_standardizer: y_std.clone(),
            best_val_score: f64::NEG_INFINITY,
            best_epoch: epoch + 1,
            epochs_run: epoch + 1,
        };
        let score = if val_x.is_empty() {
            0.0
        } else {
            let pred = candidate.predict_rows(&val_x);
            if pred.iter().flatten().any(|p| !p.is_finite()) {
                return Err(HeadsError::NonFinite);
            }
            regression_report(&pred, &val_y)?.r2_mean.unwrap_or(0.0)
        };
        val_history.push(score);
        if best.as_ref().map_or(true, |b| score > b.best_val_score) {
            best = Some(MlpModel {
                best_val_score: score,
                ..candidate
            });
        }
    }
    let mut model = best.ok_or(HeadsError::TooFewSamples { need: 1, have: 0 })?;
    model.epochs_run = val_history.len();
    Ok(MlpFit { model, val_history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::make_split;
    use crate::heads::metrics::max_relative_error;

    #[test]
    fn gradient_matches_finite_differences_at_init() {
        let net = MlpNet::new(7, 12, 3);
        let p = net.init_params(3);
        let mut rng = CounterRng::new(4);
        let xs: Vec<Vec<f64>> = (0..9).map(|_| (0..7).map(|_| rng.next_normal()).collect()).collect();
        let ys: Vec<Vec<f64>> = (0..9).map(|_| (0..3).map(|_| rng.next_normal()).collect()).collect();
        let (xt, yt) = (columns(&xs, 7), columns(&ys, 3));
        let mut g = vec![0.0; p.len()];
        net.loss_grad(&p, &xt, &yt, Some(&mut g));
        let numeric: Vec<f64> = (0..p.len())
            .map(|i| {
                let h = 1e-6;
                let mut a = p.clone();
                a[i] += h;
                let mut b = p.clone();
                b[i] -= h;
                (net.loss_grad(&a, &xt, &yt, None).0 - net.loss_grad(&b, &xt, &yt, None).0) / (2.0 * h)
            })
            .collect();
        let err = max_relative_error(&g, &numeric, 1e-7);
        assert!(err <= 1e-3, "{err}");
    }

    #[test]
    fn linear_targets_are_learned() {
        let mut rng = CounterRng::new(5);
        let n = 600;
        let x: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..8).map(|_| rng.next_normal() as f32).collect())
            .collect();
        let y: Vec<Vec<f64>> = x
            .iter()
            .map(|r| {
                let s: f64 = r.iter().enumerate().map(|(i, v)| (i as f64 - 3.0) * *v as f64).sum();
                vec![s, 0.5 * s + 2.0]
            })
            .collect();
        let split = make_split(n, [0.6, 0.2, 0.2], 1).unwrap();
        let cfg = MlpConfig {
            hidden: 64,
            ..MlpConfig::default()
        };
        let fit = fit_mlp(&x, &y, &split, &cfg).unwrap();
        assert!(fit.model.best_val_score >= 0.99, "{}", fit.model.best_val_score);
        assert!(fit.model.epochs_run <= 50);
    }

    #[test]
    fn constant_targets_terminate() {
        let mut rng = CounterRng::new(6);
        let x: Vec<Vec<f32>> = (0..40)
            .map(|_| (0..3).map(|_| rng.next_normal() as f32).collect())
            .collect();
        let y = vec![vec![4.0]; 40];
        let split = make_split(40, [0.6, 0.2, 0.2], 0).unwrap();
        let cfg = MlpConfig {
            hidden: 8,
            epochs: 5,
            ..MlpConfig::default()
        };
        let fit = fit_mlp(&x, &y, &split, &cfg).unwrap();
        assert_eq!(fit.model.best_val_score, 0.0);
        assert_eq!(fit.model.epochs_run, 5);
    }
}
