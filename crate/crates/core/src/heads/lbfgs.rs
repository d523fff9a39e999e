//! Limited-memory BFGS with backtracking Armijo line search.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 500,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f`, which returns the objective and writes the gradient.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: LbfgsOptions) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut value = f(&x, &mut g);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut dir = vec![0.0; n];

    for iter in 0..opts.max_iter {
        let grad_norm = dot(&g, &g).sqrt();
        if grad_norm <= opts.grad_tol || !value.is_finite() {
            return LbfgsResult {
                x,
                value,
                grad_norm,
                iterations: iter,
                converged: value.is_finite(),
            };
        }

        // Two-loop recursion for the direction −H g.
        dir.copy_from_slice(&g);
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &dir);
            dir.iter_mut().zip(y).for_each(|(d, yi)| *d -= a * yi);
            alphas.push(a);
        }
        let gamma = history
            .back()
            .map_or(1.0 / grad_norm.max(1.0), |(s, y, _)| dot(s, y) / dot(y, y));
        dir.iter_mut().for_each(|d| *d *= gamma);
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &dir);
            dir.iter_mut().zip(s).for_each(|(d, si)| *d += (a - b) * si);
        }
        dir.iter_mut().for_each(|d| *d = -*d);

        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            // Curvature information went stale; restart from steepest descent.
            history.clear();
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi / grad_norm.max(1.0));
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            x_new
                .iter_mut()
                .zip(&x)
                .zip(&dir)
                .for_each(|((xn, xi), d)| *xn = xi + step * d);
            let v = f(&x_new, &mut g_new);
            if v.is_finite() && v <= value + 1e-4 * step * slope {
                accepted = true;
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
                    if history.len() == opts.memory {
                        history.pop_front();
                    }
                    history.push_back((s, y, 1.0 / sy));
                }
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                value = v;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            let grad_norm = dot(&g, &g).sqrt();
            return LbfgsResult {
                x,
                value,
                grad_norm,
                iterations: iter + 1,
                converged: grad_norm <= opts.grad_tol,
            };
        }
    }
    let grad_norm = dot(&g, &g).sqrt();
    LbfgsResult {
        x,
        value,
        grad_norm,
        iterations: opts.max_iter,
        converged: grad_norm <= opts.grad_tol,
    }
}
