//! Test AUROC as a function of the number of training samples.

use serde::Serialize;

use super::logreg::fit_logreg_on;
use super::metrics::{auroc_multiclass, percentile, Averaging};
use super::split::SplitPlan;
use super::{class_count, gather, HeadsError, Result};
use crate::par;
use crate::rng::CounterRng;

pub const DEFAULT_SIZES: [usize; 5] = [10, 50, 100, 200, 500];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScarcityPoint {
    pub size: usize,
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
    pub aucs: Vec<f64>,
}

/// Class-stratified subsample of `train` of the given size, kept in the
/// original train order. Every present class keeps at least one sample.
pub fn stratified_subsample(train: &[usize], y: &[usize], size: usize, rng: &mut CounterRng) -> Vec<usize> {
    if size >= train.len() {
        return train.to_vec();
    }
    let classes = class_count(y);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (pos, &i) in train.iter().enumerate() {
        by_class[y[i]].push(pos);
    }
    let present: Vec<usize> = (0..classes).filter(|&c| !by_class[c].is_empty()).collect();
    let mut quota: Vec<usize> = vec![0; classes];
    let mut assigned = 0;
    for &c in &present {
        let q = ((by_class[c].len() * size) as f64 / train.len() as f64).floor() as usize;
        quota[c] = q.max(1).min(by_class[c].len());
        assigned += quota[c];
    }
    // Hand out (or take back) the rounding remainder, largest classes first.
    let mut order = present.clone();
    order.sort_by_key(|&c| std::cmp::Reverse(by_class[c].len()));
    let mut k = 0;
    while assigned < size {
        let c = order[k % order.len()];
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            assigned += 1;
        }
        k += 1;
    }
    while assigned > size {
        let c = order[k % order.len()];
        if quota[c] > 1 {
            quota[c] -= 1;
            assigned -= 1;
        }
        k += 1;
    }
    let mut picked: Vec<usize> = Vec::with_capacity(size);
    for &c in &present {
        let mut members = by_class[c].clone();
        rng.shuffle(&mut members);
        picked.extend_from_slice(&members[..quota[c]]);
    }
    picked.sort_unstable();
    picked.into_iter().map(|pos| train[pos]).collect()
}

/// For each size and repeat: subsample the training split, select the
/// penalty on the full validation split, score on the fixed test split.
pub fn scarcity_curve(
    x: &[Vec<f32>],
    y: &[usize],
    split: &SplitPlan,
    sizes: &[usize],
    repeats: usize,
    grid: &[f64],
    seed: u64,
) -> Result<Vec<ScarcityPoint>> {
    let largest = sizes.iter().copied().max().unwrap_or(0);
    if split.train.len() < largest.min(split.train.len()).max(2) || split.test.is_empty() {
        return Err(HeadsError::TooFewSamples {
            need: largest,
            have: split.train.len(),
        });
    }
    let test_x = gather(x, &split.test);
    let test_y: Vec<usize> = split.test.iter().map(|&i| y[i]).collect();
    let jobs: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .flat_map(|(si, _)| (0..repeats.max(1)).map(move |r| (si, r)))
        .collect();
    let aucs = par::map_slice(&jobs, |&(si, r)| -> Result<f64> {
        let mut rng = CounterRng::derived(seed, (si * 1_000_003 + r) as u64);
        let subset = stratified_subsample(&split.train, y, sizes[si], &mut rng);
        let fit = fit_logreg_on(x, y, grid, &subset, &split.val)?;
        auroc_multiclass(&fit.model.predict_proba_rows(&test_x), &test_y, Averaging::Macro)
    });
    let mut points: Vec<ScarcityPoint> = sizes
        .iter()
        .map(|&size| ScarcityPoint {
            size,
            median: 0.0,
            lo: 0.0,
            hi: 0.0,
            aucs: Vec::new(),
        })
        .collect();
    for (&(si, _), auc) in jobs.iter().zip(aucs) {
        points[si].aucs.push(auc?);
    }
    for p in &mut points {
        p.median = percentile(&p.aucs, 0.5);
        p.lo = percentile(&p.aucs, 0.025);
        p.hi = percentile(&p.aucs, 0.975);
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::{fit_logreg, make_split};

    #[test]
    fn subsample_is_stratified_and_ordered() {
        let y: Vec<usize> = (0..100).map(|i| usize::from(i % 4 == 0)).collect();
        let train: Vec<usize> = (0..100).rev().collect();
        let mut rng = CounterRng::new(1);
        let s = stratified_subsample(&train, &y, 20, &mut rng);
        assert_eq!(s.len(), 20);
        assert_eq!(s.iter().filter(|&&i| y[i] == 1).count(), 5);
        let positions: Vec<usize> = s.iter().map(|i| train.iter().position(|t| t == i).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        let tiny = stratified_subsample(&train, &y, 2, &mut rng);
        assert_eq!(tiny.iter().filter(|&&i| y[i] == 1).count(), 1);
    }

    #[test]
    fn full_size_reproduces_single_fit() {
        let mut rng = CounterRng::new(2);
        let n = 120;
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x: Vec<Vec<f32>> = y
            .iter()
            .map(|&c| vec![c as f32 + rng.next_normal() as f32, rng.next_normal() as f32])
            .collect();
        let split = make_split(n, [0.6, 0.2, 0.2], 0).unwrap();
        let curve = scarcity_curve(&x, &y, &split, &[split.train.len()], 2, &[1.0], 0).unwrap();
        let single = fit_logreg(&x, &y, &[1.0], &split).unwrap();
        let test_x = gather(&x, &split.test);
        let test_y: Vec<usize> = split.test.iter().map(|&i| y[i]).collect();
        let auc = auroc_multiclass(&single.model.predict_proba_rows(&test_x), &test_y, Averaging::Macro).unwrap();
        assert!(curve[0].aucs.iter().all(|&a| a == auc));
    }
}
