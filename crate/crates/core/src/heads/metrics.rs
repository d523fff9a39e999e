//! Ranking and regression metrics.
//!
//! AUROC uses the Mann–Whitney statistic with average ranks for ties; AUPR is
//! average precision, the exact area under the precision–recall step curve
//! with one step per distinct score.

use serde::Serialize;

use super::{HeadsError, Result};

/// Probability that a random positive outscores a random negative, ties
/// counted one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(HeadsError::DimMismatch);
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(HeadsError::SingleClass);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(HeadsError::NonFinite);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives, so tied average ranks stay integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let twice_avg_rank = (i + 1 + j) as u128;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        twice_rank_sum += twice_avg_rank * pos_in_group;
        i = j;
    }
    let np = n_pos as u128;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok((twice_u as f64 / 2.0) / (n_pos as f64 * n_neg as f64))
}

/// Average precision: `Σ_t (R_t − R_{t−1}) · P_t` over distinct thresholds
/// in decreasing order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(HeadsError::DimMismatch);
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(HeadsError::NoPositives);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(HeadsError::NonFinite);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap, mut prev_recall) = (0usize, 0usize, 0.0f64, 0.0f64);
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        tp += order[i..j].iter().filter(|&&k| labels[k]).count();
        seen += j - i;
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Averaging {
    Macro,
    Micro,
}

fn one_vs_rest(
    probs: &[Vec<f64>],
    labels: &[usize],
    averaging: Averaging,
    metric: fn(&[f64], &[bool]) -> Result<f64>,
) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(HeadsError::DimMismatch);
    }
    let classes = probs[0].len();
    match averaging {
        Averaging::Micro => {
            let mut s = Vec::with_capacity(probs.len() * classes);
            let mut l = Vec::with_capacity(probs.len() * classes);
            for (row, &y) in probs.iter().zip(labels) {
                for (c, &p) in row.iter().enumerate() {
                    s.push(p);
                    l.push(c == y);
                }
            }
            metric(&s, &l)
        }
        Averaging::Macro => {
            let mut total = 0.0;
            let mut counted = 0;
            for c in 0..classes {
                let s: Vec<f64> = probs.iter().map(|r| r[c]).collect();
                let l: Vec<bool> = labels.iter().map(|&y| y == c).collect();
                match metric(&s, &l) {
                    Ok(v) => {
                        total += v;
                        counted += 1;
                    }
                    // Classes absent from this split carry no ranking.
                    Err(HeadsError::SingleClass | HeadsError::NoPositives) => {}
                    Err(e) => return Err(e),
                }
            }
            if counted == 0 {
                return Err(HeadsError::SingleClass);
            }
            Ok(total / counted as f64)
        }
    }
}

/// One-vs-rest AUROC over class probability rows.
pub fn auroc_multiclass(probs: &[Vec<f64>], labels: &[usize], averaging: Averaging) -> Result<f64> {
    one_vs_rest(probs, labels, averaging, auroc)
}

pub fn aupr(probs: &[Vec<f64>], labels: &[usize], averaging: Averaging) -> Result<f64> {
    one_vs_rest(probs, labels, averaging, average_precision)
}

pub fn accuracy(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = probs.iter().zip(labels).filter(|(row, &y)| argmax(row) == y).count();
    hits as f64 / labels.len() as f64
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Squared Pearson correlation; 0 when either side has no variance.
pub fn pearson_r2(pred: &[f64], target: &[f64]) -> f64 {
    let n = pred.len().min(target.len());
    if n < 2 {
        return 0.0;
    }
    let mp = pred[..n].iter().sum::<f64>() / n as f64;
    let mt = target[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred[..n].iter().zip(&target[..n]) {
        let (a, b) = (p - mp, t - mt);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    ((sxy * sxy) / (sxx * syy)).min(1.0)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricReport {
    pub auroc_macro: Option<f64>,
    pub auroc_micro: Option<f64>,
    pub accuracy: Option<f64>,
    pub aupr_macro: Option<f64>,
    pub aupr_micro: Option<f64>,
    pub r2_per_target: Vec<f64>,
    pub r2_mean: Option<f64>,
}

pub fn classification_report(probs: &[Vec<f64>], labels: &[usize]) -> Result<MetricReport> {
    Ok(MetricReport {
        auroc_macro: Some(auroc_multiclass(probs, labels, Averaging::Macro)?),
        auroc_micro: Some(auroc_multiclass(probs, labels, Averaging::Micro)?),
        accuracy: Some(accuracy(probs, labels)),
        aupr_macro: Some(aupr(probs, labels, Averaging::Macro)?),
        aupr_micro: Some(aupr(probs, labels, Averaging::Micro)?),
        ..MetricReport::default()
    })
}

/// Per-target r² for `n × targets` predictions.
pub fn regression_report(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<MetricReport> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(HeadsError::DimMismatch);
    }
    let m = target[0].len();
    let r2: Vec<f64> = (0..m)
        .map(|t| {
            let p: Vec<f64> = pred.iter().map(|r| r[t]).collect();
            let y: Vec<f64> = target.iter().map(|r| r[t]).collect();
            pearson_r2(&p, &y)
        })
        .collect();
    let mean = r2.iter().sum::<f64>() / m.max(1) as f64;
    Ok(MetricReport {
        r2_per_target: r2,
        r2_mean: Some(mean),
        ..MetricReport::default()
    })
}

/// Largest per-coordinate `|a − f| / max(|a|, |f|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Median and central interval by linear interpolation between order
/// statistics.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use proptest::prelude::*;

    pub(crate) fn auroc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut greater, mut ties, mut np, mut nn) = (0u64, 0u64, 0u64, 0u64);
        for (i, &li) in labels.iter().enumerate() {
            if li {
                np += 1;
            } else {
                nn += 1;
            }
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                if scores[i] > scores[j] {
                    greater += 1;
                } else if scores[i] == scores[j] {
                    ties += 1;
                }
            }
        }
        (greater as f64 + 0.5 * ties as f64) / (np as f64 * nn as f64)
    }

    pub(crate) fn ap_enumeration(scores: &[f64], labels: &[bool]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let n_pos = labels.iter().filter(|&&l| l).count() as f64;
        let mut prev = 0.0;
        let mut area = 0.0;
        for t in thresholds {
            let selected = scores.iter().filter(|&&s| s >= t).count() as f64;
            let tp = scores.iter().zip(labels).filter(|(&s, &l)| s >= t && l).count() as f64;
            let recall = tp / n_pos;
            area += (recall - prev) * (tp / selected);
            prev = recall;
        }
        area
    }

    fn random_case(seed: u64, n: usize, levels: usize) -> (Vec<f64>, Vec<bool>) {
        let mut rng = CounterRng::new(seed);
        let scores = (0..n).map(|_| rng.below(levels) as f64 / 3.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.4).collect();
        labels[0] = true;
        labels[1] = false;
        (scores, labels)
    }

    #[test]
    fn auroc_extremes() {
        let s = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(auroc(&s, &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auroc(&s, &[true, true, false, false]).unwrap(), 0.0);
        assert_eq!(auroc(&[0.5; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert!(matches!(auroc(&s, &[true; 4]), Err(HeadsError::SingleClass)));
    }

    #[test]
    fn auroc_matches_pairs_n50() {
        let (s, l) = random_case(3, 50, 1000);
        assert_eq!(auroc(&s, &l).unwrap(), auroc_pairs(&s, &l));
    }

    #[test]
    fn aupr_cases() {
        let s = [0.9, 0.8, 0.1, 0.05];
        assert_eq!(average_precision(&s, &[true, true, false, false]).unwrap(), 1.0);
        let l = [true, false, false, true, false];
        assert!((average_precision(&[0.3; 5], &l).unwrap() - 0.4).abs() < 1e-15);
        assert!(matches!(
            average_precision(&s, &[false; 4]),
            Err(HeadsError::NoPositives)
        ));
        let (s, l) = random_case(4, 30, 8);
        assert!((average_precision(&s, &l).unwrap() - ap_enumeration(&s, &l)).abs() <= 1e-12);
    }

    #[test]
    fn r2_cases() {
        let t = [1.0, 2.0, 4.0, 3.0];
        assert!((pearson_r2(&t, &t) - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = t.iter().map(|x| -x).collect();
        assert!((pearson_r2(&neg, &t) - 1.0).abs() < 1e-15);
        assert_eq!(pearson_r2(&[2.0; 4], &t), 0.0);

        let mut rng = CounterRng::new(5);
        let x: Vec<f64> = (0..40).map(|_| rng.next_normal()).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.next_normal()).collect();
        let n = 40.0;
        let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|a| a * a).sum();
        let cov = sxy - sx * sy / n;
        let expected = cov * cov / ((sxx - sx * sx / n) * (syy - sy * sy / n));
        assert!((pearson_r2(&x, &y) - expected).abs() <= 1e-12);
    }

    #[test]
    fn multiclass_macro_and_micro() {
        let probs = vec![
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.2, 0.2, 0.6],
            vec![0.6, 0.3, 0.1],
        ];
        let labels = [0, 1, 2, 0];
        assert_eq!(auroc_multiclass(&probs, &labels, Averaging::Macro).unwrap(), 1.0);
        assert_eq!(accuracy(&probs, &labels), 1.0);
        let micro = auroc_multiclass(&probs, &labels, Averaging::Micro).unwrap();
        assert!((0.0..=1.0).contains(&micro));
        let rep = classification_report(&probs, &labels).unwrap();
        assert_eq!(rep.aupr_macro, Some(1.0));
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&v, 0.5), 2.5);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 4.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn auroc_exact_against_pairs(seed in any::<u64>(), n in 2usize..=200, levels in 1usize..50) {
            let (s, l) = random_case(seed, n, levels);
            prop_assert_eq!(auroc(&s, &l).unwrap(), auroc_pairs(&s, &l));
        }

        #[test]
        fn aupr_against_enumeration(seed in any::<u64>(), n in 2usize..=200, levels in 1usize..50) {
            let (s, l) = random_case(seed, n, levels);
            prop_assert!((average_precision(&s, &l).unwrap() - ap_enumeration(&s, &l)).abs() <= 1e-12);
        }

        #[test]
        fn auroc_monotone_invariance(seed in any::<u64>(), n in 2usize..=100, a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let (s, l) = random_case(seed, n, 20);
            let base = auroc(&s, &l).unwrap();
            let exp: Vec<f64> = s.iter().map(|x| x.exp()).collect();
            let aff: Vec<f64> = s.iter().map(|x| a * x + b).collect();
            prop_assert_eq!(auroc(&exp, &l).unwrap(), base);
            prop_assert_eq!(auroc(&aff, &l).unwrap(), base);
        }

        #[test]
        fn r2_affine_invariance(seed in any::<u64>(), a in 0.5f64..4.0, b in -3.0f64..3.0, flip in any::<bool>()) {
            let mut rng = CounterRng::new(seed);
            let x: Vec<f64> = (0..30).map(|_| rng.next_normal()).collect();
            let y: Vec<f64> = x.iter().map(|v| 0.5 * v + rng.next_normal()).collect();
            let slope = if flip { -a } else { a };
            let t: Vec<f64> = x.iter().map(|v| slope * v + b).collect();
            prop_assert!((pearson_r2(&t, &y) - pearson_r2(&x, &y)).abs() <= 1e-9);
        }
    }
}
