//! Empirical checks of the distance-preservation theory behind the embedding.
//!
//! For two volumes with token tensors `A`, `B` on one axis, the slice-wise
//! differences are `Δ_j = A_j − B_j` and the running sums `S_j = Σ_{k≤j} Δ_k`.
//! The raw distance is `√Σ‖Δ_j‖²`; the embedding distance is `‖R S_D‖ / D`.
//! When every `Δ_j` has cosine at least `α_min > 0` with `S_{j−1}`, the
//! embedding distance is sandwiched between `(1−ε)·α_min·d_raw/D` and
//! `(1+ε)·d_raw/√D`.

use serde::Serialize;
use thiserror::Error;

use crate::encoders::TokenTensor;
use crate::par;
use crate::reduction::{PcaModel, PooledTokens, ProjectionMatrix, ReductionError, ScaleMode};
use crate::volumes::Axis;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("token tensors differ in shape or axis")]
    ShapeMismatch,
    #[error("need at least two points")]
    TooFewPoints,
    #[error("points have inconsistent dimension")]
    DimMismatch,
    #[error("cluster is empty")]
    EmptyCluster,
    #[error("need at least {need} reference samples, have {have}")]
    InsufficientSamples { need: usize, have: usize },
    #[error(transparent)]
    Reduction(#[from] ReductionError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

pub const DEFAULT_EPS: f64 = 0.3;
pub const DEFAULT_K: usize = 100;
/// Norms below this make an alignment coefficient undefined.
pub const ALPHA_NORM_FLOOR: f64 = 1e-12;

/// Smallest `K` of the form `⌈8 ε⁻² ln n⌉`.
pub fn jl_dimension(n: usize, eps: f64) -> usize {
    (8.0 * (n as f64).ln() / (eps * eps)).ceil() as usize
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistortionReport {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub eps: f64,
    pub pair_count: usize,
    pub violations: usize,
    /// Largest `|‖Rx−Ry‖²/‖x−y‖² − 1|` seen.
    pub max_observed_distortion: f64,
    pub seed_count: usize,
    /// Pairs of identical points, skipped.
    pub degenerate_pairs: usize,
}

impl DistortionReport {
    pub fn violation_fraction(&self) -> f64 {
        if self.pair_count == 0 {
            0.0
        } else {
            self.violations as f64 / self.pair_count as f64
        }
    }
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    if points.len() < 2 {
        return Err(AnalysisError::TooFewPoints);
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(AnalysisError::DimMismatch);
    }
    Ok(d)
}

/// Pairwise distortion of `points` under each given matrix.
pub fn distortion_report(points: &[Vec<f64>], matrices: &[ProjectionMatrix], eps: f64) -> Result<DistortionReport> {
    let d = check_points(points)?;
    if matrices.iter().any(|r| r.d() != d) {
        return Err(AnalysisError::DimMismatch);
    }
    let n = points.len();
    let per_seed = par::map_slice(matrices, |r| {
        let scale = r.scale_mode().to_isometric(r.k());
        let projected: Vec<Vec<f64>> = points
            .iter()
            .map(|x| r.apply_f64(x).into_iter().map(|v| v * scale).collect())
            .collect();
        let (mut pairs, mut violations, mut degenerate, mut worst) = (0usize, 0usize, 0usize, 0.0f64);
        for i in 0..n {
            for j in i + 1..n {
                let raw: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b).powi(2)).sum();
                if raw == 0.0 {
                    degenerate += 1;
                    continue;
                }
                let emb: f64 = projected[i]
                    .iter()
                    .zip(&projected[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                let dev = (emb / raw - 1.0).abs();
                pairs += 1;
                if dev > eps {
                    violations += 1;
                }
                worst = worst.max(dev);
            }
        }
        (pairs, violations, degenerate, worst)
    });
    let mut report = DistortionReport {
        n,
        d,
        k: matrices.first().map_or(0, |r| r.k()),
        eps,
        pair_count: 0,
        violations: 0,
        max_observed_distortion: 0.0,
        seed_count: matrices.len(),
        degenerate_pairs: 0,
    };
    for (p, v, g, w) in per_seed {
        report.pair_count += p;
        report.violations += v;
        report.degenerate_pairs += g;
        report.max_observed_distortion = report.max_observed_distortion.max(w);
    }
    Ok(report)
}

/// Distortion under fresh `InvSqrtK` matrices, one per seed.
pub fn jl_check(points: &[Vec<f64>], k: usize, eps: f64, seeds: &[u64]) -> Result<DistortionReport> {
    let d = check_points(points)?;
    let matrices: Vec<ProjectionMatrix> = seeds
        .iter()
        .map(|&s| ProjectionMatrix::generate(k, d, s, ScaleMode::InvSqrtK))
        .collect();
    distortion_report(points, &matrices, eps)
}

/// `‖Rz‖²/‖z‖²` for one `InvSqrtK` matrix per seed.
pub fn norm_ratios(z: &[f64], k: usize, seeds: &[u64]) -> Vec<f64> {
    let base = norm2(z);
    par::map_slice(seeds, |&s| {
        let r = ProjectionMatrix::generate(k, z.len(), s, ScaleMode::InvSqrtK);
        norm2(&r.apply_f64(z)) / base
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaProfile {
    pub axis: Axis,
    /// `α_2 … α_D`; undefined coefficients are stored as 0.
    pub alphas: Vec<f64>,
    pub alpha_min: f64,
    pub q05: f64,
    pub zero_count: usize,
}

fn slice_diffs(a: &TokenTensor, b: &TokenTensor) -> Result<Vec<Vec<f64>>> {
    if !a.same_shape(b) {
        return Err(AnalysisError::ShapeMismatch);
    }
    Ok((0..a.slices())
        .map(|j| {
            a.slice(j)
                .iter()
                .zip(b.slice(j))
                .map(|(x, y)| *x as f64 - *y as f64)
                .collect()
        })
        .collect())
}

/// Lower 5th percentile by nearest rank on the sorted values.
fn lower_quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).floor() as usize;
    sorted[idx]
}

pub fn alpha_profile(a: &TokenTensor, b: &TokenTensor) -> Result<AlphaProfile> {
    let diffs = slice_diffs(a, b)?;
    let mut alphas = Vec::with_capacity(diffs.len().saturating_sub(1));
    let mut running = diffs.first().cloned().unwrap_or_default();
    for delta in diffs.iter().skip(1) {
        let nd = norm2(delta).sqrt();
        let ns = norm2(&running).sqrt();
        let alpha = if nd < ALPHA_NORM_FLOOR || ns < ALPHA_NORM_FLOOR {
            0.0
        } else {
            let dot: f64 = delta.iter().zip(&running).map(|(x, y)| x * y).sum();
            (dot / (nd * ns)).clamp(-1.0, 1.0)
        };
        alphas.push(alpha);
        running.iter_mut().zip(delta).for_each(|(s, d)| *s += d);
    }
    let zero_count = alphas.iter().filter(|&&x| x == 0.0).count();
    let (alpha_min, q05) = if alphas.is_empty() {
        (0.0, 0.0)
    } else {
        let mut sorted = alphas.clone();
        sorted.sort_by(f64::total_cmp);
        (sorted[0], lower_quantile(&sorted, 0.05))
    };
    Ok(AlphaProfile {
        axis: a.axis,
        alphas,
        alpha_min,
        q05,
        zero_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistancePair {
    pub d_raw: f64,
    /// Measured as if `R` were in `InvSqrtK` mode.
    pub d_raptor: f64,
}

pub fn distance_pair(a: &TokenTensor, b: &TokenTensor, r: &ProjectionMatrix) -> Result<DistancePair> {
    let diffs = slice_diffs(a, b)?;
    if r.d() != a.dim() {
        return Err(AnalysisError::DimMismatch);
    }
    let d_raw = diffs.iter().map(|x| norm2(x)).sum::<f64>().sqrt();
    let mut total = vec![0.0f64; a.patches() * a.dim()];
    for delta in &diffs {
        total.iter_mut().zip(delta).for_each(|(s, x)| *s += x);
    }
    let mut sq = 0.0;
    for patch in total.chunks_exact(a.dim()) {
        sq += norm2(&r.apply_f64(patch));
    }
    let d_raptor = sq.sqrt() / a.slices() as f64 * r.scale_mode().to_isometric(r.k());
    Ok(DistancePair { d_raw, d_raptor })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub d_raw: f64,
    pub d_raptor: f64,
    pub alpha_min: f64,
    pub lower: f64,
    pub upper: f64,
    pub holds_lower: bool,
    pub holds_upper: bool,
    /// The lower bound is only claimed when `α_min > 0`.
    pub lower_applicable: bool,
}

pub fn bound_check(a: &TokenTensor, b: &TokenTensor, r: &ProjectionMatrix, eps: f64) -> Result<BoundReport> {
    let alpha = alpha_profile(a, b)?;
    let dist = distance_pair(a, b, r)?;
    let slices = a.slices() as f64;
    let lower = (1.0 - eps) * alpha.alpha_min * dist.d_raw / slices;
    let upper = (1.0 + eps) * dist.d_raw / slices.sqrt();
    Ok(BoundReport {
        d_raw: dist.d_raw,
        d_raptor: dist.d_raptor,
        alpha_min: alpha.alpha_min,
        lower,
        upper,
        holds_lower: dist.d_raptor >= lower,
        holds_upper: dist.d_raptor <= upper,
        lower_applicable: alpha.alpha_min > 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Separability {
    pub center_dist_raw: f64,
    pub center_dist_emb: f64,
    /// `center_dist_emb / center_dist_raw`, absent when the raw centers coincide.
    pub ratio: Option<f64>,
}

fn cluster_center(cluster: &[PooledTokens]) -> Result<Vec<f64>> {
    let first = cluster.first().ok_or(AnalysisError::EmptyCluster)?;
    let mut c = vec![0.0f64; first.values().len()];
    for p in cluster {
        if p.values().len() != c.len() {
            return Err(AnalysisError::DimMismatch);
        }
        c.iter_mut().zip(p.values()).for_each(|(s, v)| *s += *v as f64);
    }
    let n = cluster.len() as f64;
    c.iter_mut().for_each(|s| *s /= n);
    Ok(c)
}

/// Distance between cluster centers before and after projecting every
/// patch token.
pub fn separability_check(
    cluster_a: &[PooledTokens],
    cluster_b: &[PooledTokens],
    r: &ProjectionMatrix,
) -> Result<Separability> {
    let ca = cluster_center(cluster_a)?;
    let cb = cluster_center(cluster_b)?;
    if ca.len() != cb.len() || ca.len() % r.d() != 0 {
        return Err(AnalysisError::DimMismatch);
    }
    let diff: Vec<f64> = ca.iter().zip(&cb).map(|(a, b)| a - b).collect();
    let center_dist_raw = norm2(&diff).sqrt();
    let scale = r.scale_mode().to_isometric(r.k());
    let emb_sq: f64 = diff.chunks_exact(r.d()).map(|patch| norm2(&r.apply_f64(patch))).sum();
    let center_dist_emb = emb_sq.sqrt() * scale;
    Ok(Separability {
        center_dist_raw,
        center_dist_emb,
        ratio: (center_dist_raw > 0.0).then(|| center_dist_emb / center_dist_raw),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapRow {
    pub pcs: usize,
    pub reference_fraction: f64,
    pub probe_fraction: f64,
    /// `probe_fraction / reference_fraction`.
    pub ratio: f64,
}

/// Fraction of each set's variance (about the reference mean) captured by the
/// reference's leading principal components.
pub fn variance_overlap(reference: &[Vec<f64>], probe: &[Vec<f64>], pcs: &[usize]) -> Result<Vec<OverlapRow>> {
    let max_pcs = pcs.iter().copied().max().unwrap_or(0);
    if reference.len() < max_pcs.max(1) {
        return Err(AnalysisError::InsufficientSamples {
            need: max_pcs.max(1),
            have: reference.len(),
        });
    }
    let dim = reference[0].len();
    if probe.is_empty() || probe.iter().chain(reference).any(|x| x.len() != dim) {
        return Err(AnalysisError::DimMismatch);
    }
    let model = PcaModel::fit(reference, max_pcs)?;
    let mean = model.mean().to_vec();

    // Squared score per component, summed over samples, plus the total.
    let captured = |set: &[Vec<f64>]| -> (Vec<f64>, f64) {
        let mut per = vec![0.0; max_pcs];
        let mut total = 0.0;
        for x in set {
            let centered: Vec<f64> = x.iter().zip(&mean).map(|(a, m)| a - m).collect();
            total += norm2(&centered);
            for (c, acc) in per.iter_mut().enumerate() {
                let s: f64 = model.component(c).iter().zip(&centered).map(|(u, v)| u * v).sum();
                *acc += s * s;
            }
        }
        (per, total)
    };
    let (ref_per, ref_total) = captured(reference);
    let (probe_per, probe_total) = captured(probe);
    let frac = |per: &[f64], total: f64, k: usize| {
        if total <= 0.0 {
            1.0
        } else {
            (per[..k].iter().sum::<f64>() / total).min(1.0)
        }
    };
    Ok(pcs
        .iter()
        .map(|&k| {
            let reference_fraction = frac(&ref_per, ref_total, k);
            let probe_fraction = frac(&probe_per, probe_total, k);
            OverlapRow {
                pcs: k,
                reference_fraction,
                probe_fraction,
                ratio: if reference_fraction > 0.0 {
                    probe_fraction / reference_fraction
                } else {
                    0.0
                },
            }
        })
        .collect())
}
