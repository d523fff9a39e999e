//! Wall-clock timing of the embedding pipeline.
//!
//! The patch grid `p` is held fixed while the volume side `D` varies, so the
//! patch size is `T = D / p`. Encoding is timed and reported on its own; the
//! reduction total is pooling plus projection, which is the part whose cost
//! scales as `p²dN(D + K)`.

use std::time::Instant;

use serde::Serialize;

use super::{mean_pool, pca_reduce, project, PooledTokens, ProjectionMatrix, Result, ScaleMode};
use crate::encoders::{EncoderSpec, SyntheticEncoder, TokenTensor};
use crate::par;
use crate::rng::{self, CounterRng};
use crate::volumes::{slice_stack, Axis, Volume};

#[derive(Debug, Clone, Serialize)]
pub struct BenchConfig {
    pub d_list: Vec<usize>,
    pub k_list: Vec<usize>,
    pub n: usize,
    pub patches_per_side: usize,
    pub token_dim: usize,
    /// Pool and projection timings keep the minimum over this many runs.
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            d_list: vec![32, 64, 128],
            k_list: vec![10, 100, 200],
            n: 4,
            patches_per_side: 4,
            token_dim: 64,
            reps: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    #[serde(rename = "D")]
    pub d_side: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub encode_ms: f64,
    pub pool_ms: f64,
    pub project_ms: f64,
    pub total_ms: f64,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn random_volume(seed: u64, index: u64, side: usize) -> Volume {
    let mut rng = CounterRng::derived(seed, index);
    let voxels = (0..side * side * side).map(|_| rng.next_f64() as f32).collect();
    Volume::cube(format!("bench{index}"), side, voxels).expect("finite voxels")
}

fn min_time<R>(reps: usize, mut f: impl FnMut() -> R) -> (f64, R) {
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        let r = f();
        best = best.min(ms(t));
        last = Some(r);
    }
    (best, last.expect("at least one rep"))
}

/// Times every `(D, K)` combination on one worker.
pub fn bench_embed(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    par::sequential(|| bench_inner(cfg))
}

fn bench_inner(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let p = cfg.patches_per_side;
    let mut rows = Vec::new();
    for &side in &cfg.d_list {
        if p == 0 || side % p != 0 {
            return Err(crate::encoders::EncoderError::ShapeMismatch { side, patch: p }.into());
        }
        let spec = EncoderSpec::synthetic(side / p, cfg.token_dim, cfg.seed);
        let encoder = SyntheticEncoder::new(spec)?;
        let volumes: Vec<Volume> = (0..cfg.n as u64).map(|i| random_volume(cfg.seed, i, side)).collect();

        let t = Instant::now();
        let mut tensors: Vec<TokenTensor> = Vec::with_capacity(cfg.n * 3);
        for v in &volumes {
            for axis in Axis::ALL {
                tensors.push(encoder.encode_stack(&slice_stack(v, axis)?)?);
            }
        }
        let encode_ms = ms(t);

        let (pool_ms, pooled) = min_time(cfg.reps, || {
            tensors.iter().map(mean_pool).collect::<Vec<PooledTokens>>()
        });
        for &k in &cfg.k_list {
            let r = ProjectionMatrix::generate(
                k,
                cfg.token_dim,
                rng::derive_seed(cfg.seed, k as u64),
                ScaleMode::InvSqrtK,
            );
            let (project_ms, out) = min_time(cfg.reps, || {
                pooled.iter().map(|pt| project(pt, &r)).collect::<Result<Vec<_>>>()
            });
            out?;
            rows.push(BenchRow {
                d_side: side,
                k,
                n: cfg.n,
                encode_ms,
                pool_ms,
                project_ms,
                total_ms: pool_ms + project_ms,
            });
        }
    }
    Ok(rows)
}

/// Renders rows as CSV with the header `D,K,N,encode_ms,pool_ms,project_ms,total_ms`.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("D,K,N,encode_ms,pool_ms,project_ms,total_ms\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{:.4},{:.4},{:.4},{:.4}\n",
            r.d_side, r.k, r.n, r.encode_ms, r.pool_ms, r.project_ms, r.total_ms
        ));
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct RpPcaTiming {
    pub d: usize,
    pub k: usize,
    pub n: usize,
    /// Matrix generation plus projection of all samples.
    pub rp_ms: f64,
    /// Covariance, eigendecomposition and projection.
    pub pca_ms: f64,
}

/// Random projection against the full-covariance PCA baseline on `n`
/// single-patch pooled vectors.
pub fn rp_vs_pca(d: usize, k: usize, n: usize, seed: u64) -> Result<RpPcaTiming> {
    par::sequential(|| {
        let pooled: Vec<PooledTokens> = (0..n as u64)
            .map(|i| {
                let mut rng = CounterRng::derived(seed, i);
                let values = (0..d).map(|_| rng.next_normal() as f32).collect();
                PooledTokens::new(Axis::Axial, 1, d, values, [0; 32])
            })
            .collect::<Result<_>>()?;

        let t = Instant::now();
        let r = ProjectionMatrix::generate(k, d, seed, ScaleMode::InvSqrtK);
        for pt in &pooled {
            std::hint::black_box(project(pt, &r)?);
        }
        let rp_ms = ms(t);

        let t = Instant::now();
        std::hint::black_box(pca_reduce(&pooled, k)?);
        let pca_ms = ms(t);

        Ok(RpPcaTiming { d, k, n, rp_ms, pca_ms })
    })
}
