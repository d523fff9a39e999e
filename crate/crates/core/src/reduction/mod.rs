//! Planar reduction: mean-pool each view over its slices, project every
//! patch token with one shared random matrix, and flatten.
//!
//! The embedding of a volume is laid out axis-major (axial, coronal,
//! sagittal, skipping unselected axes), then patch index in row-major order,
//! then projection component `0..K`.

mod bench;
mod pca;
mod projection;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoders::{EncoderError, EncoderId, SyntheticEncoder, TokenTensor};
use crate::rng;
use crate::volumes::{self, Axis, NormalizeMode, Volume, VolumeError};

pub use bench::{bench_csv, bench_embed, rp_vs_pca, BenchConfig, BenchRow, RpPcaTiming};
pub use pca::{pca_reduce, PcaModel, PcaReduction};
pub use projection::{ProjectionMatrix, ScaleMode};

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("no token tensor for the {0} axis")]
    AxisMissing(Axis),
    #[error("axis selection is empty")]
    EmptyAxes,
    #[error("token tensors disagree on encoder or patch grid")]
    InconsistentInputs,
    #[error("need at least {need} samples, have {have}")]
    InsufficientSamples { need: usize, have: usize },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T> = std::result::Result<T, ReductionError>;

/// Bitmask of selected views: bit 0 axial, bit 1 coronal, bit 2 sagittal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AxisSet(u8);

impl AxisSet {
    pub const ALL: AxisSet = AxisSet(0b111);

    pub fn from_bits(bits: u8) -> Option<Self> {
        (bits != 0 && bits & !0b111 == 0).then_some(AxisSet(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn single(axis: Axis) -> Self {
        AxisSet(1 << axis.index())
    }

    pub fn contains(self, axis: Axis) -> bool {
        self.0 & (1 << axis.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Selected axes in canonical order.
    pub fn iter(self) -> impl Iterator<Item = Axis> {
        Axis::ALL.into_iter().filter(move |a| self.contains(*a))
    }

    /// The seven nonempty subsets, singles first.
    pub fn nonempty_subsets() -> [AxisSet; 7] {
        [1, 2, 4, 3, 6, 5, 7].map(AxisSet)
    }
}

impl fmt::Display for AxisSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in self.iter() {
            write!(f, "{}", a.letter())?;
        }
        Ok(())
    }
}

impl FromStr for AxisSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let mut bits = 0u8;
        for c in s.chars().filter(|c| *c != ',') {
            let axis = Axis::from_letter(c).ok_or_else(|| format!("unknown axis letter {c:?}"))?;
            bits |= 1 << axis.index();
        }
        AxisSet::from_bits(bits).ok_or_else(|| "axis selection is empty".to_string())
    }
}

/// Slice-averaged `p² × d` token grid of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledTokens {
    pub axis: Axis,
    patches_per_side: usize,
    dim: usize,
    values: Vec<f32>,
    pub encoder_id: EncoderId,
}

impl PooledTokens {
    pub fn new(
        axis: Axis,
        patches_per_side: usize,
        dim: usize,
        values: Vec<f32>,
        encoder_id: EncoderId,
    ) -> Result<Self> {
        let expected = patches_per_side * patches_per_side * dim;
        if values.len() != expected {
            return Err(ReductionError::DimMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Self {
            axis,
            patches_per_side,
            dim,
            values,
            encoder_id,
        })
    }

    pub fn patches_per_side(&self) -> usize {
        self.patches_per_side
    }

    pub fn patches(&self) -> usize {
        self.patches_per_side * self.patches_per_side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn token(&self, patch: usize) -> &[f32] {
        &self.values[patch * self.dim..(patch + 1) * self.dim]
    }
}

/// Mean over slices. Sums run in ascending slice order with f64
/// accumulators so the result never depends on scheduling.
pub fn mean_pool(t: &TokenTensor) -> PooledTokens {
    let n = t.patches() * t.dim();
    let mut acc = vec![0.0f64; n];
    for j in 0..t.slices() {
        for (a, &v) in acc.iter_mut().zip(t.slice(j)) {
            *a += v as f64;
        }
    }
    let count = t.slices() as f64;
    PooledTokens {
        axis: t.axis,
        patches_per_side: t.patches_per_side(),
        dim: t.dim(),
        values: acc.into_iter().map(|s| (s / count) as f32).collect(),
        encoder_id: t.encoder_id,
    }
}

/// Projected tokens of one view, stored patch-major (`K` components per
/// patch, contiguous).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedTokens {
    pub axis: Axis,
    k: usize,
    patches: usize,
    values: Vec<f32>,
}

impl ProjectedTokens {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    /// Component `k` of patch `q`.
    pub fn get(&self, k: usize, q: usize) -> f32 {
        self.values[q * self.k + k]
    }

    /// Flattened in (patch, component) order.
    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Applies `R` to every patch token: `out[:, q] = R · pooled[q, :]`.
pub fn project(pooled: &PooledTokens, r: &ProjectionMatrix) -> Result<ProjectedTokens> {
    if r.d() != pooled.dim {
        return Err(ReductionError::DimMismatch {
            expected: r.d(),
            got: pooled.dim,
        });
    }
    let k = r.k();
    let patches = pooled.patches();
    let mut values = vec![0.0f32; patches * k];
    for (q, out) in values.chunks_exact_mut(k).enumerate() {
        r.apply_into(pooled.token(q), out);
    }
    Ok(ProjectedTokens {
        axis: pooled.axis,
        k,
        patches,
        values,
    })
}

/// Provenance carried with every embedding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub k: usize,
    pub p: usize,
    pub d: usize,
    pub seed: u64,
    pub scale_mode: ScaleMode,
    pub axes: AxisSet,
    pub encoder_id: EncoderId,
    pub prng_code: u16,
    pub volume_id: String,
}

impl EmbeddingMeta {
    /// `|axes| · K · p²`.
    pub fn len(&self) -> usize {
        self.axes.len() * self.k * self.p * self.p
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f32>,
    pub meta: EmbeddingMeta,
}

impl Embedding {
    pub fn with_volume_id(mut self, id: impl Into<String>) -> Self {
        self.meta.volume_id = id.into();
        self
    }

    /// The contiguous block belonging to one selected axis.
    pub fn axis_block(&self, axis: Axis) -> Option<&[f32]> {
        let block = self.meta.k * self.meta.p * self.meta.p;
        let pos = self.meta.axes.iter().position(|a| a == axis)?;
        Some(&self.vector[pos * block..(pos + 1) * block])
    }
}

/// Builds the embedding from already pooled views.
pub fn embed_pooled(pooled: &[PooledTokens], r: &ProjectionMatrix, axes: AxisSet) -> Result<Embedding> {
    if axes.is_empty() {
        return Err(ReductionError::EmptyAxes);
    }
    let mut selected = Vec::with_capacity(3);
    for axis in axes.iter() {
        let view = pooled
            .iter()
            .find(|p| p.axis == axis)
            .ok_or(ReductionError::AxisMissing(axis))?;
        selected.push(view);
    }
    let first = selected[0];
    if selected
        .iter()
        .any(|v| v.patches_per_side != first.patches_per_side || v.dim != first.dim || v.encoder_id != first.encoder_id)
    {
        return Err(ReductionError::InconsistentInputs);
    }
    let mut vector = Vec::with_capacity(axes.len() * r.k() * first.patches());
    for view in &selected {
        vector.extend_from_slice(project(view, r)?.values());
    }
    Ok(Embedding {
        vector,
        meta: EmbeddingMeta {
            k: r.k(),
            p: first.patches_per_side,
            d: first.dim,
            seed: r.seed(),
            scale_mode: r.scale_mode(),
            axes,
            encoder_id: first.encoder_id,
            prng_code: rng::PRNG_CODE,
            volume_id: String::new(),
        },
    })
}

/// Full reduction from per-axis token tensors: `project(mean_pool(t), R)`
/// for each selected axis, flattened in canonical order.
pub fn raptor_embed(tensors: &[TokenTensor], r: &ProjectionMatrix, axes: AxisSet) -> Result<Embedding> {
    if axes.is_empty() {
        return Err(ReductionError::EmptyAxes);
    }
    let mut pooled = Vec::with_capacity(3);
    for axis in axes.iter() {
        let t = tensors
            .iter()
            .find(|t| t.axis == axis)
            .ok_or(ReductionError::AxisMissing(axis))?;
        pooled.push(mean_pool(t));
    }
    embed_pooled(&pooled, r, axes)
}

/// Min–max normalization followed, when needed, by resampling to a
/// `target³` cube (or to the largest extent when `target` is `None`).
pub fn prepare_volume(v: &Volume, target: Option<usize>) -> Result<Volume> {
    let n = volumes::normalize(v, NormalizeMode::GlobalMinMax);
    let side = target.unwrap_or_else(|| n.dims().into_iter().max().unwrap_or(1));
    if n.dims() == [side; 3] {
        Ok(n)
    } else {
        Ok(volumes::resample(&n, side)?)
    }
}

/// Prepares, slices, encodes and pools the selected views of one volume.
pub fn pool_volume(
    v: &Volume,
    encoder: &SyntheticEncoder,
    target: Option<usize>,
    axes: AxisSet,
) -> Result<Vec<PooledTokens>> {
    let prepared = prepare_volume(v, target)?;
    axes.iter()
        .map(|axis| {
            let stack = volumes::slice_stack(&prepared, axis)?;
            Ok(mean_pool(&encoder.encode_stack(&stack)?))
        })
        .collect()
}

/// End-to-end embedding of one volume with the synthetic encoder.
pub fn embed_volume(
    v: &Volume,
    encoder: &SyntheticEncoder,
    r: &ProjectionMatrix,
    axes: AxisSet,
    target: Option<usize>,
) -> Result<Embedding> {
    let pooled = pool_volume(v, encoder, target, axes)?;
    Ok(embed_pooled(&pooled, r, axes)?.with_volume_id(v.id.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use proptest::prelude::*;

    fn tensor(seed: u64, axis: Axis, slices: usize, p: usize, d: usize) -> TokenTensor {
        let mut rng = CounterRng::new(seed);
        TokenTensor::new(
            axis,
            slices,
            p,
            d,
            (0..slices * p * p * d).map(|_| rng.next_normal() as f32).collect(),
            [1; 32],
        )
        .unwrap()
    }

    fn tensor_from_slices(axis: Axis, p: usize, d: usize, slices: &[Vec<f32>]) -> TokenTensor {
        TokenTensor::new(axis, slices.len(), p, d, slices.concat(), [1; 32]).unwrap()
    }

    #[test]
    fn pool_of_identical_slices() {
        let mut rng = CounterRng::new(1);
        let a: Vec<f32> = (0..4 * 6).map(|_| rng.next_normal() as f32).collect();
        let t = tensor_from_slices(Axis::Axial, 2, 6, &vec![a.clone(); 5]);
        assert_eq!(mean_pool(&t).values(), &a[..]);
    }

    #[test]
    fn pool_of_two_slices_is_midpoint() {
        let mut rng = CounterRng::new(2);
        let a: Vec<f32> = (0..9 * 3).map(|_| rng.next_normal() as f32).collect();
        let b: Vec<f32> = (0..9 * 3).map(|_| rng.next_normal() as f32).collect();
        let t = tensor_from_slices(Axis::Coronal, 3, 3, &[a.clone(), b.clone()]);
        let expected: Vec<f32> = a
            .iter()
            .zip(&b)
            .map(|(x, y)| ((*x as f64 + *y as f64) / 2.0) as f32)
            .collect();
        assert_eq!(mean_pool(&t).values(), &expected[..]);
    }

    #[test]
    fn pool_matches_loop_oracle() {
        let t = tensor(3, Axis::Sagittal, 7, 3, 5);
        let pooled = mean_pool(&t);
        for q in 0..9 {
            for c in 0..5 {
                let mut s = 0.0f64;
                for j in 0..7 {
                    s += t.token(j, q)[c] as f64;
                }
                assert!((pooled.token(q)[c] as f64 - s / 7.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn identity_projection_is_transpose() {
        let t = tensor(4, Axis::Axial, 3, 2, 6);
        let pooled = mean_pool(&t);
        let out = project(&pooled, &ProjectionMatrix::identity(6)).unwrap();
        for q in 0..4 {
            for k in 0..6 {
                assert_eq!(out.get(k, q), pooled.token(q)[k]);
            }
        }
    }

    #[test]
    fn zero_tokens_project_to_zero() {
        let pooled = PooledTokens::new(Axis::Axial, 2, 8, vec![0.0; 32], [0; 32]).unwrap();
        let r = ProjectionMatrix::generate(3, 8, 1, ScaleMode::Unit);
        assert!(project(&pooled, &r).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_matches_triple_loop() {
        let t = tensor(5, Axis::Axial, 2, 3, 40);
        let pooled = mean_pool(&t);
        let r = ProjectionMatrix::generate(7, 40, 11, ScaleMode::InvSqrtK);
        let out = project(&pooled, &r).unwrap();
        for q in 0..9 {
            for k in 0..7 {
                let mut s = 0.0f64;
                for l in 0..40 {
                    s += r.entries()[k * 40 + l] as f64 * pooled.token(q)[l] as f64;
                }
                let got = out.get(k, q) as f64;
                assert!((got - s).abs() <= 1e-5 * s.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn dim_mismatch_and_missing_axis() {
        let t = tensor(6, Axis::Axial, 2, 2, 5);
        let r = ProjectionMatrix::generate(3, 6, 0, ScaleMode::Unit);
        assert!(matches!(
            project(&mean_pool(&t), &r),
            Err(ReductionError::DimMismatch { expected: 6, got: 5 })
        ));
        let r5 = ProjectionMatrix::generate(3, 5, 0, ScaleMode::Unit);
        assert!(matches!(
            raptor_embed(&[t], &r5, AxisSet::ALL),
            Err(ReductionError::AxisMissing(Axis::Coronal))
        ));
    }

    #[test]
    fn embedding_lengths_for_reported_settings() {
        let tensors: Vec<TokenTensor> = Axis::ALL
            .iter()
            .map(|&a| tensor(7 + a.index() as u64, a, 2, 16, 128))
            .collect();
        for (k, len) in [(100, 76_800), (10, 7_680)] {
            let r = ProjectionMatrix::generate(k, 128, 0, ScaleMode::InvSqrtK);
            let e = raptor_embed(&tensors, &r, AxisSet::ALL).unwrap();
            assert_eq!(e.vector.len(), len);
            assert_eq!(e.meta.len(), len);
        }
    }

    #[test]
    fn single_axis_is_contiguous_block() {
        let tensors: Vec<TokenTensor> = Axis::ALL
            .iter()
            .map(|&a| tensor(20 + a.index() as u64, a, 3, 2, 12))
            .collect();
        let r = ProjectionMatrix::generate(4, 12, 9, ScaleMode::InvSqrtK);
        let full = raptor_embed(&tensors, &r, AxisSet::ALL).unwrap();
        let block = 4 * 4;
        for (i, axis) in Axis::ALL.into_iter().enumerate() {
            let single = raptor_embed(&tensors, &r, AxisSet::single(axis)).unwrap();
            assert_eq!(single.vector, &full.vector[i * block..(i + 1) * block]);
            assert_eq!(full.axis_block(axis).unwrap(), &single.vector[..]);
        }
    }

    #[test]
    fn axis_set_parsing() {
        assert_eq!("acs".parse::<AxisSet>().unwrap(), AxisSet::ALL);
        assert_eq!("sa".parse::<AxisSet>().unwrap().to_string(), "as");
        assert!("".parse::<AxisSet>().is_err());
        assert!("x".parse::<AxisSet>().is_err());
        assert_eq!(AxisSet::nonempty_subsets().len(), 7);
    }

    #[test]
    fn sub_cubic_size() {
        for k in 1..=150 {
            for side in [64usize, 128, 256, 512] {
                assert!(3 * k * 16 * 16 < side * side * side);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pooling_commutes_with_projection(seed in 0u64..1000, slices in 1usize..6, p in 1usize..4, d in 1usize..24, k in 1usize..10) {
            let t = tensor(seed, Axis::Axial, slices, p, d);
            let r = ProjectionMatrix::generate(k, d, seed ^ 7, ScaleMode::InvSqrtK);
            let lhs = project(&mean_pool(&t), &r).unwrap();
            let mut rhs = vec![0.0f64; p * p * k];
            for j in 0..slices {
                let one = PooledTokens::new(Axis::Axial, p, d, t.slice(j).to_vec(), [1; 32]).unwrap();
                for (acc, v) in rhs.iter_mut().zip(project(&one, &r).unwrap().values()) {
                    *acc += *v as f64 / slices as f64;
                }
            }
            let diff: f64 = lhs.values().iter().zip(&rhs).map(|(a, b)| (*a as f64 - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
            prop_assert!(diff <= 1e-5 * norm.max(1e-12));
        }

        #[test]
        fn power_of_two_scaling_is_exact(seed in 0u64..1000, exp in -4i32..5) {
            let c = 2f32.powi(exp);
            let tensors: Vec<TokenTensor> = Axis::ALL.iter().map(|&a| tensor(seed + a.index() as u64, a, 3, 2, 9)).collect();
            let scaled: Vec<TokenTensor> = tensors.iter().map(|t| t.scaled(c)).collect();
            let r = ProjectionMatrix::generate(5, 9, seed, ScaleMode::InvSqrtK);
            let a = raptor_embed(&tensors, &r, AxisSet::ALL).unwrap();
            let b = raptor_embed(&scaled, &r, AxisSet::ALL).unwrap();
            for (x, y) in a.vector.iter().zip(&b.vector) {
                prop_assert_eq!((x * c).to_bits(), y.to_bits());
            }
        }
    }
}
