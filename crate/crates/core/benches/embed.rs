//! Batch embedding on the worker pool against a single-threaded run.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use raptor::encoders::{EncoderSpec, SyntheticEncoder};
use raptor::par;
use raptor::reduction::{embed_volume, AxisSet, Embedding, ProjectionMatrix, ScaleMode};
use raptor::rng::CounterRng;
use raptor::volumes::Volume;

fn volumes(n: usize, side: usize) -> Vec<Volume> {
    (0..n)
        .map(|i| {
            let mut rng = CounterRng::derived(1, i as u64);
            let voxels = (0..side * side * side).map(|_| rng.next_f64() as f32).collect();
            Volume::cube(format!("v{i}"), side, voxels).unwrap()
        })
        .collect()
}

fn embed_all(vols: &[Volume], enc: &SyntheticEncoder, r: &ProjectionMatrix) -> Vec<Embedding> {
    par::map_slice(vols, |v| embed_volume(v, enc, r, AxisSet::ALL, None).unwrap())
}

fn batch(c: &mut Criterion) {
    let mut group = c.benchmark_group("embed_batch");
    group.sample_size(10);
    for side in [32, 64] {
        let vols = volumes(8, side);
        let enc = SyntheticEncoder::new(EncoderSpec::synthetic(8, 64, 0)).unwrap();
        let r = ProjectionMatrix::generate(10, 64, 0, ScaleMode::InvSqrtK);
        group.bench_with_input(BenchmarkId::new("parallel", side), &vols, |b, vols| {
            b.iter(|| black_box(embed_all(vols, &enc, &r)))
        });
        group.bench_with_input(BenchmarkId::new("sequential", side), &vols, |b, vols| {
            b.iter(|| par::sequential(|| black_box(embed_all(vols, &enc, &r))))
        });
    }
    group.finish();
}

criterion_group!(benches, batch);
criterion_main!(benches);
