//! Small labelled volume sets for the reliability, view and data-scarcity
//! experiments. Both use `32³` volumes so that a `T = 8` synthetic encoder
//! gives a `4 × 4` patch grid.

use super::phantom::{add_gaussian, BlobPhantom};
use super::{Result, SimDataset};
use crate::par;
use crate::rng::{self, CounterRng};
use crate::volumes::Volume;

pub const BUILTIN_SIDE: usize = 32;
pub const BUILTIN_PATCH: usize = 8;
pub const BUILTIN_TOKEN_DIM: usize = 128;

/// Host anatomy occupies `[0, HOST_PEAK]`, leaving headroom for the
/// inserted structures.
const HOST_PEAK: f32 = 0.5;

fn host(seed: u64) -> Vec<f32> {
    let mut voxels = BlobPhantom {
        extent: BUILTIN_SIDE,
        blobs: 6,
        sigma_range: (0.08, 0.2),
        amplitude_range: (0.3, 1.0),
        noise_std: 0.0,
        ..BlobPhantom::default()
    }
    .generate("", seed)
    .into_voxels();
    voxels.iter_mut().for_each(|v| *v *= HOST_PEAK);
    voxels
}

fn assemble(samples: Vec<(Volume, usize)>) -> SimDataset {
    let n = samples.len();
    let (volumes, labels) = samples.into_iter().unzip();
    SimDataset {
        volumes,
        labels,
        records: vec![None; n],
    }
}

const BLOB_SIGMA: f64 = 2.5;
const BLOB_AMPLITUDE: f64 = 0.6;

/// Class 1 volumes contain an extra compact bright blob at a random position.
pub fn blob_task(n: usize, seed: u64) -> Result<SimDataset> {
    let side = BUILTIN_SIDE;
    let samples = par::try_map_range(n, |i| {
        let s = rng::derive_seed(seed, i as u64);
        let mut voxels = host(rng::derive_seed(s, 0));
        let mut rng = CounterRng::derived(s, 1);
        let label = i % 2;
        if label == 1 {
            let center: [f64; 3] = std::array::from_fn(|_| rng.uniform(6.0, side as f64 - 6.0));
            add_gaussian(&mut voxels, side, center, [BLOB_SIGMA; 3], BLOB_AMPLITUDE);
        }
        voxels.iter_mut().for_each(|v| *v += (0.03 * rng.next_normal()) as f32);
        Volume::cube(format!("blob{i:05}"), side, voxels).map(|v| (v, label))
    })?;
    Ok(assemble(samples))
}

/// A bright rod of 3×3 cross-section runs along the full first axis at a
/// random `y`; its `z` position is low for class 0 and high for class 1.
/// Averaging over the last axis erases `z`, so only views slicing across the
/// rod see the label.
pub fn axial_rod_task(n: usize, seed: u64) -> Result<SimDataset> {
    let side = BUILTIN_SIDE;
    let samples = par::try_map_range(n, |i| {
        let s = rng::derive_seed(seed, i as u64);
        let mut voxels = host(rng::derive_seed(s, 0));
        let mut rng = CounterRng::derived(s, 1);
        let label = i % 2;
        let y0 = 2 + rng.below(side - 5);
        let z0 = if label == 0 {
            4 + rng.below(6)
        } else {
            side - 11 + rng.below(6)
        };
        for x in 0..side {
            for y in y0..y0 + 3 {
                for z in z0..z0 + 3 {
                    let v = &mut voxels[(x * side + y) * side + z];
                    *v = v.max(1.0);
                }
            }
        }
        voxels.iter_mut().for_each(|v| *v += (0.03 * rng.next_normal()) as f32);
        Volume::cube(format!("rod{i:05}"), side, voxels).map(|v| (v, label))
    })?;
    Ok(assemble(samples))
}
