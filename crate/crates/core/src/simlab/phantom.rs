//! Procedural host volumes.

use serde::Serialize;

use crate::rng::CounterRng;
use crate::volumes::Volume;

/// How the summed blobs are mapped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HostScaling {
    /// Per-volume min–max rescaling.
    MinMax,
    /// Values are clipped to `[0, 1]`, like a fixed intensity window.
    Window,
}

/// Sum of seeded isotropic 3D Gaussians plus white noise, mapped to
/// `[0, 1]` by `scaling`.
///
/// Without a layout seed every sample draws its own blobs. With one, all
/// samples share the layout's blobs and perturb them by `jitter`: centers
/// move by `jitter · extent` standard deviations, amplitudes and widths
/// scale by `1 + jitter · N(0, 1)`.
#[derive(Debug, Clone, Serialize)]
pub struct BlobPhantom {
    pub extent: usize,
    pub blobs: usize,
    /// Blob standard deviations as fractions of the extent.
    pub sigma_range: (f64, f64),
    pub amplitude_range: (f64, f64),
    pub noise_std: f64,
    pub layout_seed: Option<u64>,
    pub jitter: f64,
    pub scaling: HostScaling,
}

impl Default for BlobPhantom {
    fn default() -> Self {
        Self {
            extent: 128,
            blobs: 8,
            sigma_range: (0.06, 0.18),
            amplitude_range: (0.3, 1.0),
            noise_std: 0.02,
            layout_seed: None,
            jitter: 0.0,
            scaling: HostScaling::MinMax,
        }
    }
}

struct Blob {
    center: [f64; 3],
    sigma: f64,
    amp: f64,
}

impl BlobPhantom {
    fn draw(&self, rng: &mut CounterRng) -> Blob {
        let n = self.extent as f64;
        Blob {
            center: std::array::from_fn(|_| rng.uniform(0.1, 0.9) * n),
            sigma: rng.uniform(self.sigma_range.0, self.sigma_range.1) * n,
            amp: rng.uniform(self.amplitude_range.0, self.amplitude_range.1),
        }
    }

    fn blobs_for(&self, rng: &mut CounterRng) -> Vec<Blob> {
        let Some(layout) = self.layout_seed else {
            return (0..self.blobs).map(|_| self.draw(rng)).collect();
        };
        let mut base = CounterRng::new(layout);
        let n = self.extent as f64;
        (0..self.blobs)
            .map(|_| {
                let b = self.draw(&mut base);
                Blob {
                    center: b.center.map(|c| c + self.jitter * n * rng.next_normal()),
                    sigma: b.sigma * (1.0 + self.jitter * rng.next_normal()).max(0.1),
                    amp: b.amp * (1.0 + self.jitter * rng.next_normal()).max(0.0),
                }
            })
            .collect()
    }

    pub fn generate(&self, id: impl Into<String>, seed: u64) -> Volume {
        let n = self.extent;
        let mut rng = CounterRng::new(seed);
        let mut voxels = vec![0.0f32; n * n * n];
        for b in self.blobs_for(&mut rng) {
            add_gaussian(&mut voxels, n, b.center, [b.sigma; 3], b.amp);
        }
        if self.noise_std > 0.0 {
            voxels
                .iter_mut()
                .for_each(|v| *v += (self.noise_std * rng.next_normal()) as f32);
        }
        match self.scaling {
            HostScaling::MinMax => rescale_unit(&mut voxels),
            HostScaling::Window => voxels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0)),
        }
        Volume::cube(id, n, voxels).expect("finite phantom")
    }
}

/// Adds `amp · exp(−½ Σ ((x_i − c_i)/σ_i)²)` using separable 1D factors.
pub fn add_gaussian(voxels: &mut [f32], n: usize, center: [f64; 3], sigma: [f64; 3], amp: f64) {
    let factor = |axis: usize| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5 - center[axis]) / sigma[axis];
                (-0.5 * t * t).exp()
            })
            .collect()
    };
    let (fx, fy, fz) = (factor(0), factor(1), factor(2));
    for x in 0..n {
        let ax = amp * fx[x];
        if ax < 1e-9 {
            continue;
        }
        for y in 0..n {
            let axy = ax * fy[y];
            if axy < 1e-9 {
                continue;
            }
            let row = &mut voxels[(x * n + y) * n..(x * n + y + 1) * n];
            row.iter_mut().zip(&fz).for_each(|(v, f)| *v += (axy * f) as f32);
        }
    }
}

pub fn rescale_unit(voxels: &mut [f32]) {
    let (lo, hi) = voxels
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    voxels
        .iter_mut()
        .for_each(|v| *v = if span > 0.0 { (*v - lo) / span } else { 0.0 });
}

/// Acquisition noise of the default structured phantom, in gray levels.
pub const STRUCTURED_NOISE_STD: f64 = 4.0;

/// Head-like 8-bit phantom: scalp and skull shells, textured brain tissue,
/// ventricles and a few focal lesions, with acquisition noise inside the
/// head. Air stays exactly zero.
pub fn structured_phantom(side: usize, seed: u64, noise_std: f64) -> Vec<u8> {
    let mut rng = CounterRng::new(seed);
    let phases: [f64; 6] = std::array::from_fn(|_| rng.uniform(0.0, std::f64::consts::TAU));
    let lesions: Vec<([f64; 3], f64)> = (0..4)
        .map(|_| {
            (
                [rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)],
                rng.uniform(0.03, 0.08),
            )
        })
        .collect();
    let mut noise = CounterRng::derived(seed, 1);
    let ell = |u: [f64; 3], r: [f64; 3]| (u[0] / r[0]).powi(2) + (u[1] / r[1]).powi(2) + (u[2] / r[2]).powi(2);
    let mut out = vec![0u8; side * side * side];
    let scale = 2.0 / side as f64;
    for x in 0..side {
        for y in 0..side {
            for z in 0..side {
                let u = [
                    (x as f64 + 0.5) * scale - 1.0,
                    (y as f64 + 0.5) * scale - 1.0,
                    (z as f64 + 0.5) * scale - 1.0,
                ];
                let head = ell(u, [0.86, 0.74, 0.92]);
                if head > 1.0 {
                    continue;
                }
                let value = if ell(u, [0.80, 0.68, 0.86]) > 1.0 {
                    95.0
                } else if ell(u, [0.75, 0.63, 0.81]) > 1.0 {
                    225.0
                } else {
                    let texture = 9.0 * (5.0 * u[0] + phases[0]).sin() * (4.0 * u[1] + phases[1]).sin()
                        + 6.0 * (11.0 * u[2] + phases[2]).sin() * (9.0 * u[0] + phases[3]).cos()
                        + 4.0 * (17.0 * u[1] + phases[4]).sin() * (13.0 * u[2] + phases[5]).sin();
                    let mut v = 120.0 + texture;
                    let lv = [u[0] - 0.05, u[1].abs() - 0.12, u[2]];
                    if ell(lv, [0.22, 0.07, 0.3]) <= 1.0 {
                        v = 35.0;
                    }
                    for (c, r) in &lesions {
                        let d = (u[0] - c[0]).powi(2) + (u[1] - c[1]).powi(2) + (u[2] - c[2]).powi(2);
                        if d <= r * r {
                            v = 165.0;
                        }
                    }
                    v
                };
                let noisy = value + noise_std * noise.next_normal();
                out[(x * side + y) * side + z] = noisy.round().clamp(1.0, 255.0) as u8;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_phantom_is_unit_range_and_deterministic() {
        let p = BlobPhantom {
            extent: 24,
            ..BlobPhantom::default()
        };
        let a = p.generate("a", 3);
        assert_eq!(a, p.generate("a", 3));
        assert_ne!(a.voxels(), p.generate("a", 4).voxels());
        assert_eq!(a.value_range(), (0.0, 1.0));
    }

    #[test]
    fn zero_jitter_layout_repeats_the_anatomy() {
        let p = BlobPhantom {
            extent: 16,
            noise_std: 0.0,
            layout_seed: Some(5),
            ..BlobPhantom::default()
        };
        assert_eq!(p.generate("a", 1).voxels(), p.generate("b", 2).voxels());
        let jittered = BlobPhantom {
            jitter: 0.05,
            ..p.clone()
        };
        assert_ne!(jittered.generate("a", 1).voxels(), jittered.generate("b", 2).voxels());
    }

    #[test]
    fn structured_phantom_layout() {
        let v = structured_phantom(32, 0, 3.0);
        assert_eq!(v.len(), 32 * 32 * 32);
        assert_eq!(v[0], 0);
        let center = (16 * 32 + 16) * 32 + 16;
        assert!(v[center] > 0);
    }
}
