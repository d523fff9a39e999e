use serde::{Deserialize, Serialize};

use crate::par;
use crate::rng;

/// Global scale applied to the standard-normal projection entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum ScaleMode {
    /// Entries `~ N(0, 1)`.
    Unit,
    /// Entries `~ N(0, 1/K)`, so `E‖Rz‖² = ‖z‖²`.
    #[default]
    InvSqrtK,
}

impl ScaleMode {
    pub fn code(self) -> u8 {
        match self {
            ScaleMode::Unit => 0,
            ScaleMode::InvSqrtK => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ScaleMode::Unit),
            1 => Some(ScaleMode::InvSqrtK),
            _ => None,
        }
    }

    /// Factor that converts a norm measured with this mode to `InvSqrtK`.
    pub fn to_isometric(self, k: usize) -> f64 {
        match self {
            ScaleMode::Unit => 1.0 / (k as f64).sqrt(),
            ScaleMode::InvSqrtK => 1.0,
        }
    }
}

/// Seeded `K × d` Gaussian matrix shared by every axis and patch.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    k: usize,
    d: usize,
    seed: u64,
    scale_mode: ScaleMode,
    entries: Vec<f32>,
}

impl ProjectionMatrix {
    /// Entry `(row, col)` is normal number `row * d + col` of the counter
    /// stream for `seed`, so generation order (and worker count) is
    /// irrelevant to the result.
    pub fn generate(k: usize, d: usize, seed: u64, scale_mode: ScaleMode) -> Self {
        assert!(k >= 1 && d >= 1, "projection needs K >= 1 and d >= 1");
        let scale = match scale_mode {
            ScaleMode::Unit => 1.0,
            ScaleMode::InvSqrtK => 1.0 / (k as f64).sqrt(),
        };
        let mut entries = vec![0.0f32; k * d];
        par::for_each_chunk_mut(&mut entries, d, |row, out| {
            let base = (row * d) as u64;
            for (col, e) in out.iter_mut().enumerate() {
                *e = (rng::normal_at(seed, base + col as u64) * scale) as f32;
            }
        });
        Self {
            k,
            d,
            seed,
            scale_mode,
            entries,
        }
    }

    /// `d × d` identity. Test hook for checks that must be distortion-free.
    pub fn identity(d: usize) -> Self {
        let mut entries = vec![0.0f32; d * d];
        for i in 0..d {
            entries[i * d + i] = 1.0;
        }
        Self {
            k: d,
            d,
            seed: 0,
            scale_mode: ScaleMode::InvSqrtK,
            entries,
        }
    }

    /// Wraps explicit entries (row-major `k × d`).
    pub fn from_entries(k: usize, d: usize, entries: Vec<f32>, scale_mode: ScaleMode) -> Self {
        assert_eq!(entries.len(), k * d);
        Self {
            k,
            d,
            seed: 0,
            scale_mode,
            entries,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scale_mode(&self) -> ScaleMode {
        self.scale_mode
    }

    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.entries[r * self.d..(r + 1) * self.d]
    }

    /// `R x` for one `d`-vector, accumulated in f64.
    pub fn apply_into(&self, x: &[f32], out: &mut [f32]) {
        debug_assert_eq!(x.len(), self.d);
        debug_assert_eq!(out.len(), self.k);
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot_f64(self.row(r), x) as f32;
        }
    }

    pub fn apply(&self, x: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; self.k];
        self.apply_into(x, &mut out);
        out
    }

    /// `R x` in f64 for analysis code.
    pub fn apply_f64(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.d);
        (0..self.k)
            .map(|r| self.row(r).iter().zip(x).map(|(&a, &b)| a as f64 * b).sum())
            .collect()
    }
}

/// f32 inputs, f64 accumulation over four fixed lanes.
#[inline]
fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] as f64 * y[k] as f64;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += *x as f64 * *y as f64;
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}
