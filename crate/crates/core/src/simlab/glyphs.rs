use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{Result, SimError};
use crate::idx::{self, IdxData};
use crate::rng::CounterRng;

/// 8×8 digit templates, one byte per row, most significant bit leftmost.
pub const GLYPHS: [[u8; 8]; 10] = [
    [0x3c, 0x66, 0x6e, 0x76, 0x66, 0x66, 0x3c, 0x00],
    [0x18, 0x38, 0x18, 0x18, 0x18, 0x18, 0x7e, 0x00],
    [0x3c, 0x66, 0x06, 0x0c, 0x30, 0x60, 0x7e, 0x00],
    [0x3c, 0x66, 0x06, 0x1c, 0x06, 0x66, 0x3c, 0x00],
    [0x0c, 0x1c, 0x3c, 0x6c, 0x7e, 0x0c, 0x0c, 0x00],
    [0x7e, 0x60, 0x7c, 0x06, 0x06, 0x66, 0x3c, 0x00],
    [0x3c, 0x60, 0x7c, 0x66, 0x66, 0x66, 0x3c, 0x00],
    [0x7e, 0x06, 0x0c, 0x18, 0x30, 0x30, 0x30, 0x00],
    [0x3c, 0x66, 0x66, 0x3c, 0x66, 0x66, 0x3c, 0x00],
    [0x3c, 0x66, 0x66, 0x3e, 0x06, 0x0c, 0x38, 0x00],
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum DigitSource {
    BuiltinGlyph,
    IdxFile { images: PathBuf, labels: PathBuf },
}

/// Square intensity image in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Bitmap {
    pub px: usize,
    pub data: Vec<f32>,
}

impl Bitmap {
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.px + c]
    }

    pub fn is_blank(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

pub fn glyph(digit: u8) -> Result<Bitmap> {
    let rows = GLYPHS.get(digit as usize).ok_or(SimError::UnknownDigit(digit))?;
    let data = rows
        .iter()
        .flat_map(|&row| (0..8).map(move |c| if row & (0x80 >> c) != 0 { 1.0 } else { 0.0 }))
        .collect();
    Ok(Bitmap { px: 8, data })
}

pub fn scale_nearest(b: &Bitmap, px: usize) -> Bitmap {
    let data = (0..px * px)
        .map(|i| {
            let (r, c) = (i / px, i % px);
            b.get(r * b.px / px, c * b.px / px)
        })
        .collect();
    Bitmap { px, data }
}

/// Bilinear resize with pixel-center alignment and edge clamping.
pub fn scale_bilinear(b: &Bitmap, px: usize) -> Bitmap {
    let n = b.px;
    let tap = |i: usize| {
        let src = ((i as f64 + 0.5) * n as f64 / px as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = src.floor() as usize;
        (lo, (lo + 1).min(n - 1), src - lo as f64)
    };
    let mut data = Vec::with_capacity(px * px);
    for r in 0..px {
        let (r0, r1, fr) = tap(r);
        for c in 0..px {
            let (c0, c1, fc) = tap(c);
            let top = b.get(r0, c0) as f64 * (1.0 - fc) + b.get(r0, c1) as f64 * fc;
            let bottom = b.get(r1, c0) as f64 * (1.0 - fc) + b.get(r1, c1) as f64 * fc;
            data.push((top * (1.0 - fr) + bottom * fr) as f32);
        }
    }
    Bitmap { px, data }
}

/// All images of one class from an IDX image/label pair, scaled to `[0, 1]`.
pub fn idx_digits(images: &Path, labels: &Path, digit: u8) -> Result<Vec<Bitmap>> {
    let imgs = idx::parse_rank(&std::fs::read(images).map_err(idx::IdxError::from)?, 3)?;
    let labs = idx::parse_rank(&std::fs::read(labels).map_err(idx::IdxError::from)?, 1)?;
    let (count, rows, cols) = (imgs.dims[0], imgs.dims[1], imgs.dims[2]);
    if rows != cols || labs.dims[0] != count {
        return Err(SimError::Idx(idx::IdxError::WrongRank {
            expected: count,
            found: labs.dims[0],
        }));
    }
    let pixels = imgs.data.to_f32();
    let scale = match imgs.data {
        IdxData::U8(_) => 1.0 / 255.0,
        IdxData::F32(_) => 1.0,
    };
    let label_values = labs.data.to_f32();
    Ok((0..count)
        .filter(|&i| label_values[i] as u8 == digit)
        .map(|i| Bitmap {
            px: rows,
            data: pixels[i * rows * rows..(i + 1) * rows * rows]
                .iter()
                .map(|v| (v * scale).clamp(0.0, 1.0))
                .collect(),
        })
        .collect())
}

/// A `px × px` rendering of `digit`. Glyphs are upscaled by nearest
/// neighbor; IDX samples are chosen by `seed` and scaled bilinearly.
pub fn render_digit(digit: u8, px: usize, source: &DigitSource, seed: u64) -> Result<Bitmap> {
    if digit > 9 {
        return Err(SimError::UnknownDigit(digit));
    }
    if px < 8 {
        return Err(SimError::InvalidSpec(format!("digit size {px} below 8 px")));
    }
    match source {
        DigitSource::BuiltinGlyph => Ok(scale_nearest(&glyph(digit)?, px)),
        DigitSource::IdxFile { images, labels } => {
            let pool = idx_digits(images, labels, digit)?;
            if pool.is_empty() {
                return Err(SimError::UnknownDigit(digit));
            }
            let pick = CounterRng::new(seed).below(pool.len());
            Ok(scale_bilinear(&pool[pick], px))
        }
    }
}
