//! Volumes: loading, normalization, resampling and tri-axial slicing.
//!
//! Voxels are stored row-major with `x` slowest and `z` fastest, i.e. the
//! voxel `(x, y, z)` lives at `(x * ny + y) * nz + z`. Axis labels are defined
//! on this array order: axial slices fix `x`, coronal slices fix `y`,
//! sagittal slices fix `z`.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::idx;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("format signature mismatch")]
    MagicMismatch,
    #[error("payload truncated: need {need} bytes, have {have}")]
    TruncatedPayload { need: usize, have: usize },
    #[error("non-finite voxel at index {0}")]
    NonFinite(usize),
    #[error("volume is not cubic: {0:?}")]
    NonCubic([usize; 3]),
    #[error("dims {dims:?} imply {expected} voxels, got {got}")]
    DimsMismatch {
        dims: [usize; 3],
        expected: usize,
        got: usize,
    },
    #[error("unsupported RVOL version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported voxel dtype {0}")]
    UnsupportedDtype(u8),
    #[error("resample target must be at least 2, got {0}")]
    BadTarget(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, VolumeError>;

/// The three orthogonal slicing directions, indexed by the array axis the
/// slices are perpendicular to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    Axial = 0,
    Coronal = 1,
    Sagittal = 2,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Axial, Axis::Coronal, Axis::Sagittal];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Axis> {
        Self::ALL.get(i).copied()
    }

    /// One-letter code used on the command line (`a`, `c`, `s`).
    pub fn letter(self) -> char {
        match self {
            Axis::Axial => 'a',
            Axis::Coronal => 'c',
            Axis::Sagittal => 's',
        }
    }

    pub fn from_letter(c: char) -> Option<Axis> {
        match c.to_ascii_lowercase() {
            'a' => Some(Axis::Axial),
            'c' => Some(Axis::Coronal),
            's' => Some(Axis::Sagittal),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Axial => "axial",
            Axis::Coronal => "coronal",
            Axis::Sagittal => "sagittal",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A dense voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub id: String,
    dims: [usize; 3],
    voxels: Vec<f32>,
    value_range: (f32, f32),
}

impl Volume {
    pub fn new(id: impl Into<String>, dims: [usize; 3], voxels: Vec<f32>) -> Result<Self> {
        let expected = dims.iter().product::<usize>();
        if expected != voxels.len() || dims.contains(&0) {
            return Err(VolumeError::DimsMismatch {
                dims,
                expected,
                got: voxels.len(),
            });
        }
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(i));
        }
        let value_range = voxels.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        Ok(Self {
            id: id.into(),
            dims,
            voxels,
            value_range,
        })
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(
        id: impl Into<String>,
        dims: [usize; 3],
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut voxels = Vec::with_capacity(dims.iter().product());
        for x in 0..dims[0] {
            for y in 0..dims[1] {
                for z in 0..dims[2] {
                    voxels.push(f(x, y, z));
                }
            }
        }
        Self::new(id, dims, voxels)
    }

    pub fn cube(id: impl Into<String>, side: usize, voxels: Vec<f32>) -> Result<Self> {
        Self::new(id, [side; 3], voxels)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    pub fn value_range(&self) -> (f32, f32) {
        self.value_range
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// Side length if the volume is cubic.
    pub fn side(&self) -> Option<usize> {
        let [a, b, c] = self.dims;
        (a == b && b == c).then_some(a)
    }

    #[inline]
    pub fn offset(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.offset(x, y, z)]
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

/// On-disk volume encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeFormat {
    /// Native container with a header.
    Rvol,
    /// Headerless `u8` grid; dims must be supplied by the caller.
    RawU8([usize; 3]),
    /// IDX container with three dimensions.
    Idx3d,
}

impl VolumeFormat {
    /// Guesses the format from a file extension (`.rvol`, `.idx`, `.idx3`).
    pub fn from_extension(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "rvol" => Some(VolumeFormat::Rvol),
            "idx" | "idx3" | "idx3d" => Some(VolumeFormat::Idx3d),
            _ => None,
        }
    }
}

/// Voxel storage type inside an RVOL payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VoxelType {
    U8 = 0,
    F32 = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RvolOptions {
    pub dtype: VoxelType,
    pub compress: bool,
}

impl Default for RvolOptions {
    fn default() -> Self {
        Self {
            dtype: VoxelType::F32,
            compress: false,
        }
    }
}

pub const RVOL_MAGIC: &[u8; 4] = b"RVOL";
pub const RVOL_VERSION: u16 = 1;
pub const RVOL_HEADER_LEN: usize = 20;
const RVOL_FLAG_GZIP: u8 = 0x01;

/// Encodes a volume as RVOL bytes. `U8` storage rounds and clamps to 0..=255.
pub fn encode_rvol(v: &Volume, opts: RvolOptions) -> Vec<u8> {
    let mut out = Vec::with_capacity(RVOL_HEADER_LEN + v.len() * 4);
    out.extend_from_slice(RVOL_MAGIC);
    out.extend_from_slice(&RVOL_VERSION.to_le_bytes());
    out.push(opts.dtype as u8);
    out.push(if opts.compress { RVOL_FLAG_GZIP } else { 0 });
    for d in v.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let payload: Vec<u8> = match opts.dtype {
        VoxelType::U8 => v.voxels.iter().map(|&x| quantize_u8(x)).collect(),
        VoxelType::F32 => v.voxels.iter().flat_map(|x| x.to_le_bytes()).collect(),
    };
    if opts.compress {
        let mut enc = GzEncoder::new(out, Compression::default());
        enc.write_all(&payload).expect("in-memory write");
        enc.finish().expect("in-memory write")
    } else {
        out.extend_from_slice(&payload);
        out
    }
}

fn quantize_u8(x: f32) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}

/// Decodes RVOL bytes.
pub fn decode_rvol(id: &str, bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < RVOL_HEADER_LEN || &bytes[..4] != RVOL_MAGIC {
        return Err(VolumeError::MagicMismatch);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != RVOL_VERSION {
        return Err(VolumeError::UnsupportedVersion(version));
    }
    let dtype = match bytes[6] {
        0 => VoxelType::U8,
        1 => VoxelType::F32,
        other => return Err(VolumeError::UnsupportedDtype(other)),
    };
    let flags = bytes[7];
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let o = 8 + 4 * i;
        *d = u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize;
    }
    let count: usize = dims.iter().product();
    let body = &bytes[RVOL_HEADER_LEN..];
    let inflated;
    let payload = if flags & RVOL_FLAG_GZIP != 0 {
        let mut buf = Vec::new();
        // A cut-off gzip stream reports an error; surface it as truncation.
        if GzDecoder::new(body).read_to_end(&mut buf).is_err() {
            return Err(VolumeError::TruncatedPayload {
                need: count * dtype_width(dtype),
                have: buf.len(),
            });
        }
        inflated = buf;
        &inflated[..]
    } else {
        body
    };
    let need = count * dtype_width(dtype);
    if payload.len() < need {
        return Err(VolumeError::TruncatedPayload {
            need,
            have: payload.len(),
        });
    }
    let voxels: Vec<f32> = match dtype {
        VoxelType::U8 => payload[..need].iter().map(|&b| b as f32).collect(),
        VoxelType::F32 => payload[..need]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };
    Volume::new(id, dims, voxels)
}

fn dtype_width(t: VoxelType) -> usize {
    match t {
        VoxelType::U8 => 1,
        VoxelType::F32 => 4,
    }
}

fn id_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Files in `dir` with a recognized volume extension, sorted by path.
pub fn list_volume_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| VolumeFormat::from_extension(p).is_some())
        .collect();
    files.sort();
    Ok(files)
}

/// Reads a volume; the id is the file stem.
pub fn load_volume(path: &Path, format: VolumeFormat) -> Result<Volume> {
    let bytes = std::fs::read(path)?;
    let id = id_from_path(path);
    match format {
        VolumeFormat::Rvol => decode_rvol(&id, &bytes),
        VolumeFormat::RawU8(dims) => {
            let need: usize = dims.iter().product();
            if bytes.len() < need {
                return Err(VolumeError::TruncatedPayload {
                    need,
                    have: bytes.len(),
                });
            }
            Volume::new(id, dims, bytes[..need].iter().map(|&b| b as f32).collect())
        }
        VolumeFormat::Idx3d => {
            let arr = idx::parse_rank(&bytes, 3).map_err(|e| match e {
                idx::IdxError::Truncated { need, have } => VolumeError::TruncatedPayload { need, have },
                idx::IdxError::Io(io) => VolumeError::Io(io),
                _ => VolumeError::MagicMismatch,
            })?;
            Volume::new(id, [arr.dims[0], arr.dims[1], arr.dims[2]], arr.data.to_f32())
        }
    }
}

/// Writes an RVOL file and returns the byte count.
pub fn write_volume(v: &Volume, path: &Path, opts: RvolOptions) -> Result<usize> {
    let bytes = encode_rvol(v, opts);
    std::fs::write(path, &bytes)?;
    Ok(bytes.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NormalizeMode {
    #[default]
    GlobalMinMax,
}

/// Maps voxels to `[0, 1]` by the global range. A constant volume maps to
/// all zeros, which keeps the zero volume a fixed point of the pipeline.
pub fn normalize(v: &Volume, mode: NormalizeMode) -> Volume {
    match mode {
        NormalizeMode::GlobalMinMax => {
            let (lo, hi) = v.value_range;
            let voxels = if hi > lo {
                let (lo, span) = (lo as f64, hi as f64 - lo as f64);
                v.voxels.iter().map(|&x| ((x as f64 - lo) / span) as f32).collect()
            } else {
                vec![0.0; v.len()]
            };
            Volume::new(v.id.clone(), v.dims, voxels).expect("normalized voxels are finite")
        }
    }
}

/// Trilinear resampling to a `target`³ cube using pixel-center alignment
/// (`src = (i + 0.5) * n / target - 0.5`) with edge clamping.
pub fn resample(v: &Volume, target: usize) -> Result<Volume> {
    if target < 2 {
        return Err(VolumeError::BadTarget(target));
    }
    if v.dims == [target; 3] {
        return Ok(v.clone());
    }
    let taps: Vec<Vec<(usize, usize, f64)>> = v
        .dims
        .iter()
        .map(|&n| (0..target).map(|i| linear_tap(i, n, target)).collect())
        .collect();
    let mut voxels = Vec::with_capacity(target * target * target);
    for &(x0, x1, wx) in &taps[0] {
        for &(y0, y1, wy) in &taps[1] {
            for &(z0, z1, wz) in &taps[2] {
                let c = |x, y, z| v.get(x, y, z) as f64;
                let lerp = |a: f64, b: f64, w: f64| a + (b - a) * w;
                let c00 = lerp(c(x0, y0, z0), c(x0, y0, z1), wz);
                let c01 = lerp(c(x0, y1, z0), c(x0, y1, z1), wz);
                let c10 = lerp(c(x1, y0, z0), c(x1, y0, z1), wz);
                let c11 = lerp(c(x1, y1, z0), c(x1, y1, z1), wz);
                let c0 = lerp(c00, c01, wy);
                let c1 = lerp(c10, c11, wy);
                voxels.push(lerp(c0, c1, wx) as f32);
            }
        }
    }
    Volume::new(v.id.clone(), [target; 3], voxels)
}

/// Source sample position for output index `i`: lower index, upper index
/// and interpolation weight toward the upper index.
fn linear_tap(i: usize, n: usize, target: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let src = ((i as f64 + 0.5) * n as f64 / target as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let lo = (src.floor() as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    (lo, hi, src - lo as f64)
}

/// The `D` cross-sections of a cubic volume perpendicular to one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceStack {
    pub axis: Axis,
    side: usize,
    data: Vec<f32>,
}

impl SliceStack {
    /// Builds a stack from `side` slices of `side * side` values each.
    pub fn from_slices(axis: Axis, side: usize, slices: &[Vec<f32>]) -> Option<Self> {
        if slices.len() != side || slices.iter().any(|s| s.len() != side * side) {
            return None;
        }
        Some(Self {
            axis,
            side,
            data: slices.concat(),
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.side
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    /// Slice `j` as a row-major `side × side` image.
    pub fn slice(&self, j: usize) -> &[f32] {
        let n = self.side * self.side;
        &self.data[j * n..(j + 1) * n]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.side * self.side)
    }

    /// Reassembles the source volume from the slices.
    pub fn restack(&self, id: impl Into<String>) -> Volume {
        let n = self.side;
        let mut voxels = vec![0.0f32; n * n * n];
        for (j, s) in self.iter().enumerate() {
            for a in 0..n {
                for b in 0..n {
                    let (x, y, z) = match self.axis {
                        Axis::Axial => (j, a, b),
                        Axis::Coronal => (a, j, b),
                        Axis::Sagittal => (a, b, j),
                    };
                    voxels[(x * n + y) * n + z] = s[a * n + b];
                }
            }
        }
        Volume::cube(id, n, voxels).expect("slices hold finite values")
    }
}

/// Cross-sections perpendicular to `axis`; within a slice the remaining two
/// axes appear in ascending index order (row, column).
pub fn slice_stack(v: &Volume, axis: Axis) -> Result<SliceStack> {
    let n = v.side().ok_or(VolumeError::NonCubic(v.dims))?;
    let src = &v.voxels;
    let mut data = Vec::with_capacity(src.len());
    match axis {
        // Axial slices are already contiguous.
        Axis::Axial => data.extend_from_slice(src),
        Axis::Coronal => {
            for y in 0..n {
                for x in 0..n {
                    let row = (x * n + y) * n;
                    data.extend_from_slice(&src[row..row + n]);
                }
            }
        }
        Axis::Sagittal => {
            for z in 0..n {
                for x in 0..n {
                    for y in 0..n {
                        data.push(src[(x * n + y) * n + z]);
                    }
                }
            }
        }
    }
    Ok(SliceStack { axis, side: n, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn random_volume(seed: u64, dims: [usize; 3]) -> Volume {
        let mut rng = CounterRng::new(seed);
        let n = dims.iter().product();
        Volume::new(
            format!("v{seed}"),
            dims,
            (0..n).map(|_| rng.uniform(-3.0, 5.0) as f32).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_payload_rvol() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RVOL");
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&[1, 0]);
        for _ in 0..3 {
            bytes.extend_from_slice(&28u32.to_le_bytes());
        }
        bytes.resize(RVOL_HEADER_LEN + 28 * 28 * 28 * 4, 0);
        let v = decode_rvol("z", &bytes).unwrap();
        assert_eq!(v.dims(), [28; 3]);
        assert!(v.voxels().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn corrupted_magic() {
        let v = random_volume(1, [4, 4, 4]);
        let mut bytes = encode_rvol(&v, RvolOptions::default());
        bytes[0..4].copy_from_slice(b"RVQL");
        assert!(matches!(decode_rvol("x", &bytes), Err(VolumeError::MagicMismatch)));
    }

    #[test]
    fn truncated_and_nonfinite() {
        let v = random_volume(2, [3, 4, 5]);
        let bytes = encode_rvol(&v, RvolOptions::default());
        assert!(matches!(
            decode_rvol("x", &bytes[..bytes.len() - 1]),
            Err(VolumeError::TruncatedPayload { .. })
        ));
        let mut bad = bytes.clone();
        bad[RVOL_HEADER_LEN..RVOL_HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_rvol("x", &bad), Err(VolumeError::NonFinite(0))));
    }

    #[test]
    fn roundtrip_fifty_random_volumes() {
        let dir = tempfile::tempdir().unwrap();
        for seed in 0..50u64 {
            let mut rng = CounterRng::new(seed + 1000);
            let dims = [1 + rng.below(9), 1 + rng.below(9), 1 + rng.below(9)];
            let v = random_volume(seed, dims);
            let compress = seed % 2 == 0;
            let path = dir.path().join(format!("v{seed}.rvol"));
            write_volume(
                &v,
                &path,
                RvolOptions {
                    dtype: VoxelType::F32,
                    compress,
                },
            )
            .unwrap();
            let back = load_volume(&path, VolumeFormat::Rvol).unwrap();
            assert_eq!(back.dims(), v.dims());
            let same = back
                .voxels()
                .iter()
                .zip(v.voxels())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "seed {seed}");
        }
    }

    #[test]
    fn u8_and_raw_and_idx_loading() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume::from_fn("u", [2, 3, 4], |x, y, z| (x * 12 + y * 4 + z) as f32).unwrap();
        let p = dir.path().join("u.rvol");
        write_volume(
            &v,
            &p,
            RvolOptions {
                dtype: VoxelType::U8,
                compress: true,
            },
        )
        .unwrap();
        assert_eq!(load_volume(&p, VolumeFormat::Rvol).unwrap().voxels(), v.voxels());

        let raw: Vec<u8> = (0..24).collect();
        let rp = dir.path().join("r.raw");
        std::fs::write(&rp, &raw).unwrap();
        let rv = load_volume(&rp, VolumeFormat::RawU8([2, 3, 4])).unwrap();
        assert_eq!(rv.voxels(), v.voxels());
        assert!(matches!(
            load_volume(&rp, VolumeFormat::RawU8([3, 3, 4])),
            Err(VolumeError::TruncatedPayload { .. })
        ));

        let ip = dir.path().join("i.idx3");
        let arr = idx::IdxArray {
            dims: vec![2, 3, 4],
            data: idx::IdxData::U8(raw),
        };
        std::fs::write(&ip, idx::encode(&arr)).unwrap();
        assert_eq!(load_volume(&ip, VolumeFormat::Idx3d).unwrap().voxels(), v.voxels());
        std::fs::write(&ip, b"garbage!").unwrap();
        assert!(matches!(
            load_volume(&ip, VolumeFormat::Idx3d),
            Err(VolumeError::MagicMismatch)
        ));
    }

    #[test]
    fn normalize_cases() {
        let c = Volume::cube("c", 3, vec![7.0; 27]).unwrap();
        assert!(normalize(&c, NormalizeMode::GlobalMinMax)
            .voxels()
            .iter()
            .all(|&x| x == 0.0));

        let r = Volume::new("r", [1, 1, 4], vec![0.0, 51.0, 127.5, 255.0]).unwrap();
        let n = normalize(&r, NormalizeMode::GlobalMinMax);
        assert_eq!(n.voxels(), &[0.0, 0.2, 0.5, 1.0]);
    }

    #[test]
    fn normalize_preserves_order_and_is_idempotent() {
        let v = random_volume(8, [5, 6, 7]);
        let n = normalize(&v, NormalizeMode::GlobalMinMax);
        assert_eq!(n.value_range(), (0.0, 1.0));
        let mut a: Vec<usize> = (0..v.len()).collect();
        let mut b = a.clone();
        a.sort_by(|&i, &j| v.voxels()[i].total_cmp(&v.voxels()[j]).then(i.cmp(&j)));
        b.sort_by(|&i, &j| n.voxels()[i].total_cmp(&n.voxels()[j]).then(i.cmp(&j)));
        assert_eq!(a, b);
        assert_eq!(normalize(&n, NormalizeMode::GlobalMinMax), n);
    }

    #[test]
    fn resample_identity_and_constant() {
        let v = random_volume(3, [6, 6, 6]);
        assert_eq!(resample(&v, 6).unwrap(), v);
        let c = Volume::cube("c", 5, vec![0.37; 125]).unwrap();
        let up = resample(&c, 10).unwrap();
        assert!(up.voxels().iter().all(|&x| x == 0.37));
        assert!(matches!(resample(&c, 1), Err(VolumeError::BadTarget(1))));
    }

    #[test]
    fn resample_linear_ramp() {
        let v = Volume::from_fn("ramp", [28; 3], |x, _, _| x as f32).unwrap();
        let up = resample(&v, 56).unwrap();
        for x in 0..56 {
            let expected = ((x as f64 + 0.5) * 28.0 / 56.0 - 0.5).clamp(0.0, 27.0);
            for y in [0, 17, 55] {
                for z in [0, 30, 55] {
                    assert!((up.get(x, y, z) as f64 - expected).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn resample_noncubic_to_cube() {
        let v = random_volume(4, [4, 8, 6]);
        let r = resample(&v, 8).unwrap();
        assert_eq!(r.dims(), [8; 3]);
        let (lo, hi) = v.value_range();
        assert!(r.voxels().iter().all(|&x| x >= lo && x <= hi));
    }

    #[test]
    fn axial_slices_of_x_ramp_are_constant() {
        let v = Volume::from_fn("x", [6; 3], |x, _, _| x as f32).unwrap();
        let s = slice_stack(&v, Axis::Axial).unwrap();
        for j in 0..6 {
            assert!(s.slice(j).iter().all(|&x| x == j as f32));
        }
    }

    #[test]
    fn stacks_match_triple_loop_oracle() {
        let n = 4;
        let v = Volume::from_fn("d", [n; 3], |x, y, z| (x * 16 + y * 4 + z) as f32).unwrap();
        for axis in Axis::ALL {
            let s = slice_stack(&v, axis).unwrap();
            for j in 0..n {
                let mut expected = Vec::new();
                for a in 0..n {
                    for b in 0..n {
                        let val = match axis {
                            Axis::Axial => v.get(j, a, b),
                            Axis::Coronal => v.get(a, j, b),
                            Axis::Sagittal => v.get(a, b, j),
                        };
                        expected.push(val);
                    }
                }
                assert_eq!(s.slice(j), &expected[..]);
            }
        }
    }

    #[test]
    fn restack_roundtrip_and_multisets() {
        let v = random_volume(11, [7; 3]);
        let mut sorted_ref: Vec<u32> = v.voxels().iter().map(|x| x.to_bits()).collect();
        sorted_ref.sort_unstable();
        for axis in Axis::ALL {
            let s = slice_stack(&v, axis).unwrap();
            assert_eq!(s.len(), 7);
            assert_eq!(s.restack(v.id.clone()), v);
            let mut bits: Vec<u32> = s.iter().flatten().map(|x| x.to_bits()).collect();
            bits.sort_unstable();
            assert_eq!(bits, sorted_ref);
        }
    }

    #[test]
    fn noncubic_slicing_rejected() {
        let v = random_volume(5, [4, 4, 5]);
        assert!(matches!(slice_stack(&v, Axis::Axial), Err(VolumeError::NonCubic(_))));
    }
}
