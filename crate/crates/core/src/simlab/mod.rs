//! Controlled digit-insertion benchmarks over host volumes.
//!
//! *Location*: every sample carries one digit, at center `A` (class 0) or
//! `B` (class 1), the two centers `resolution_px` apart along the last axis.
//! *Size*: class 1 carries a `resolution_px` digit at a random position,
//! class 0 is the untouched host.
//!
//! Digits lie in the axial plane (the `y, z` axes) and are extruded over
//! `max(1, px/4)` consecutive axial slices, composited with `max`.

pub mod builtin;
pub mod glyphs;
pub mod phantom;

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::idx::IdxError;
use crate::par;
use crate::rng::{self, CounterRng};
use crate::volumes::{self, Volume, VolumeError, VolumeFormat};

pub use glyphs::{render_digit, Bitmap, DigitSource};
pub use phantom::{structured_phantom, BlobPhantom, HostScaling, STRUCTURED_NOISE_STD};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("digit {0} is not available")]
    UnknownDigit(u8),
    #[error("digit footprint does not fit inside the volume")]
    OutOfBounds,
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SimTask {
    Location,
    Size,
}

#[derive(Debug, Clone, Serialize)]
pub enum HostSource {
    SyntheticPhantom(BlobPhantom),
    /// Volumes loaded in file-name order, normalized and resampled to
    /// `extent`; sample `i` uses host `i mod count`.
    VolumeDir {
        path: PathBuf,
        extent: usize,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct SimSpec {
    pub task: SimTask,
    /// Separation (location) or digit size (size), in host voxels.
    pub resolution_px: usize,
    /// `None` draws a digit per sample.
    pub digit: Option<u8>,
    pub digit_source: DigitSource,
    pub seed: u64,
    pub n_samples: usize,
    pub host_source: HostSource,
    /// Digit size for the location task.
    pub location_digit_px: usize,
    pub intensity: f32,
}

impl SimSpec {
    pub fn new(task: SimTask, resolution_px: usize, n_samples: usize, seed: u64) -> Self {
        Self {
            task,
            resolution_px,
            digit: None,
            digit_source: DigitSource::BuiltinGlyph,
            seed,
            n_samples,
            host_source: HostSource::SyntheticPhantom(BlobPhantom::default()),
            location_digit_px: 16,
            intensity: 1.0,
        }
    }

    pub fn host_extent(&self) -> usize {
        match &self.host_source {
            HostSource::SyntheticPhantom(p) => p.extent,
            HostSource::VolumeDir { extent, .. } => *extent,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.n_samples % 2 != 0 {
            return Err(SimError::InvalidSpec(format!(
                "sample count {} must be even and positive",
                self.n_samples
            )));
        }
        if self.resolution_px > self.host_extent() / 2 {
            return Err(SimError::InvalidSpec(format!(
                "resolution {} exceeds half the host extent {}",
                self.resolution_px,
                self.host_extent()
            )));
        }
        Ok(())
    }
}

/// Where a digit was written; enough to redraw every inserted voxel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InsertionRecord {
    pub digit: u8,
    pub px: usize,
    /// Number of axial slices covered.
    pub thickness: usize,
    /// Lowest `(x, y, z)` corner of the footprint.
    pub origin: [usize; 3],
    pub intensity: f32,
    #[serde(skip)]
    pub bitmap: Bitmap,
}

pub fn extrusion_thickness(px: usize) -> usize {
    (px / 4).max(1)
}

/// Max-composites `bitmap · intensity` centered at `(y, z) = center`,
/// over the axial slices around `axial_center`. The input is not modified.
pub fn insert_digit(
    v: &Volume,
    bitmap: &Bitmap,
    digit: u8,
    center: (usize, usize),
    axial_center: usize,
    intensity: f32,
) -> Result<(Volume, InsertionRecord)> {
    let px = bitmap.px;
    let thickness = extrusion_thickness(px);
    let origin = [
        axial_center.checked_sub(thickness / 2).ok_or(SimError::OutOfBounds)?,
        center.0.checked_sub(px / 2).ok_or(SimError::OutOfBounds)?,
        center.1.checked_sub(px / 2).ok_or(SimError::OutOfBounds)?,
    ];
    let dims = v.dims();
    if origin[0] + thickness > dims[0] || origin[1] + px > dims[1] || origin[2] + px > dims[2] {
        return Err(SimError::OutOfBounds);
    }
    let record = InsertionRecord {
        digit,
        px,
        thickness,
        origin,
        intensity,
        bitmap: bitmap.clone(),
    };
    Ok((apply_record(v, &record)?, record))
}

/// Re-applies a record to a host.
pub fn apply_record(v: &Volume, r: &InsertionRecord) -> Result<Volume> {
    let dims = v.dims();
    let mut voxels = v.voxels().to_vec();
    for x in r.origin[0]..r.origin[0] + r.thickness {
        for row in 0..r.px {
            for col in 0..r.px {
                let value = r.bitmap.get(row, col) * r.intensity;
                let off = v.offset(x, r.origin[1] + row, r.origin[2] + col);
                voxels[off] = voxels[off].max(value);
            }
        }
    }
    Ok(Volume::new(v.id.clone(), dims, voxels)?)
}

#[derive(Debug, Clone)]
pub struct SimDataset {
    pub volumes: Vec<Volume>,
    pub labels: Vec<usize>,
    /// `None` for untouched hosts.
    pub records: Vec<Option<InsertionRecord>>,
}

impl SimDataset {
    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    /// Writes `<id>.rvol` per volume plus the manifests.
    pub fn write(&self, dir: &Path, opts: volumes::RvolOptions) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for v in &self.volumes {
            volumes::write_volume(v, &dir.join(format!("{}.rvol", v.id)), opts)?;
        }
        let ids: Vec<String> = self.volumes.iter().map(|v| v.id.clone()).collect();
        write_manifests(dir, &ids, &self.labels, &self.records)
    }
}

/// `labels.csv` (id, path, label) and `records.jsonl`, one line per sample.
pub fn write_manifests(
    dir: &Path,
    ids: &[String],
    labels: &[usize],
    records: &[Option<InsertionRecord>],
) -> Result<()> {
    let mut csv = String::from("id,path,label\n");
    let mut jsonl = String::new();
    for ((id, l), rec) in ids.iter().zip(labels).zip(records) {
        csv.push_str(&format!("{id},{id}.rvol,{l}\n"));
        jsonl.push_str(&serde_json::json!({ "id": id, "label": l, "record": rec }).to_string());
        jsonl.push('\n');
    }
    std::fs::write(dir.join("labels.csv"), csv)?;
    std::fs::write(dir.join("records.jsonl"), jsonl)?;
    Ok(())
}

fn load_hosts(path: &Path, extent: usize) -> Result<Vec<Volume>> {
    let files = volumes::list_volume_files(path)?;
    if files.is_empty() {
        return Err(SimError::InvalidSpec(format!("no volumes in {}", path.display())));
    }
    files
        .iter()
        .map(|f| {
            let v = volumes::load_volume(f, VolumeFormat::from_extension(f).expect("filtered"))?;
            let v = volumes::normalize(&v, volumes::NormalizeMode::GlobalMinMax);
            Ok(volumes::resample(&v, extent)?)
        })
        .collect()
}

fn sample_digit(spec: &SimSpec, rng: &mut CounterRng) -> u8 {
    spec.digit.unwrap_or_else(|| rng.below(10) as u8)
}

/// One labelled sample with its insertion record, if any.
pub type Sample = (Volume, usize, Option<InsertionRecord>);

/// Draws samples one at a time so callers can reduce each volume before the
/// next one is built.
pub struct SimSampler<'a> {
    spec: &'a SimSpec,
    hosts: Option<Vec<Volume>>,
}

impl<'a> SimSampler<'a> {
    pub fn new(spec: &'a SimSpec) -> Result<Self> {
        spec.validate()?;
        let hosts = match &spec.host_source {
            HostSource::VolumeDir { path, extent } => Some(load_hosts(path, *extent)?),
            HostSource::SyntheticPhantom(_) => None,
        };
        Ok(Self { spec, hosts })
    }

    pub fn len(&self) -> usize {
        self.spec.n_samples
    }

    pub fn is_empty(&self) -> bool {
        self.spec.n_samples == 0
    }

    /// Sample `i`; depends only on the spec and `i`.
    pub fn sample(&self, i: usize) -> Result<Sample> {
        let spec = self.spec;
        let sample_seed = rng::derive_seed(spec.seed, i as u64);
        let id = format!("sim{i:05}");
        let host = match (&spec.host_source, &self.hosts) {
            (HostSource::SyntheticPhantom(p), _) => p.generate(id, rng::derive_seed(sample_seed, 0)),
            (_, Some(hosts)) => hosts[i % hosts.len()].clone().with_id(id),
            _ => unreachable!("hosts are preloaded for directory sources"),
        };
        let mut rng = CounterRng::derived(sample_seed, 1);
        match spec.task {
            SimTask::Location => location_sample(spec, i, host, &mut rng),
            SimTask::Size => size_sample(spec, i, host, &mut rng),
        }
    }
}

/// Label `i mod 2`; class 0 at center `A`, class 1 at `B`.
fn location_sample(spec: &SimSpec, i: usize, host: Volume, rng: &mut CounterRng) -> Result<Sample> {
    let extent = spec.host_extent();
    let px = spec.location_digit_px;
    let c = extent / 2;
    let half = spec.resolution_px / 2;
    let za = c.checked_sub(half).ok_or(SimError::OutOfBounds)?;
    let zb = c + spec.resolution_px - half;
    let label = i % 2;
    let digit = sample_digit(spec, rng);
    let bitmap = render_digit(digit, px, &spec.digit_source, rng.next_u64())?;
    let z = if label == 0 { za } else { zb };
    let (v, rec) = insert_digit(&host, &bitmap, digit, (c, z), c, spec.intensity)?;
    Ok((v, label, Some(rec)))
}

/// Label `i mod 2`; class 1 carries a digit at a random position.
fn size_sample(spec: &SimSpec, i: usize, host: Volume, rng: &mut CounterRng) -> Result<Sample> {
    let extent = spec.host_extent();
    let px = spec.resolution_px;
    let t = extrusion_thickness(px);
    let label = i % 2;
    if label == 0 {
        return Ok((host, 0, None));
    }
    let digit = sample_digit(spec, rng);
    let bitmap = render_digit(digit, px, &spec.digit_source, rng.next_u64())?;
    let pick = |rng: &mut CounterRng, span: usize| span / 2 + rng.below(extent - span + 1);
    let (y, z) = (pick(rng, px), pick(rng, px));
    let x = t / 2 + rng.below(extent - t + 1);
    let (v, rec) = insert_digit(&host, &bitmap, digit, (y, z), x, spec.intensity)?;
    Ok((v, 1, Some(rec)))
}

fn generate(spec: &SimSpec) -> Result<SimDataset> {
    let sampler = SimSampler::new(spec)?;
    let samples = par::try_map_range(spec.n_samples, |i| sampler.sample(i))?;
    let mut ds = SimDataset {
        volumes: Vec::with_capacity(samples.len()),
        labels: Vec::with_capacity(samples.len()),
        records: Vec::with_capacity(samples.len()),
    };
    for (v, l, r) in samples {
        ds.volumes.push(v);
        ds.labels.push(l);
        ds.records.push(r);
    }
    Ok(ds)
}

pub fn make_location_task(spec: &SimSpec) -> Result<SimDataset> {
    if spec.task != SimTask::Location {
        return Err(SimError::InvalidSpec("expected a location spec".into()));
    }
    generate(spec)
}

pub fn make_size_task(spec: &SimSpec) -> Result<SimDataset> {
    if spec.task != SimTask::Size {
        return Err(SimError::InvalidSpec("expected a size spec".into()));
    }
    generate(spec)
}

pub fn make_task(spec: &SimSpec) -> Result<SimDataset> {
    generate(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(task: SimTask, res: usize) -> SimSpec {
        SimSpec {
            host_source: HostSource::SyntheticPhantom(BlobPhantom {
                extent: 32,
                ..BlobPhantom::default()
            }),
            location_digit_px: 8,
            ..SimSpec::new(task, res, 6, 9)
        }
    }

    #[test]
    fn blank_bitmap_leaves_volume() {
        let host = BlobPhantom {
            extent: 16,
            ..BlobPhantom::default()
        }
        .generate("h", 1);
        let blank = Bitmap {
            px: 8,
            data: vec![0.0; 64],
        };
        let (v, _) = insert_digit(&host, &blank, 0, (8, 8), 8, 1.0).unwrap();
        assert_eq!(v, host);
    }

    #[test]
    fn insertion_into_zero_volume_is_extruded_bitmap() {
        let zero = Volume::cube("z", 16, vec![0.0; 16 * 16 * 16]).unwrap();
        let b = glyphs::scale_nearest(&glyphs::glyph(7).unwrap(), 8);
        let (v, rec) = insert_digit(&zero, &b, 7, (8, 8), 8, 1.0).unwrap();
        assert_eq!(rec.thickness, 2);
        for x in 0..16 {
            for y in 0..16 {
                for z in 0..16 {
                    let inside = (7..9).contains(&x) && (4..12).contains(&y) && (4..12).contains(&z);
                    let expected = if inside { b.get(y - 4, z - 4) } else { 0.0 };
                    assert_eq!(v.get(x, y, z), expected);
                }
            }
        }
        assert!(matches!(
            insert_digit(&zero, &b, 7, (2, 8), 8, 1.0),
            Err(SimError::OutOfBounds)
        ));
    }

    #[test]
    fn disjoint_insertions_commute() {
        let host = BlobPhantom {
            extent: 32,
            ..BlobPhantom::default()
        }
        .generate("h", 2);
        let a = glyphs::scale_nearest(&glyphs::glyph(3).unwrap(), 8);
        let b = glyphs::scale_nearest(&glyphs::glyph(8).unwrap(), 8);
        let (ab, _) = insert_digit(
            &insert_digit(&host, &a, 3, (8, 8), 10, 1.0).unwrap().0,
            &b,
            8,
            (20, 24),
            20,
            1.0,
        )
        .unwrap();
        let (ba, _) = insert_digit(
            &insert_digit(&host, &b, 8, (20, 24), 20, 1.0).unwrap().0,
            &a,
            3,
            (8, 8),
            10,
            1.0,
        )
        .unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn size_task_balanced_and_hosts_untouched() {
        let spec = small_spec(SimTask::Size, 8);
        let ds = make_size_task(&spec).unwrap();
        assert_eq!(ds.labels.iter().filter(|&&l| l == 1).count(), 3);
        let phantom = BlobPhantom {
            extent: 32,
            ..BlobPhantom::default()
        };
        for (i, (v, rec)) in ds.volumes.iter().zip(&ds.records).enumerate() {
            let host = phantom.generate(v.id.clone(), rng::derive_seed(rng::derive_seed(spec.seed, i as u64), 0));
            match rec {
                None => assert_eq!(v, &host),
                Some(r) => assert_eq!(&apply_record(&host, r).unwrap(), v),
            }
        }
        let again = make_size_task(&spec).unwrap();
        assert_eq!(again.volumes, ds.volumes);
    }

    #[test]
    fn location_task_centers() {
        let ds = make_location_task(&small_spec(SimTask::Location, 16)).unwrap();
        let z: Vec<usize> = ds.records.iter().map(|r| r.as_ref().unwrap().origin[2]).collect();
        assert_eq!(z[1] - z[0], 16);
        assert!(ds.labels.iter().enumerate().all(|(i, &l)| l == i % 2));
    }

    #[test]
    fn spec_validation() {
        let mut spec = small_spec(SimTask::Size, 32);
        assert!(matches!(make_task(&spec), Err(SimError::InvalidSpec(_))));
        spec.resolution_px = 8;
        spec.n_samples = 5;
        assert!(matches!(make_task(&spec), Err(SimError::InvalidSpec(_))));
    }
}
