//! REMB: a flat, random-access file of embedding rows with provenance.
//!
//! ```text
//! 0   "REMB"
//! 4   u16 version (1)
//! 6   u8  scale mode (0 unit, 1 1/√K)
//! 7   u8  axes bitmask
//! 8   u16 K        10  u16 p        12  u16 d
//! 14  u16 PRNG code
//! 16  u32 row count
//! 20  u32 CRC-32 of the 64 header bytes with this field zeroed
//! 24  u64 projection seed
//! 32  [u8; 32] encoder id
//! 64  id table: per row (u32 byte length, UTF-8 id), then u32::MAX,
//!     zero-padded to a multiple of 4
//!     rows: count × |axes|·K·p² little-endian f32
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::{Compression, Crc};
use thiserror::Error;

use crate::encoders::EncoderId;
use crate::reduction::{AxisSet, Embedding, ScaleMode};
use crate::rng;
use crate::volumes::{self, VolumeError, VolumeFormat};

pub const REMB_MAGIC: &[u8; 4] = b"REMB";
pub const REMB_VERSION: u16 = 1;
pub const REMB_HEADER_LEN: usize = 64;
const ID_TERMINATOR: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("embedding file signature mismatch")]
    MagicMismatch,
    #[error("embedding file header inconsistent: {0}")]
    HeaderInconsistent(String),
    #[error("unsupported embedding file version {0}")]
    UnsupportedVersion(u16),
    #[error("duplicate volume id {0:?}")]
    DuplicateId(String),
    #[error("row {index} has {got} values, expected {expected}")]
    RowLength { index: usize, expected: usize, got: usize },
    #[error("embedding sets have different provenance")]
    Incompatible,
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StoreError>;

/// Shared provenance of every row in a set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetHeader {
    pub k: usize,
    pub p: usize,
    pub d: usize,
    pub seed: u64,
    pub scale_mode: ScaleMode,
    pub axes: AxisSet,
    pub encoder_id: EncoderId,
    pub prng_code: u16,
}

impl SetHeader {
    pub fn row_len(&self) -> usize {
        self.axes.len() * self.k * self.p * self.p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub header: SetHeader,
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f32>>,
}

impl EmbeddingSet {
    pub fn empty(header: SetHeader) -> Self {
        Self {
            header,
            ids: Vec::new(),
            rows: Vec::new(),
        }
    }

    /// Collects embeddings that share provenance.
    pub fn from_embeddings(embeddings: &[Embedding]) -> Result<Self> {
        let first = embeddings
            .first()
            .ok_or_else(|| StoreError::HeaderInconsistent("no embeddings".into()))?;
        let m = &first.meta;
        let header = SetHeader {
            k: m.k,
            p: m.p,
            d: m.d,
            seed: m.seed,
            scale_mode: m.scale_mode,
            axes: m.axes,
            encoder_id: m.encoder_id,
            prng_code: m.prng_code,
        };
        let mut set = Self::empty(header);
        for e in embeddings {
            let same = e.meta.k == m.k
                && e.meta.p == m.p
                && e.meta.d == m.d
                && e.meta.seed == m.seed
                && e.meta.scale_mode == m.scale_mode
                && e.meta.axes == m.axes
                && e.meta.encoder_id == m.encoder_id;
            if !same {
                return Err(StoreError::Incompatible);
            }
            set.ids.push(e.meta.volume_id.clone());
            set.rows.push(e.vector.clone());
        }
        set.validate()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != self.rows.len() {
            return Err(StoreError::HeaderInconsistent(format!(
                "{} ids for {} rows",
                self.ids.len(),
                self.rows.len()
            )));
        }
        let expected = self.header.row_len();
        for (index, r) in self.rows.iter().enumerate() {
            if r.len() != expected {
                return Err(StoreError::RowLength {
                    index,
                    expected,
                    got: r.len(),
                });
            }
        }
        let mut seen = HashSet::with_capacity(self.ids.len());
        for id in &self.ids {
            if !seen.insert(id.as_str()) {
                return Err(StoreError::DuplicateId(id.clone()));
            }
        }
        for (name, v) in [("K", self.header.k), ("p", self.header.p), ("d", self.header.d)] {
            if v > u16::MAX as usize {
                return Err(StoreError::HeaderInconsistent(format!("{name}={v} exceeds 16 bits")));
            }
        }
        Ok(())
    }

    pub fn row(&self, id: &str) -> Option<&[f32]> {
        self.ids.iter().position(|x| x == id).map(|i| self.rows[i].as_slice())
    }
}

fn header_bytes(h: &SetHeader, count: usize) -> [u8; REMB_HEADER_LEN] {
    let mut b = [0u8; REMB_HEADER_LEN];
    b[0..4].copy_from_slice(REMB_MAGIC);
    b[4..6].copy_from_slice(&REMB_VERSION.to_le_bytes());
    b[6] = h.scale_mode.code();
    b[7] = h.axes.bits();
    b[8..10].copy_from_slice(&(h.k as u16).to_le_bytes());
    b[10..12].copy_from_slice(&(h.p as u16).to_le_bytes());
    b[12..14].copy_from_slice(&(h.d as u16).to_le_bytes());
    b[14..16].copy_from_slice(&h.prng_code.to_le_bytes());
    b[16..20].copy_from_slice(&(count as u32).to_le_bytes());
    b[24..32].copy_from_slice(&h.seed.to_le_bytes());
    b[32..64].copy_from_slice(&h.encoder_id);
    let crc = header_crc(&b);
    b[20..24].copy_from_slice(&crc.to_le_bytes());
    b
}

/// CRC-32 over the header with the checksum field treated as zero.
pub fn header_crc(header: &[u8]) -> u32 {
    let mut copy = [0u8; REMB_HEADER_LEN];
    copy.copy_from_slice(&header[..REMB_HEADER_LEN]);
    copy[20..24].fill(0);
    let mut crc = Crc::new();
    crc.update(&copy);
    crc.sum()
}

fn id_table(ids: &[String]) -> Vec<u8> {
    let mut t = Vec::new();
    for id in ids {
        t.extend_from_slice(&(id.len() as u32).to_le_bytes());
        t.extend_from_slice(id.as_bytes());
    }
    t.extend_from_slice(&ID_TERMINATOR.to_le_bytes());
    while t.len() % 4 != 0 {
        t.push(0);
    }
    t
}

pub fn encode_embeddings(set: &EmbeddingSet) -> Result<Vec<u8>> {
    set.validate()?;
    let table = id_table(&set.ids);
    let mut out = Vec::with_capacity(REMB_HEADER_LEN + table.len() + set.len() * set.header.row_len() * 4);
    out.extend_from_slice(&header_bytes(&set.header, set.len()));
    out.extend_from_slice(&table);
    for row in &set.rows {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes the set and returns the number of bytes written.
pub fn write_embeddings(set: &EmbeddingSet, path: &Path) -> Result<usize> {
    let bytes = encode_embeddings(set)?;
    let mut f = File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(bytes.len())
}

fn parse_header(b: &[u8]) -> Result<(SetHeader, usize)> {
    if b.len() < 4 || &b[..4] != REMB_MAGIC {
        return Err(StoreError::MagicMismatch);
    }
    if b.len() < REMB_HEADER_LEN {
        return Err(StoreError::HeaderInconsistent("truncated header".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([b[o], b[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]]);
    if u32_at(20) != header_crc(b) {
        return Err(StoreError::HeaderInconsistent("header checksum mismatch".into()));
    }
    let version = u16_at(4);
    if version != REMB_VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    let scale_mode =
        ScaleMode::from_code(b[6]).ok_or_else(|| StoreError::HeaderInconsistent(format!("scale code {}", b[6])))?;
    let axes =
        AxisSet::from_bits(b[7]).ok_or_else(|| StoreError::HeaderInconsistent(format!("axes bitmask {}", b[7])))?;
    let mut encoder_id = [0u8; 32];
    encoder_id.copy_from_slice(&b[32..64]);
    let header = SetHeader {
        k: u16_at(8) as usize,
        p: u16_at(10) as usize,
        d: u16_at(12) as usize,
        prng_code: u16_at(14),
        seed: u64::from_le_bytes(b[24..32].try_into().expect("8 bytes")),
        scale_mode,
        axes,
        encoder_id,
    };
    Ok((header, u32_at(16) as usize))
}

/// Parses the id table that starts at `REMB_HEADER_LEN`; returns the ids
/// and the offset of the first row.
fn parse_ids(b: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let truncated = || StoreError::HeaderInconsistent("id table truncated".into());
    let mut pos = REMB_HEADER_LEN;
    let mut ids = Vec::with_capacity(count);
    loop {
        let len_bytes = b.get(pos..pos + 4).ok_or_else(truncated)?;
        let len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes"));
        pos += 4;
        if len == ID_TERMINATOR {
            break;
        }
        let raw = b.get(pos..pos + len as usize).ok_or_else(truncated)?;
        let id = std::str::from_utf8(raw).map_err(|_| StoreError::HeaderInconsistent("id is not UTF-8".into()))?;
        ids.push(id.to_string());
        pos += len as usize;
        if ids.len() > count {
            return Err(StoreError::HeaderInconsistent("more ids than rows".into()));
        }
    }
    if ids.len() != count {
        return Err(StoreError::HeaderInconsistent(format!(
            "{} ids for {count} rows",
            ids.len()
        )));
    }
    let mut seen = HashSet::with_capacity(count);
    for id in &ids {
        if !seen.insert(id.as_str()) {
            return Err(StoreError::DuplicateId(id.clone()));
        }
    }
    Ok((ids, pos.div_ceil(4) * 4))
}

pub fn decode_embeddings(b: &[u8]) -> Result<EmbeddingSet> {
    let (header, count) = parse_header(b)?;
    let (ids, start) = parse_ids(b, count)?;
    let row_len = header.row_len();
    let expected = start + count * row_len * 4;
    if b.len() != expected {
        return Err(StoreError::HeaderInconsistent(format!(
            "file has {} bytes, header implies {expected}",
            b.len()
        )));
    }
    let rows = b[start..]
        .chunks_exact(row_len * 4)
        .map(|r| {
            r.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect()
        })
        .collect();
    Ok(EmbeddingSet { header, ids, rows })
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    decode_embeddings(&std::fs::read(path)?)
}

/// Row-by-row access without loading the payload.
pub struct EmbeddingReader {
    file: File,
    pub header: SetHeader,
    pub ids: Vec<String>,
    data_offset: u64,
}

impl EmbeddingReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = File::open(path)?;
        let mut head = vec![0u8; REMB_HEADER_LEN];
        file.read_exact(&mut head).map_err(|_| StoreError::MagicMismatch)?;
        let (header, count) = parse_header(&head)?;
        // The id table is small relative to rows; read it in growing chunks.
        let mut buf = head;
        let (ids, start) = loop {
            match parse_ids(&buf, count) {
                Ok(v) => break v,
                Err(StoreError::HeaderInconsistent(_)) => {
                    let before = buf.len();
                    buf.resize(before + 4096, 0);
                    let got = file.read(&mut buf[before..])?;
                    buf.truncate(before + got);
                    if got == 0 {
                        return Err(StoreError::HeaderInconsistent("id table truncated".into()));
                    }
                }
                Err(e) => return Err(e),
            }
        };
        let len = file.metadata()?.len();
        let expected = start as u64 + (count * header.row_len() * 4) as u64;
        if len != expected {
            return Err(StoreError::HeaderInconsistent(format!(
                "file has {len} bytes, header implies {expected}"
            )));
        }
        Ok(Self {
            file,
            header,
            ids,
            data_offset: start as u64,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn read_row(&mut self, index: usize) -> Result<Vec<f32>> {
        let row_bytes = self.header.row_len() * 4;
        if index >= self.len() {
            return Err(StoreError::HeaderInconsistent(format!("row {index} out of range")));
        }
        self.file
            .seek(SeekFrom::Start(self.data_offset + (index * row_bytes) as u64))?;
        let mut raw = vec![0u8; row_bytes];
        self.file.read_exact(&mut raw)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

/// Concatenates sets with identical provenance.
pub fn merge(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<EmbeddingSet> {
    if a.header != b.header {
        return Err(StoreError::Incompatible);
    }
    let merged = EmbeddingSet {
        header: a.header.clone(),
        ids: a.ids.iter().chain(&b.ids).cloned().collect(),
        rows: a.rows.iter().chain(&b.rows).cloned().collect(),
    };
    merged.validate()?;
    Ok(merged)
}

/// Byte length after gzip at the default level.
pub fn gzip_len(bytes: &[u8]) -> usize {
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(bytes).expect("in-memory write");
    enc.finish().expect("in-memory write").len()
}

/// Embedding bytes divided by the gzip size of the volume's 8-bit voxels.
pub fn footprint_ratio_bytes(voxels_u8: &[u8], embedding_row: &[f32]) -> f64 {
    (embedding_row.len() * 4) as f64 / gzip_len(voxels_u8) as f64
}

/// Loads a volume, quantizes it to 8 bits (values already in `0..=255` are
/// kept as is) and compares its gzip size with the embedding row.
pub fn footprint_ratio(volume_path: &Path, embedding_row: &[f32]) -> Result<f64> {
    let format = VolumeFormat::from_extension(volume_path).unwrap_or(VolumeFormat::Rvol);
    let v = volumes::load_volume(volume_path, format)?;
    let (lo, hi) = v.value_range();
    let integral = lo >= 0.0 && hi <= 255.0 && v.voxels().iter().all(|x| x.fract() == 0.0);
    let bytes: Vec<u8> = if integral {
        v.voxels().iter().map(|&x| x as u8).collect()
    } else {
        let span = (hi - lo).max(f32::MIN_POSITIVE);
        v.voxels()
            .iter()
            .map(|&x| ((x - lo) / span * 255.0).round() as u8)
            .collect()
    };
    Ok(footprint_ratio_bytes(&bytes, embedding_row))
}

/// Default header for tests and tools that build sets by hand.
pub fn header_for(k: usize, p: usize, d: usize, seed: u64, axes: AxisSet) -> SetHeader {
    SetHeader {
        k,
        p,
        d,
        seed,
        scale_mode: ScaleMode::InvSqrtK,
        axes,
        encoder_id: [0; 32],
        prng_code: rng::PRNG_CODE,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn random_set(seed: u64, count: usize) -> EmbeddingSet {
        let mut rng = CounterRng::new(seed);
        let k = 1 + rng.below(4);
        let p = 1 + rng.below(3);
        let axes = AxisSet::from_bits(1 + rng.below(7) as u8).unwrap();
        let mut header = header_for(k, p, 8, rng.next_u64(), axes);
        header.encoder_id = [seed as u8; 32];
        let len = header.row_len();
        EmbeddingSet {
            header,
            ids: (0..count).map(|i| format!("vol-{seed}-{i}")).collect(),
            rows: (0..count)
                .map(|_| (0..len).map(|_| rng.next_normal() as f32).collect())
                .collect(),
        }
    }

    #[test]
    fn empty_set_is_header_plus_terminator() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.remb");
        let set = EmbeddingSet::empty(header_for(10, 16, 1024, 0, AxisSet::ALL));
        assert_eq!(write_embeddings(&set, &path).unwrap(), 64 + 4);
        assert_eq!(read_embeddings(&path).unwrap(), set);
    }

    #[test]
    fn byte_accounting_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        for seed in 0..20 {
            let set = random_set(seed, 1 + seed as usize % 5);
            let path = dir.path().join(format!("{seed}.remb"));
            let n = write_embeddings(&set, &path).unwrap();
            let table = id_table(&set.ids).len();
            assert_eq!(n, 64 + table + set.len() * set.header.row_len() * 4);
            let back = read_embeddings(&path).unwrap();
            assert_eq!(back.header, set.header);
            assert_eq!(back.ids, set.ids);
            for (a, b) in back.rows.iter().flatten().zip(set.rows.iter().flatten()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn header_corruption_detected() {
        let bytes = encode_embeddings(&random_set(3, 2)).unwrap();
        for i in 0..REMB_HEADER_LEN {
            let mut bad = bytes.clone();
            bad[i] ^= 0x01;
            match decode_embeddings(&bad) {
                Err(StoreError::MagicMismatch) | Err(StoreError::HeaderInconsistent(_)) => {}
                other => panic!("byte {i}: {other:?}"),
            }
        }
    }

    #[test]
    fn version_two_rejected() {
        let mut bytes = encode_embeddings(&random_set(4, 1)).unwrap();
        bytes[4..6].copy_from_slice(&2u16.to_le_bytes());
        let crc = header_crc(&bytes);
        bytes[20..24].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            decode_embeddings(&bytes),
            Err(StoreError::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn duplicates_and_merge() {
        let a = random_set(5, 3);
        let mut b = a.clone();
        b.ids = vec!["x".into(), "y".into(), "z".into()];
        let m = merge(&a, &b).unwrap();
        let back = decode_embeddings(&encode_embeddings(&m).unwrap()).unwrap();
        assert_eq!(back.len(), 6);
        assert!(matches!(merge(&a, &a), Err(StoreError::DuplicateId(_))));
    }

    #[test]
    fn random_access_matches_sequential() {
        let dir = tempfile::tempdir().unwrap();
        let set = random_set(6, 7);
        let path = dir.path().join("r.remb");
        write_embeddings(&set, &path).unwrap();
        let mut reader = EmbeddingReader::open(&path).unwrap();
        assert_eq!(reader.ids, set.ids);
        for i in [6, 0, 3, 3, 1] {
            assert_eq!(reader.read_row(i).unwrap(), set.rows[i]);
        }
    }

    #[test]
    fn footprint_scales_with_row_length() {
        let voxels: Vec<u8> = (0..4096u32).map(|i| (i % 7) as u8).collect();
        let a = footprint_ratio_bytes(&voxels, &vec![0.0; 100]);
        let b = footprint_ratio_bytes(&voxels, &vec![0.0; 1000]);
        assert!((b / a - 10.0).abs() < 1e-12);
    }
}
