use proptest::prelude::*;
use raptor::encoders::{EncoderSpec, SyntheticEncoder};
use raptor::reduction::{embed_volume, AxisSet, ProjectionMatrix, ScaleMode};
use raptor::simlab::{make_task, SimSpec, SimTask};
use raptor::store::{merge, read_embeddings, write_embeddings, EmbeddingReader, EmbeddingSet};
use raptor::volumes::{list_volume_files, load_volume, write_volume, RvolOptions, VolumeFormat};
use tempfile::TempDir;

/// Simulated volumes written to disk, read back, embedded and stored give
/// the same rows as embedding them in memory.
#[test]
fn disk_round_trip_matches_in_memory() {
    let tmp = TempDir::new().unwrap();
    let spec = SimSpec::new(SimTask::Size, 16, 6, 4);
    let ds = make_task(&spec).unwrap();
    ds.write(tmp.path(), RvolOptions::default()).unwrap();

    let enc = SyntheticEncoder::new(EncoderSpec::synthetic(16, 32, 1)).unwrap();
    let r = ProjectionMatrix::generate(5, 32, 2, ScaleMode::InvSqrtK);
    let embed = |v: &raptor::volumes::Volume| embed_volume(v, &enc, &r, AxisSet::ALL, Some(64)).unwrap();

    let files = list_volume_files(tmp.path()).unwrap();
    assert_eq!(files.len(), 6);
    let from_disk: Vec<_> = files
        .iter()
        .map(|f| embed(&load_volume(f, VolumeFormat::Rvol).unwrap()))
        .collect();
    let in_memory: Vec<_> = ds.volumes.iter().map(embed).collect();
    assert_eq!(from_disk, in_memory);

    let path = tmp.path().join("set.remb");
    write_embeddings(&EmbeddingSet::from_embeddings(&from_disk).unwrap(), &path).unwrap();
    let set = read_embeddings(&path).unwrap();
    assert_eq!(set.header.row_len(), 3 * 5 * 4 * 4);
    let mut reader = EmbeddingReader::open(&path).unwrap();
    for (i, e) in in_memory.iter().enumerate().rev() {
        assert_eq!(set.ids[i], e.meta.volume_id);
        assert_eq!(reader.read_row(i).unwrap(), e.vector);
    }

    let labels = std::fs::read_to_string(tmp.path().join("labels.csv")).unwrap();
    assert_eq!(labels.lines().nth(2), Some("sim00001,sim00001.rvol,1"));
}

#[test]
fn compressed_and_plain_rvol_decode_identically() {
    let tmp = TempDir::new().unwrap();
    let v = make_task(&SimSpec::new(SimTask::Location, 8, 2, 0))
        .unwrap()
        .volumes
        .remove(1);
    let plain = tmp.path().join("plain.rvol");
    let packed = tmp.path().join("packed.rvol");
    write_volume(&v, &plain, RvolOptions::default()).unwrap();
    let gz = write_volume(
        &v,
        &packed,
        RvolOptions {
            compress: true,
            ..RvolOptions::default()
        },
    )
    .unwrap();
    assert!(gz < std::fs::metadata(&plain).unwrap().len() as usize);
    let a = load_volume(&plain, VolumeFormat::Rvol).unwrap();
    let b = load_volume(&packed, VolumeFormat::Rvol).unwrap();
    assert_eq!(a.voxels(), b.voxels());
}

fn set_with(ids: &[String], seed: u64) -> EmbeddingSet {
    let header = raptor::store::header_for(2, 1, 3, 9, AxisSet::single(raptor::volumes::Axis::Axial));
    let mut set = EmbeddingSet::empty(header);
    for (i, id) in ids.iter().enumerate() {
        set.ids.push(id.clone());
        set.rows.push(vec![seed as f32, i as f32]);
    }
    set
}

proptest! {
    #[test]
    fn merge_keeps_disjoint_rows(n in 0usize..6, m in 0usize..6) {
        let a_ids: Vec<String> = (0..n).map(|i| format!("a{i}")).collect();
        let b_ids: Vec<String> = (0..m).map(|i| format!("b{i}")).collect();
        let merged = merge(&set_with(&a_ids, 1), &set_with(&b_ids, 2)).unwrap();
        prop_assert_eq!(merged.len(), n + m);
        for (i, id) in b_ids.iter().enumerate() {
            prop_assert_eq!(merged.row(id).unwrap(), &[2.0, i as f32][..]);
        }
    }

    #[test]
    fn merge_rejects_shared_ids(n in 1usize..6) {
        let ids: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
        prop_assert!(merge(&set_with(&ids, 1), &set_with(&ids[n - 1..], 2)).is_err());
    }
}
