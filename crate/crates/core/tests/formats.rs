use maskhead::dataset::{open_dataset, rle_encode, write_dataset, DatasetManifest, EmbeddingRecord, FORMAT_VERSION};
use maskhead::grid::BitGrid;
use maskhead::{Error, Matrix};

fn manifest(d: usize, n: usize) -> DatasetManifest {
    DatasetManifest {
        class_names: vec!["person".into(), "car".into()],
        d,
        embed_dim: 4,
        mask_h: 8,
        mask_w: 8,
        record_count: n,
        format_version: FORMAT_VERSION,
        seed_note: "format test".into(),
    }
}

fn record(i: usize, d: usize) -> EmbeddingRecord {
    EmbeddingRecord {
        image_id: format!("r{i}"),
        // awkward float payloads: subnormals, signed zero, extremes
        embeddings: Matrix::from_fn(d, 4, |r, c| match (r + c + i) % 5 {
            0 => f32::MIN_POSITIVE / 8.0,
            1 => -0.0,
            2 => f32::MAX,
            3 => -1.0e-30,
            _ => (r * 4 + c) as f32 * 0.1,
        }),
        masks: (0..d)
            .map(|r| rle_encode(&BitGrid::rect(8, 8, r % 8, 0, 8, 3)))
            .collect(),
        labels: vec![1, u8::from(i.is_multiple_of(2))],
        image_h: 16,
        image_w: 16,
    }
}

#[test]
fn float_payloads_survive_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.usam");
    let recs: Vec<_> = (0..3).map(|i| record(i, 6)).collect();
    write_dataset(&manifest(6, 3), &recs, &path).unwrap();
    let reader = open_dataset(&path).unwrap();
    for (i, rec) in recs.iter().enumerate() {
        let back = reader.read(i).unwrap();
        let bits = |m: &Matrix<f32>| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.embeddings), bits(&rec.embeddings));
        assert_eq!(&back, rec);
    }
}

#[test]
fn short_record_under_manifest_is_truncated() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.usam");
    // write a self-consistent d=99 file, then patch the manifest to claim d=100
    write_dataset(&manifest(99, 1), &[record(0, 99)], &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let manifest_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let mut pos = 20 + 4;
    for name in ["person", "car"] {
        pos += 4 + name.len();
    }
    assert_eq!(u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()), 99);
    bytes[pos..pos + 4].copy_from_slice(&100u32.to_le_bytes());
    let crc = crc32fast::hash(&bytes[20..20 + manifest_len]);
    bytes[20 + manifest_len..24 + manifest_len].copy_from_slice(&crc.to_le_bytes());
    std::fs::write(&path, &bytes).unwrap();

    let reader = open_dataset(&path).unwrap();
    assert_eq!(reader.manifest().d, 100);
    assert!(matches!(reader.read(0), Err(Error::TruncatedRecord { index: 0, .. })));
}

#[test]
fn cut_off_file_is_truncated() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.usam");
    write_dataset(&manifest(5, 2), &[record(0, 5), record(1, 5)], &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    let reader = open_dataset(&path).unwrap();
    assert!(reader.read(0).is_ok());
    assert!(matches!(reader.read(1), Err(Error::TruncatedRecord { index: 1, .. })));
}

#[test]
fn manifest_corruption_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.usam");
    write_dataset(&manifest(5, 1), &[record(0, 5)], &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[26] ^= 0x20;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(open_dataset(&path), Err(Error::ChecksumMismatch("manifest"))));
}

#[test]
fn shared_reader_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.usam");
    let recs: Vec<_> = (0..8).map(|i| record(i, 4)).collect();
    write_dataset(&manifest(4, 8), &recs, &path).unwrap();
    let reader = open_dataset(&path).unwrap();
    std::thread::scope(|s| {
        for t in 0..4 {
            let (reader, recs) = (&reader, &recs);
            s.spawn(move || {
                for i in (0..8).rev().filter(|i| i % 4 == t) {
                    assert_eq!(&reader.read(i).unwrap(), &recs[i]);
                }
            });
        }
    });
}
