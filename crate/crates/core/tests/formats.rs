use proptest::prelude::*;
use saln_core::data::{self, BlobParams, Dataset, FeatureFormat, Provenance};

fn blobs(n: usize, d: usize, seed: u64) -> Dataset {
    data::generate_blobs(BlobParams { n, d, classes: 3, separation: 2.0 }, seed).unwrap()
}

fn same_content(a: &Dataset, b: &Dataset) -> bool {
    a.features().iter().zip(b.features().iter()).all(|(x, y)| x.to_bits() == y.to_bits())
        && a.features().dim() == b.features().dim()
        && a.labels() == b.labels()
        && a.class_count() == b.class_count()
}

#[test]
fn binary_and_csv_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = blobs(50, 7, 4);
    for (name, format) in [("f.bin", FeatureFormat::Binary), ("f.csv", FeatureFormat::Csv)] {
        let path = dir.path().join(name);
        assert_eq!(FeatureFormat::from_path(&path), format);
        data::write_features(&ds, &path, format).unwrap();
        let back = data::load_features(&path, format).unwrap();
        assert!(same_content(&ds, &back), "{name}");
        assert!(matches!(back.provenance(), Provenance::File { .. }));
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let err = data::load_features(std::path::Path::new("/nonexistent/x.bin"), FeatureFormat::Binary).unwrap_err();
    assert_eq!(err.kind(), saln_core::ErrorKind::Io);
}

#[test]
fn split_partitions_exactly() {
    let spec = data::SplitSpec { train_fraction: 0.7, val_fraction: 0.15, test_fraction: 0.15, shuffle_seed: 1 };
    for n in [3, 10, 101, 2000] {
        let (a, b, c) = data::split_indices(n, &spec).unwrap();
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn binary_encoding_round_trips(
        rows in prop::collection::vec(prop::collection::vec(-1e6f32..1e6, 3), 1..30),
        labelled in any::<bool>(),
    ) {
        let n = rows.len();
        let flat: Vec<f64> = rows.iter().flatten().map(|&v| f64::from(v)).collect();
        let features = ndarray::Array2::from_shape_vec((n, 3), flat).unwrap();
        let labels = labelled.then(|| (0..n).map(|i| i % 4).collect());
        let ds = Dataset::new(features, labels, 4, Provenance::File { path: "mem".into() }).unwrap();
        let bytes = data::encode_binary(&ds);
        let back = data::decode_binary(&bytes, Provenance::File { path: "mem".into() }).unwrap();
        prop_assert_eq!(back.features(), ds.features());
        prop_assert_eq!(back.labels(), ds.labels());
        prop_assert_eq!(data::encode_binary(&back), bytes);
    }

    #[test]
    fn epoch_batches_cover_every_sample_once(n in 2usize..300, batch_size in 2usize..70, epoch in 0u64..5) {
        let ds = blobs(n.max(3), 2, 0);
        let batches = data::batches(&ds, batch_size, 17, epoch).unwrap();
        let mut ids: Vec<usize> = batches.iter().flat_map(|b| b.ids.iter().copied()).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..ds.len()).collect::<Vec<_>>());
        prop_assert!(batches.iter().all(|b| b.len() >= 2));
    }
}
