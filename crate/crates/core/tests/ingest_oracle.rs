//! PCA reduction against an independent eigensolver, plus the end-to-end
//! image pipeline round trip through the dataset serialization.

mod common;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rankscope_core::data::{load_dataset, save_dataset, Provenance};
use rankscope_core::ingest::{
    merge_patches, pad_with_noise, pca_reduce, synthetic_fixture, to_patched_dataset, to_patches,
};
use rankscope_core::spectral::{rank_at_threshold, singular_values};

#[test]
fn pca_error_matches_tail_energy_both_routes() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let a = DMatrix::from_fn(30, 24, |_, _| rng.gen_range(-1.0..1.0));
    let svd_vals = singular_values(&a).unwrap();
    let oracle_vals = common::singular_values_oracle(&a);

    for r in [1usize, 5, 12, 23] {
        let rec = pca_reduce(&a, r, false).unwrap();
        let err_sq = (&a - &rec).norm_squared();
        let tail_svd: f64 = svd_vals[r..].iter().map(|s| s * s).sum();
        let tail_oracle: f64 = oracle_vals[r..].iter().map(|s| s * s).sum();
        assert!(
            (err_sq - tail_svd).abs() <= 1e-8 * tail_svd.max(1e-12),
            "r={r}: err^2 {err_sq} vs svd tail {tail_svd}"
        );
        assert!(
            (err_sq - tail_oracle).abs() <= 1e-7 * tail_oracle.max(1e-12),
            "r={r}: err^2 {err_sq} vs oracle tail {tail_oracle}"
        );
    }
}

#[test]
fn reduced_fixture_has_threshold_rank_exactly_r() {
    let set = synthetic_fixture(160, 28, 28, 17);
    let matrix = set.to_matrix();
    let mut last_err = f64::INFINITY;
    for r in [10usize, 20, 30] {
        let rec = pca_reduce(&matrix, r, false).unwrap();
        let vals = singular_values(&rec).unwrap();
        assert_eq!(rank_at_threshold(&vals, 1e-6).unwrap(), r);
        let err = (&matrix - &rec).norm_squared();
        assert!(err < last_err, "truncation error must shrink as r grows");
        last_err = err;
    }
}

#[test]
fn image_pipeline_round_trips_through_dataset_files() {
    let raw = synthetic_fixture(12, 14, 14, 99);
    let padded = pad_with_noise(&raw, 7, 0.15, 23);
    assert_eq!((padded.height, padded.width), (28, 28));

    let blocks = to_patches(&padded, (2, 2)).unwrap();
    let merged = merge_patches(&blocks, &padded.labels, (2, 2), 28, 28).unwrap();
    assert_eq!(merged, padded);

    let ds = to_patched_dataset(&padded, (2, 2), (0, 1), 0.15, "fixture").unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, None, dir.path()).unwrap();
    let (basis, loaded) = load_dataset(dir.path()).unwrap();
    assert!(basis.is_none());
    assert_eq!(loaded.n, ds.n);
    assert_eq!(loaded.k, 0);
    assert!(matches!(loaded.provenance, Provenance::External { .. }));
    for i in 0..ds.n {
        assert_eq!(loaded.inputs[i], ds.inputs[i]);
        assert_eq!(loaded.labels[i], ds.labels[i]);
    }
}
