use std::fs;
use std::path::Path;

use fedsamp::dataset::{
    generate_synthetic, load_idx, partition_noniid, power_law_sizes, FlatDataset, Samples,
    SyntheticConfig, IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC,
};
use fedsamp::error::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    for v in [IDX_IMAGE_MAGIC, count, rows, cols] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn write_pair(dir: &Path, images: &[u8], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
    let (i, l) = (dir.join("images.idx"), dir.join("labels.idx"));
    fs::write(&i, images).unwrap();
    fs::write(&l, labels).unwrap();
    (i, l)
}

#[test]
fn two_small_images_load() {
    let dir = tempfile::tempdir().unwrap();
    let (i, l) = write_pair(
        dir.path(),
        &idx_images(2, 2, 2, &[0, 255, 51, 102, 255, 255, 0, 0]),
        &idx_labels(&[3, 1]),
    );
    let data = load_idx(&i, &l).unwrap();
    assert_eq!(data.samples.len(), 2);
    assert_eq!(data.samples.dim(), 4);
    assert_eq!(data.samples.x(0), &[0.0, 1.0, 0.2, 0.4]);
    assert_eq!(data.samples.labels(), &[3, 1]);
    assert_eq!(data.num_classes, 4);
}

#[test]
fn truncated_image_file_is_an_eof_error() {
    let dir = tempfile::tempdir().unwrap();
    let (i, l) = write_pair(dir.path(), &idx_images(2, 2, 2, &[1, 2, 3]), &idx_labels(&[0, 1]));
    let err = load_idx(&i, &l).unwrap_err();
    assert!(matches!(err, Error::UnexpectedEof { .. }), "{err}");
    assert!(err.to_string().contains("unexpected end of file"));
}

#[test]
fn label_count_must_match_image_count() {
    let dir = tempfile::tempdir().unwrap();
    let (i, l) = write_pair(dir.path(), &idx_images(2, 1, 1, &[1, 2]), &idx_labels(&[0, 1, 2]));
    let err = load_idx(&i, &l).unwrap_err();
    assert!(err.to_string().contains("count mismatch"), "{err}");
}

#[test]
fn swapped_files_fail_on_magic() {
    let dir = tempfile::tempdir().unwrap();
    let (i, l) = write_pair(dir.path(), &idx_images(1, 1, 1, &[1]), &idx_labels(&[0]));
    assert!(matches!(load_idx(&l, &i), Err(Error::BadMagic { .. })));
}

#[test]
fn default_synthetic_sizes() {
    let data = generate_synthetic(&SyntheticConfig::default(), 7).unwrap();
    assert_eq!(data.shards.len(), 100);
    assert_eq!(data.total(), 20_509);
    assert!(data.shards.iter().all(|s| !s.is_empty() && s.dim() == 60));
    assert!(data
        .shards
        .iter()
        .flat_map(|s| s.labels())
        .all(|&y| (y as usize) < data.num_classes));
}

#[test]
fn zero_skew_gives_matching_label_histograms() {
    let cfg = SyntheticConfig {
        n_clients: 4,
        total_samples: 40_000,
        alpha_skew: 0.0,
        beta_skew: 0.0,
        power_exponent: 0.0,
        ..SyntheticConfig::default()
    };
    let data = generate_synthetic(&cfg, 3).unwrap();
    let hist = |s: &Samples| {
        let mut h = vec![0.0; data.num_classes];
        for &y in s.labels() {
            h[y as usize] += 1.0 / s.len() as f64;
        }
        h
    };
    let first = hist(&data.shards[0]);
    for shard in &data.shards[1..] {
        for (a, b) in first.iter().zip(hist(shard)) {
            // Binomial standard error is below 0.005 at this shard size.
            assert!((a - b).abs() < 0.03, "{a} vs {b}");
        }
    }
}

fn mnist_like(n: usize, classes: usize, seed: u64) -> FlatDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 16;
    let features = (0..n * dim).map(|_| rng.random::<f32>()).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes as u32)).collect();
    FlatDataset {
        samples: Samples::from_parts(dim, features, labels).unwrap(),
        num_classes: classes,
    }
}

fn distinct_labels(s: &Samples) -> usize {
    let mut l = s.labels().to_vec();
    l.sort_unstable();
    l.dedup();
    l.len()
}

#[test]
fn mnist_sized_partition_keeps_one_to_six_classes() {
    let flat = mnist_like(12_000, 10, 1);
    let fed = partition_noniid(&flat, 100, (1, 6), true, 9).unwrap();
    assert_eq!(fed.shards.len(), 100);
    assert_eq!(fed.total(), 12_000);
    for s in &fed.shards {
        assert!((1..=6).contains(&distinct_labels(s)));
    }
}

fn multiset(samples: impl Iterator<Item = (Vec<u32>, u32)>) -> Vec<(Vec<u32>, u32)> {
    let mut v: Vec<_> = samples.collect();
    v.sort();
    v
}

fn rows(s: &Samples) -> impl Iterator<Item = (Vec<u32>, u32)> + '_ {
    (0..s.len()).map(|i| (s.x(i).iter().map(|v| v.to_bits()).collect(), s.labels()[i]))
}

fn check_partition(
    flat: &FlatDataset,
    fed: &fedsamp::dataset::FederatedDataset,
    n: usize,
    lo: usize,
    hi: usize,
) -> Result<(), TestCaseError> {
    prop_assert_eq!(fed.shards.len(), n);
    prop_assert!(fed.shards.iter().all(|s| !s.is_empty()));
    if n > 1 {
        for s in &fed.shards {
            let d = distinct_labels(s);
            prop_assert!(d >= lo.min(s.len()) && d <= hi, "{} classes outside {}..={}", d, lo, hi);
        }
    }
    prop_assert_eq!(multiset(rows(&flat.samples)), multiset(fed.shards.iter().flat_map(rows)));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn partition_conserves_samples(seed in any::<u64>(), n in 1usize..20, lo in 1usize..4, power in any::<bool>()) {
        let flat = mnist_like(600, 6, seed);
        let fed = partition_noniid(&flat, n, (lo, 6), power, seed).unwrap();
        check_partition(&flat, &fed, n, lo, 6)?;
    }

    #[test]
    fn narrow_partitions_succeed_or_report_infeasibility(seed in any::<u64>(), n in 2usize..20, lo in 1usize..4, extra in 0usize..3, power in any::<bool>()) {
        let flat = mnist_like(600, 6, seed);
        let hi = (lo + extra).min(6);
        match partition_noniid(&flat, n, (lo, hi), power, seed) {
            Ok(fed) => check_partition(&flat, &fed, n, lo, hi)?,
            Err(e) => prop_assert!(matches!(e, Error::InfeasiblePartition { .. }), "{}", e),
        }
    }

    #[test]
    fn synthetic_is_deterministic(seed in any::<u64>(), n in 2usize..12) {
        let cfg = SyntheticConfig { n_clients: n, total_samples: 50 * n, dim: 5, ..SyntheticConfig::default() };
        let a = generate_synthetic(&cfg, seed).unwrap();
        let b = generate_synthetic(&cfg, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.total(), 50 * n);
    }

    #[test]
    fn power_law_sizes_are_sorted_and_exact(n in 1usize..200, extra in 0usize..5000, exponent in 0.0f64..3.0) {
        let total = n + extra;
        let sizes = power_law_sizes(n, total, exponent);
        prop_assert_eq!(sizes.len(), n);
        prop_assert_eq!(sizes.iter().sum::<usize>(), total);
        prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
    }
}
