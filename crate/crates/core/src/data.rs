//! Dataset ingestion (IDX image files), synthetic Gaussian blobs, and the
//! class-space Non-IID partitioner that hands each client a small random
//! subset of classes.

use crate::tensor::{Tensor, TensorError};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal, StandardNormal};
use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use thiserror::Error;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Attempts before giving up on drawing a class assignment that covers the
/// whole class universe.
const COVERAGE_RETRIES: usize = 1_000;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Truncated { path: PathBuf, expected: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("class {class} has no samples in the parent set")]
    MissingClass { class: u32 },
    #[error("class coverage not achieved after {retries} draws")]
    CoverageUnreachable { retries: usize },
    #[error("client {client} shard too small to split into train and test")]
    ShardTooSmall { client: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// A labeled dataset: `(N, input_dim)` features and one class id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    features: Tensor,
    labels: Vec<u32>,
    class_universe: usize,
}

impl LabeledSet {
    pub fn new(features: Tensor, labels: Vec<u32>, class_universe: usize) -> Result<Self, DataError> {
        let (rows, _) = features.dim2()?;
        if rows == 0 {
            return Err(DataError::Invalid { field: "features", reason: "empty dataset".into() });
        }
        if labels.len() != rows {
            return Err(DataError::CountMismatch { images: rows, labels: labels.len() });
        }
        if class_universe == 0 {
            return Err(DataError::Invalid { field: "class_universe", reason: "must be positive".into() });
        }
        if let Some(&label) = labels.iter().find(|&&l| l as usize >= class_universe) {
            return Err(DataError::LabelOutOfRange { label, classes: class_universe });
        }
        Ok(Self { features, labels, class_universe })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn class_universe(&self) -> usize {
        self.class_universe
    }

    /// Per-class sample counts over the whole set.
    pub fn class_histogram(&self) -> Vec<u64> {
        let mut hist = vec![0u64; self.class_universe];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        hist
    }

    /// New set holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, DataError> {
        let dim = self.input_dim();
        let mut data = Vec::with_capacity(indices.len() * dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        Ok(Self {
            features: Tensor::new(vec![indices.len(), dim], data)?,
            labels,
            class_universe: self.class_universe,
        })
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| DataError::Truncated { path: path.to_path_buf(), expected: offset + 4, found: bytes.len() })
}

/// Loads an IDX image/label file pair (the MNIST/FMNIST container format:
/// big-endian headers, one byte per pixel or label). Pixels are scaled to
/// `[0, 1]`; the class universe is `max label + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledSet, DataError> {
    let images = read_file(images_path)?;
    let magic = be_u32(&images, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic { path: images_path.to_path_buf(), expected: IDX_IMAGES_MAGIC, found: magic });
    }
    let count = be_u32(&images, 4, images_path)? as usize;
    let rows = be_u32(&images, 8, images_path)? as usize;
    let cols = be_u32(&images, 12, images_path)? as usize;
    let pixel_bytes = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| DataError::Invalid { field: "image header", reason: "dimension overflow".into() })?;
    if images.len() < 16 + pixel_bytes {
        return Err(DataError::Truncated {
            path: images_path.to_path_buf(),
            expected: 16 + pixel_bytes,
            found: images.len(),
        });
    }

    let labels = read_file(labels_path)?;
    let magic = be_u32(&labels, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic { path: labels_path.to_path_buf(), expected: IDX_LABELS_MAGIC, found: magic });
    }
    let label_count = be_u32(&labels, 4, labels_path)? as usize;
    if labels.len() < 8 + label_count {
        return Err(DataError::Truncated {
            path: labels_path.to_path_buf(),
            expected: 8 + label_count,
            found: labels.len(),
        });
    }
    if count != label_count {
        return Err(DataError::CountMismatch { images: count, labels: label_count });
    }

    let data: Vec<f64> = images[16..16 + pixel_bytes].iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<u32> = labels[8..8 + label_count].iter().map(|&b| b as u32).collect();
    let universe = labels.iter().max().map_or(0, |&m| m as usize + 1);
    LabeledSet::new(Tensor::new(vec![count, rows * cols], data)?, labels, universe)
}

/// Deterministic Gaussian class clusters. Each class mean sits on a sphere
/// of radius 0.25 around the all-0.5 point, so default spreads keep values
/// near the unit box image data lives in.
pub fn synth_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledSet, DataError> {
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(DataError::Invalid { field: "synth_blobs", reason: "counts must be positive".into() });
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(DataError::Invalid { field: "spread", reason: "must be finite and nonnegative".into() });
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        let mut direction: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            direction[0] = 1.0;
        } else {
            for v in &mut direction {
                *v /= norm;
            }
        }
        let mean: Vec<f64> = direction.iter().map(|v| 0.5 + 0.25 * v).collect();
        for _ in 0..per_class {
            for &m in &mean {
                let noise: f64 = StandardNormal.sample(&mut rng);
                data.push(m + spread * noise);
            }
            labels.push(class as u32);
        }
    }
    LabeledSet::new(Tensor::new(vec![classes * per_class, dim], data)?, labels, classes)
}

/// Class-space heterogeneity knobs: each client draws its class count from
/// `round(N(avg, std))` clamped to `[1, universe]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    pub clients: usize,
    pub avg: f64,
    pub std: f64,
    pub seed: u64,
    pub train_fraction: f64,
}

impl PartitionSpec {
    fn validate(&self, universe: usize) -> Result<(), DataError> {
        if self.clients == 0 {
            return Err(DataError::Invalid { field: "clients", reason: "must be at least 1".into() });
        }
        if !(self.avg >= 1.0 && self.avg <= universe as f64) {
            return Err(DataError::Invalid {
                field: "avg",
                reason: format!("must lie in [1, {universe}], got {}", self.avg),
            });
        }
        if !(self.std >= 0.0 && self.std.is_finite()) {
            return Err(DataError::Invalid { field: "std", reason: format!("must be nonnegative, got {}", self.std) });
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(DataError::Invalid {
                field: "train_fraction",
                reason: format!("must lie strictly between 0 and 1, got {}", self.train_fraction),
            });
        }
        Ok(())
    }
}

/// Draws per-client class counts, then distinct classes per client,
/// redrawing until the union covers the whole universe.
fn draw_class_assignment(
    rng: &mut StdRng,
    spec: &PartitionSpec,
    universe: usize,
) -> Result<Vec<Vec<u32>>, DataError> {
    let normal = Normal::new(spec.avg, spec.std)
        .map_err(|e| DataError::Invalid { field: "std", reason: e.to_string() })?;
    for _ in 0..COVERAGE_RETRIES {
        let mut assignment = Vec::with_capacity(spec.clients);
        let mut covered = vec![false; universe];
        for _ in 0..spec.clients {
            let drawn: f64 = normal.sample(rng);
            let n_k = (drawn.round() as i64).clamp(1, universe as i64) as usize;
            let mut classes: Vec<u32> =
                rand::seq::index::sample(rng, universe, n_k).into_iter().map(|c| c as u32).collect();
            classes.sort_unstable();
            for &c in &classes {
                covered[c as usize] = true;
            }
            assignment.push(classes);
        }
        if covered.iter().all(|&c| c) {
            return Ok(assignment);
        }
    }
    Err(DataError::CoverageUnreachable { retries: COVERAGE_RETRIES })
}

/// Splits a dataset across clients with heterogeneous class spaces.
///
/// Each class's samples are shuffled once and dealt equally to the clients
/// that own the class (remainders go to the lowest client ids); every
/// client then splits each of its class chunks into train/test by
/// `train_fraction`. The result is a true partition of the parent set.
pub fn partition_non_iid(
    data: &LabeledSet,
    spec: &PartitionSpec,
) -> Result<Vec<(LabeledSet, LabeledSet)>, DataError> {
    let universe = data.class_universe();
    spec.validate(universe)?;
    let hist = data.class_histogram();
    if let Some(class) = hist.iter().position(|&c| c == 0) {
        return Err(DataError::MissingClass { class: class as u32 });
    }

    let mut rng = StdRng::seed_from_u64(spec.seed);
    let assignment = draw_class_assignment(&mut rng, spec, universe)?;

    // Group parent indices by class, then shuffle within each class.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); universe];
    for (i, &label) in data.labels().iter().enumerate() {
        by_class[label as usize].push(i);
    }
    for indices in &mut by_class {
        indices.shuffle(&mut rng);
    }

    // Deal each class to its owners: base share each, remainder to the
    // lowest client ids.
    let mut per_client: Vec<BTreeMap<u32, Vec<usize>>> = vec![BTreeMap::new(); spec.clients];
    for (class, samples) in by_class.iter().enumerate() {
        let owners: Vec<usize> =
            (0..spec.clients).filter(|&k| assignment[k].contains(&(class as u32))).collect();
        if owners.is_empty() {
            continue; // unreachable: coverage guaranteed above
        }
        let base = samples.len() / owners.len();
        let remainder = samples.len() % owners.len();
        let mut cursor = 0usize;
        for (j, &k) in owners.iter().enumerate() {
            let share = base + usize::from(j < remainder);
            let chunk = samples[cursor..cursor + share].to_vec();
            cursor += share;
            if !chunk.is_empty() {
                per_client[k].insert(class as u32, chunk);
            }
        }
    }

    let mut shards = Vec::with_capacity(spec.clients);
    for (k, classes) in per_client.iter().enumerate() {
        let mut train_idx = Vec::new();
        let mut test_idx = Vec::new();
        for chunk in classes.values() {
            let n_train = ((spec.train_fraction * chunk.len() as f64).round() as usize).min(chunk.len());
            train_idx.extend_from_slice(&chunk[..n_train]);
            test_idx.extend_from_slice(&chunk[n_train..]);
        }
        // Keep both sides nonempty so every client can be evaluated.
        if test_idx.is_empty() && train_idx.len() >= 2 {
            test_idx.push(train_idx.pop().expect("nonempty"));
        }
        if train_idx.is_empty() && test_idx.len() >= 2 {
            train_idx.push(test_idx.pop().expect("nonempty"));
        }
        if train_idx.is_empty() || test_idx.is_empty() {
            return Err(DataError::ShardTooSmall { client: k });
        }
        shards.push((data.subset(&train_idx)?, data.subset(&test_idx)?));
    }
    Ok(shards)
}

/// `K x universe` matrix of per-client training-sample counts per class.
pub fn distribution_heatmap(partitions: &[(LabeledSet, LabeledSet)]) -> Vec<Vec<u64>> {
    partitions.iter().map(|(train, _)| train.class_histogram()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx_images(path: &Path, magic: u32, images: &[[u8; 4]]) {
        let mut f = std::fs::File::create(path).unwrap();
        f.write_all(&magic.to_be_bytes()).unwrap();
        f.write_all(&(images.len() as u32).to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        for img in images {
            f.write_all(img).unwrap();
        }
    }

    fn write_idx_labels(path: &Path, magic: u32, labels: &[u8]) {
        let mut f = std::fs::File::create(path).unwrap();
        f.write_all(&magic.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
    }

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("protofed-data-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn idx_fixture_round_trips_exact_pixels() {
        let dir = temp_dir("fixture");
        let images_path = dir.join("imgs");
        let labels_path = dir.join("lbls");
        write_idx_images(&images_path, IDX_IMAGES_MAGIC, &[[0, 51, 102, 255], [10, 20, 30, 40]]);
        write_idx_labels(&labels_path, IDX_LABELS_MAGIC, &[1, 0]);
        let set = load_idx(&images_path, &labels_path).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.input_dim(), 4);
        assert_eq!(set.labels(), &[1, 0]);
        assert_eq!(set.features().row(0), &[0.0, 51.0 / 255.0, 102.0 / 255.0, 1.0]);
        assert_eq!(set.features().row(1), &[10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0, 40.0 / 255.0]);
    }

    #[test]
    fn labels_file_with_image_magic_is_rejected() {
        let dir = temp_dir("badmagic");
        let images_path = dir.join("imgs");
        let labels_path = dir.join("lbls");
        write_idx_images(&images_path, IDX_IMAGES_MAGIC, &[[0; 4]]);
        write_idx_labels(&labels_path, IDX_IMAGES_MAGIC, &[0]);
        let err = load_idx(&images_path, &labels_path).unwrap_err();
        assert!(matches!(err, DataError::BadMagic { expected: IDX_LABELS_MAGIC, .. }));
    }

    #[test]
    fn truncated_and_mismatched_files_give_distinct_errors() {
        let dir = temp_dir("trunc");
        let images_path = dir.join("imgs");
        let labels_path = dir.join("lbls");
        write_idx_images(&images_path, IDX_IMAGES_MAGIC, &[[7; 4], [8; 4]]);
        write_idx_labels(&labels_path, IDX_LABELS_MAGIC, &[0]);
        assert!(matches!(load_idx(&images_path, &labels_path).unwrap_err(), DataError::CountMismatch { .. }));

        let bytes = std::fs::read(&images_path).unwrap();
        std::fs::write(&images_path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_idx(&images_path, &labels_path).unwrap_err(), DataError::Truncated { .. }));
    }

    #[test]
    fn mnist_subset_fixture_loads() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mnist");
        let set = load_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte")).unwrap();
        assert_eq!(set.len(), 2000);
        assert_eq!(set.input_dim(), 784);
        assert_eq!(set.class_universe(), 10);
        assert!(set.features().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn full_mnist_loads_when_available() {
        // The canonical training set is 60k samples; only checked when a
        // full copy is present locally.
        let Ok(dir) = std::env::var("MNIST_DIR") else { return };
        let dir = Path::new(&dir);
        let set = match load_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte")) {
            Ok(set) => set,
            Err(_) => return,
        };
        assert_eq!(set.len(), 60_000);
        assert_eq!(set.input_dim(), 784);
        assert_eq!(set.class_universe(), 10);
    }

    #[test]
    fn synth_blob_counts_and_determinism() {
        let a = synth_blobs(2, 10, 5, 0.1, 7).unwrap();
        assert_eq!(a.len(), 20);
        let ones = a.labels().iter().filter(|&&l| l == 1).count();
        assert_eq!(ones, 10);
        let b = synth_blobs(2, 10, 5, 0.1, 7).unwrap();
        assert_eq!(a, b);
        let c = synth_blobs(2, 10, 5, 0.1, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_spread_collapses_to_class_means() {
        let set = synth_blobs(3, 4, 6, 0.0, 11).unwrap();
        for class in 0..3u32 {
            let rows: Vec<usize> = (0..set.len()).filter(|&i| set.labels()[i] == class).collect();
            let first = set.features().row(rows[0]);
            for &r in &rows[1..] {
                assert_eq!(set.features().row(r), first);
            }
        }
    }

    fn spec(clients: usize, avg: f64, std: f64, seed: u64) -> PartitionSpec {
        PartitionSpec { clients, avg, std, seed, train_fraction: 0.8 }
    }

    #[test]
    fn full_class_space_when_avg_is_universe() {
        let data = synth_blobs(4, 30, 3, 0.05, 1).unwrap();
        let shards = partition_non_iid(&data, &spec(5, 4.0, 0.0, 2)).unwrap();
        assert_eq!(shards.len(), 5);
        for (train, test) in &shards {
            let mut classes: Vec<u32> = train.labels().to_vec();
            classes.extend_from_slice(test.labels());
            classes.sort_unstable();
            classes.dedup();
            assert_eq!(classes, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn partition_is_complete_and_disjoint() {
        let data = synth_blobs(5, 40, 4, 0.1, 3).unwrap();
        let shards = partition_non_iid(&data, &spec(6, 3.0, 1.0, 4)).unwrap();
        // Compare the multiset of rows (features + label) across all shards
        // against the parent set.
        let row_key = |set: &LabeledSet, i: usize| {
            let mut key: Vec<u8> = Vec::new();
            for v in set.features().row(i) {
                key.extend_from_slice(&v.to_le_bytes());
            }
            key.extend_from_slice(&set.labels()[i].to_le_bytes());
            key
        };
        let mut parent: Vec<Vec<u8>> = (0..data.len()).map(|i| row_key(&data, i)).collect();
        let mut collected = Vec::new();
        for (train, test) in &shards {
            for i in 0..train.len() {
                collected.push(row_key(train, i));
            }
            for i in 0..test.len() {
                collected.push(row_key(test, i));
            }
        }
        parent.sort();
        collected.sort();
        assert_eq!(parent, collected);
    }

    #[test]
    fn class_count_statistics_track_spec() {
        let data = synth_blobs(10, 25, 4, 0.1, 5).unwrap();
        let shards = partition_non_iid(&data, &spec(20, 3.0, 1.0, 6)).unwrap();
        let counts: Vec<f64> = shards
            .iter()
            .map(|(train, test)| {
                let mut classes: Vec<u32> = train.labels().to_vec();
                classes.extend_from_slice(test.labels());
                classes.sort_unstable();
                classes.dedup();
                classes.len() as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        let var = counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (counts.len() - 1) as f64;
        let std = var.sqrt();
        assert!((mean - 3.0).abs() <= 0.6, "mean class count {mean}");
        assert!((0.4..=1.6).contains(&std), "class count std {std}");
    }

    #[test]
    fn partition_is_deterministic_per_seed() {
        let data = synth_blobs(4, 20, 3, 0.1, 9).unwrap();
        let a = partition_non_iid(&data, &spec(4, 2.0, 1.0, 10)).unwrap();
        let b = partition_non_iid(&data, &spec(4, 2.0, 1.0, 10)).unwrap();
        assert_eq!(a, b);
        let mut distinct = 0;
        for seed in 11..16 {
            let c = partition_non_iid(&data, &spec(4, 2.0, 1.0, seed)).unwrap();
            if c != a {
                distinct += 1;
            }
        }
        assert!(distinct >= 4, "only {distinct}/5 seeds differed");
    }

    #[test]
    fn every_class_is_covered() {
        let data = synth_blobs(8, 12, 3, 0.1, 13).unwrap();
        for seed in 0..10 {
            let shards = partition_non_iid(&data, &spec(6, 2.0, 1.0, seed)).unwrap();
            let heat = distribution_heatmap(&shards);
            for class in 0..8 {
                let column: u64 = heat.iter().map(|row| row[class]).sum();
                assert!(column >= 1, "class {class} uncovered at seed {seed}");
            }
        }
    }

    #[test]
    fn single_client_heatmap_is_global_histogram() {
        let data = synth_blobs(3, 15, 3, 0.1, 17).unwrap();
        let shards = partition_non_iid(&data, &PartitionSpec {
            clients: 1,
            avg: 3.0,
            std: 0.0,
            seed: 18,
            train_fraction: 0.8,
        })
        .unwrap();
        let heat = distribution_heatmap(&shards);
        let (train, test) = &shards[0];
        let total: Vec<u64> = train
            .class_histogram()
            .iter()
            .zip(test.class_histogram())
            .map(|(a, b)| a + b)
            .collect();
        assert_eq!(total, data.class_histogram());
        assert_eq!(heat[0], train.class_histogram());
    }

    #[test]
    fn heatmap_matches_hand_count_on_toy_fixture() {
        // 3 classes x 8 samples, 4 clients all owning every class, even
        // split: each client gets 2 samples per class, train_fraction 0.5
        // puts 1 in train and 1 in test, so the heatmap is all ones.
        let data = synth_blobs(3, 8, 2, 0.05, 21).unwrap();
        let shards = partition_non_iid(&data, &PartitionSpec {
            clients: 4,
            avg: 3.0,
            std: 0.0,
            seed: 22,
            train_fraction: 0.5,
        })
        .unwrap();
        let heat = distribution_heatmap(&shards);
        assert_eq!(heat, vec![vec![1, 1, 1]; 4]);
    }

    #[test]
    fn invalid_specs_are_named() {
        let data = synth_blobs(3, 10, 2, 0.1, 23).unwrap();
        let err = partition_non_iid(&data, &spec(0, 2.0, 1.0, 1)).unwrap_err();
        assert!(err.to_string().contains("clients"));
        let err = partition_non_iid(&data, &spec(2, 9.0, 1.0, 1)).unwrap_err();
        assert!(err.to_string().contains("avg"));
        let err = partition_non_iid(&data, &PartitionSpec {
            clients: 2,
            avg: 2.0,
            std: 1.0,
            seed: 1,
            train_fraction: 1.0,
        })
        .unwrap_err();
        assert!(err.to_string().contains("train_fraction"));
    }
}
