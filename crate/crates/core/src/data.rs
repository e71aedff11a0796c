//! Dataset ingestion and IID partitioning.
//!
//! Two sources are supported: the MNIST IDX files and a seeded synthetic
//! generator of Gaussian class clusters. Features are stored row-major in a
//! flat buffer and always lie in `[0, 1]`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Magic number of an IDX file holding unsigned-byte images (3 dimensions).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Magic number of an IDX file holding unsigned-byte labels (1 dimension).
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Number of MNIST classes.
pub const MNIST_CLASSES: usize = 10;

/// Spread of the synthetic class means around the origin, in units of the
/// per-cluster standard deviation.
const SYNTHETIC_MEAN_SCALE: f64 = 8.0;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic number 0x{found:08x} at offset 0, expected 0x{expected:08x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated at offset {offset}, expected {expected} bytes but file has {actual}")]
    Truncated {
        path: PathBuf,
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error(
        "count mismatch: {images_path} declares {images} images at offset 4, \
         {labels_path} declares {labels} labels at offset 4"
    )]
    CountMismatch {
        images_path: PathBuf,
        images: usize,
        labels_path: PathBuf,
        labels: usize,
    },
    #[error("{path}: label {label} at offset {offset} is outside 0..{classes}")]
    LabelOutOfRange {
        path: PathBuf,
        offset: usize,
        label: u8,
        classes: usize,
    },
    #[error("cannot split {samples} samples across {devices} devices")]
    TooManyDevices { devices: usize, samples: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// A labeled sample matrix: `len()` rows of `n_features()` values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    n_features: usize,
    n_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        n_features: usize,
        n_classes: usize,
    ) -> Result<Self, DataError> {
        if n_features == 0 || n_classes == 0 {
            return Err(DataError::Invalid(format!(
                "feature dimension {n_features} and class count {n_classes} must be positive"
            )));
        }
        if features.len() != labels.len() * n_features {
            return Err(DataError::Invalid(format!(
                "{} feature values do not form {} rows of {}",
                features.len(),
                labels.len(),
                n_features
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(DataError::Invalid(format!(
                "label {bad} outside 0..{n_classes}"
            )));
        }
        if let Some(bad) = features.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DataError::Invalid(format!(
                "feature value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            features,
            labels,
            n_features,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [usize] {
        &mut self.labels
    }

    /// Copies the given rows, in order, into a new dataset.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            n_features: self.n_features,
            n_classes: self.n_classes,
        }
    }

    /// Splits off the first `n` rows from the rest.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.select(&head), self.select(&tail))
    }
}

/// One device's partition of the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    /// Device index `k`.
    pub owner: usize,
    /// Row indices into the dataset the shard was cut from.
    pub indices: Vec<usize>,
    pub data: Dataset,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    let word = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| DataError::Truncated {
            path: path.to_path_buf(),
            offset,
            expected: offset + 4,
            actual: bytes.len(),
        })?;
    Ok(u32::from_be_bytes([word[0], word[1], word[2], word[3]]))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), DataError> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

/// Parsed IDX image payload: `count` images of `rows * cols` bytes.
struct IdxImages<'a> {
    count: usize,
    pixels_per_image: usize,
    pixels: &'a [u8],
}

fn parse_idx_images<'a>(bytes: &'a [u8], path: &Path) -> Result<IdxImages<'a>, DataError> {
    check_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let pixels_per_image = rows * cols;
    let expected = 16 + count * pixels_per_image;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(IdxImages {
        count,
        pixels_per_image,
        pixels: &bytes[16..expected],
    })
}

fn parse_idx_labels<'a>(bytes: &'a [u8], path: &Path) -> Result<&'a [u8], DataError> {
    check_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(&bytes[8..expected])
}

/// Decodes an IDX image/label pair already read into memory. The paths are
/// only used in error messages.
pub fn decode_mnist_idx(
    image_bytes: &[u8],
    images_path: &Path,
    label_bytes: &[u8],
    labels_path: &Path,
) -> Result<Dataset, DataError> {
    let images = parse_idx_images(image_bytes, images_path)?;
    let labels = parse_idx_labels(label_bytes, labels_path)?;
    if images.count != labels.len() {
        return Err(DataError::CountMismatch {
            images_path: images_path.to_path_buf(),
            images: images.count,
            labels_path: labels_path.to_path_buf(),
            labels: labels.len(),
        });
    }
    if images.pixels_per_image == 0 {
        return Err(DataError::Invalid(format!(
            "{}: zero-sized images",
            images_path.display()
        )));
    }
    let mut out_labels = Vec::with_capacity(labels.len());
    for (i, &y) in labels.iter().enumerate() {
        if y as usize >= MNIST_CLASSES {
            return Err(DataError::LabelOutOfRange {
                path: labels_path.to_path_buf(),
                offset: 8 + i,
                label: y,
                classes: MNIST_CLASSES,
            });
        }
        out_labels.push(y as usize);
    }
    let features = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Ok(Dataset {
        features,
        labels: out_labels,
        n_features: images.pixels_per_image,
        n_classes: MNIST_CLASSES,
    })
}

/// Loads an MNIST image file and its label file, scaling pixels by 1/255.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;
    decode_mnist_idx(&image_bytes, images_path, &label_bytes, labels_path)
}

/// Loads the standard `train-*` and `t10k-*` file pairs from one directory.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset), DataError> {
    let train = load_mnist_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_mnist_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?;
    Ok((train, test))
}

/// Generates `n` samples from `classes` unit-variance Gaussian clusters in
/// `n_features` dimensions. Sample `i` carries label `i % classes`, so labels
/// are balanced; features are min-max rescaled per column into `[0, 1]`.
pub fn gen_synthetic(
    n: usize,
    n_features: usize,
    classes: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    gen_synthetic_with(n, n_features, classes, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn gen_synthetic_with<R: Rng + ?Sized>(
    n: usize,
    n_features: usize,
    classes: usize,
    rng: &mut R,
) -> Result<Dataset, DataError> {
    if classes == 0 || n < classes {
        return Err(DataError::Invalid(format!(
            "synthetic data needs n >= classes >= 1, got n = {n}, classes = {classes}"
        )));
    }
    if n_features == 0 {
        return Err(DataError::Invalid("synthetic data needs p >= 1".into()));
    }
    let means: Vec<f64> = (0..classes * n_features)
        .map(|_| SYNTHETIC_MEAN_SCALE * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut features = Vec::with_capacity(n * n_features);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % classes;
        let mean = &means[y * n_features..(y + 1) * n_features];
        features.extend(mean.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)));
        labels.push(y);
    }
    for j in 0..n_features {
        let column = features.iter().skip(j).step_by(n_features);
        let (lo, hi) = column.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        let span = hi - lo;
        for v in features.iter_mut().skip(j).step_by(n_features) {
            *v = if span > 0.0 {
                ((*v - lo) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
    Ok(Dataset {
        features,
        labels,
        n_features,
        n_classes: classes,
    })
}

/// Shuffles sample indices with a seeded permutation and cuts them into
/// `devices` contiguous blocks of `n / devices` samples. Leftover samples are
/// dropped.
pub fn partition_iid(ds: &Dataset, devices: usize, seed: u64) -> Result<Vec<Shard>, DataError> {
    partition_iid_with(ds, devices, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn partition_iid_with<R: Rng + ?Sized>(
    ds: &Dataset,
    devices: usize,
    rng: &mut R,
) -> Result<Vec<Shard>, DataError> {
    if devices == 0 || devices > ds.len() {
        return Err(DataError::TooManyDevices {
            devices,
            samples: ds.len(),
        });
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(rng);
    let size = ds.len() / devices;
    Ok(order
        .chunks_exact(size)
        .take(devices)
        .enumerate()
        .map(|(owner, block)| Shard {
            owner,
            indices: block.to_vec(),
            data: ds.select(block),
        })
        .collect())
}
