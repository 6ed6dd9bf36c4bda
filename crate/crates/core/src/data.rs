//! Datasets: synthetic generators, IDX (MNIST) parsing, seeded splits.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled samples with flattened features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidInput(format!("label {bad} >= {classes} classes")));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            classes: self.classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Splits {
    /// Shuffles with `seed`, then takes the first `train`, `val`, `test` rows.
    pub fn from_dataset(data: &Dataset, train: usize, val: usize, test: usize, seed: u64) -> Result<Self> {
        if train + val + test > data.len() {
            return Err(Error::Config(format!(
                "requested {} samples from a dataset of {}",
                train + val + test,
                data.len()
            )));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut seeded_rng(seed));
        Ok(Self {
            train: data.subset(&order[..train]),
            val: data.subset(&order[train..train + val]),
            test: data.subset(&order[train + val..train + val + test]),
        })
    }

    /// 70/15/15 split of a dataset that is already in random order.
    pub fn seventy_fifteen(data: &Dataset) -> Self {
        let n = data.len();
        let train = n * 70 / 100;
        let val = n * 15 / 100;
        let rows: Vec<usize> = (0..n).collect();
        Self {
            train: data.subset(&rows[..train]),
            val: data.subset(&rows[train..train + val]),
            test: data.subset(&rows[train + val..]),
        }
    }

    pub fn check_non_empty(&self) -> Result<()> {
        for (name, d) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if d.is_empty() {
                return Err(Error::Config(format!("{name} split is empty")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SyntheticKind {
    /// Gaussian blobs whose centers sit evenly on the unit circle.
    Blobs { n: usize, classes: usize, noise: f64 },
    /// Two interleaved spiral arms.
    Spirals { n: usize, noise: f64 },
}

/// Deterministic synthetic dataset, shuffled and split 70/15/15.
pub fn generate_dataset(kind: SyntheticKind, seed: u64) -> Result<Splits> {
    let mut rng = seeded_rng(seed);
    let (n, classes) = match kind {
        SyntheticKind::Blobs { n, classes, noise } => {
            if classes < 2 || !(noise >= 0.0) || !noise.is_finite() {
                return Err(Error::Config(format!(
                    "blobs need >= 2 classes and finite noise >= 0 (got {classes}, {noise})"
                )));
            }
            (n, classes)
        }
        SyntheticKind::Spirals { noise, n } => {
            if !(noise >= 0.0) || !noise.is_finite() {
                return Err(Error::Config(format!("spiral noise {noise} must be >= 0")));
            }
            (n, 2)
        }
    };
    if n < 20 {
        return Err(Error::Config(format!("need at least 20 samples, got {n}")));
    }
    let mut rows = Vec::with_capacity(n);
    let normal = |rng: &mut crate::rng::Rng| -> f64 { rng.sample(StandardNormal) };
    for i in 0..n {
        let label = i % classes;
        let point = match kind {
            SyntheticKind::Blobs { noise, .. } => {
                let angle = std::f64::consts::TAU * label as f64 / classes as f64;
                [
                    angle.cos() + noise * normal(&mut rng),
                    angle.sin() + noise * normal(&mut rng),
                ]
            }
            SyntheticKind::Spirals { noise, .. } => {
                let k = i / 2;
                let per_arm = n.div_ceil(2);
                let t = (k as f64 + 0.5) / per_arm as f64;
                let angle = 3.0 * std::f64::consts::PI * t + std::f64::consts::PI * label as f64;
                [
                    t * angle.cos() + noise * normal(&mut rng),
                    t * angle.sin() + noise * normal(&mut rng),
                ]
            }
        };
        rows.push((point, label));
    }
    rows.shuffle(&mut rng);
    let features = Tensor::new(
        vec![n, 2],
        rows.iter().flat_map(|(p, _)| p.iter().copied()).collect(),
    )?;
    let labels = rows.iter().map(|(_, l)| *l).collect();
    let data = Dataset::new(features, labels, classes)?;
    Ok(Splits::seventy_fifteen(&data))
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated header: missing {what} at offset {offset}"),
        })
}

/// Parses an IDX3 image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = read_u32(bytes, 0, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = read_u32(bytes, 4, "image count")? as usize;
    let rows = read_u32(bytes, 8, "row count")? as usize;
    let cols = read_u32(bytes, 12, "column count")? as usize;
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated pixel data: expected {} bytes in total", 16 + need),
        });
    }
    if body.len() > need {
        return Err(Error::Format {
            offset: (16 + need) as u64,
            message: format!("{} trailing bytes after pixel data", body.len() - need),
        });
    }
    Ok((count, rows, cols, body.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let count = read_u32(bytes, 4, "label count")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated label data: expected {} bytes in total", 8 + count),
        });
    }
    if body.len() > count {
        return Err(Error::Format {
            offset: (8 + count) as u64,
            message: format!("{} trailing bytes after label data", body.len() - count),
        });
    }
    Ok(body.to_vec())
}

/// Builds a dataset from IDX image and label bytes. Pixels are scaled to
/// `[0, 1]` by dividing by 255.
pub fn mnist_from_idx_bytes(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (count, rows, cols, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != count {
        return Err(Error::Format {
            offset: 4,
            message: format!("label count {} does not match image count {count}", labels.len()),
        });
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1).max(10);
    let features = Tensor::new(
        vec![count, rows * cols],
        pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )?;
    Dataset::new(features, labels.into_iter().map(usize::from).collect(), classes)
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))
    };
    mnist_from_idx_bytes(&read(images_path)?, &read(labels_path)?)
}

/// Serializes a dataset's features and labels as IDX bytes (features are
/// rescaled to bytes). The inverse of [`mnist_from_idx_bytes`] for byte data.
pub fn to_idx_bytes(data: &Dataset, rows: usize, cols: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    if data.features.row_len() != rows * cols {
        return Err(Error::InvalidInput(format!(
            "{} features do not form a {rows}x{cols} image",
            data.features.row_len()
        )));
    }
    let mut images = Vec::with_capacity(16 + data.features.len());
    for v in [IDX_IMAGES_MAGIC, data.len() as u32, rows as u32, cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend(data.features.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut labels = Vec::with_capacity(8 + data.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(data.len() as u32).to_be_bytes());
    labels.extend(data.labels.iter().map(|&l| l as u8));
    Ok((images, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_images() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        b.extend_from_slice(&[0, 255, 128, 1, 9, 8, 7, 6]);
        b
    }

    fn tiny_labels() -> Vec<u8> {
        vec![0, 0, 8, 1, 0, 0, 0, 2, 3, 7]
    }

    #[test]
    fn parses_two_by_two_images() {
        let d = mnist_from_idx_bytes(&tiny_images(), &tiny_labels()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.features.row_len(), 4);
        assert_eq!(d.features.row(0)[1], 1.0);
        assert_eq!(d.labels, vec![3, 7]);
    }

    #[test]
    fn bad_magic_names_offset_zero() {
        let mut img = tiny_images();
        img[3] = 4;
        match mnist_from_idx_bytes(&img, &tiny_labels()) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_and_mismatched_files_are_rejected() {
        let img = tiny_images();
        match mnist_from_idx_bytes(&img[..img.len() - 1], &tiny_labels()) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, img.len() as u64 - 1),
            other => panic!("{other:?}"),
        }
        match mnist_from_idx_bytes(&img[..10], &tiny_labels()) {
            Err(Error::Format { .. }) => {}
            other => panic!("{other:?}"),
        }
        let labels = vec![0, 0, 8, 1, 0, 0, 0, 1, 3];
        match mnist_from_idx_bytes(&img, &labels) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, 4);
                assert!(message.contains("does not match"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn idx_round_trip() {
        let d = mnist_from_idx_bytes(&tiny_images(), &tiny_labels()).unwrap();
        let (i, l) = to_idx_bytes(&d, 2, 2).unwrap();
        assert_eq!(i, tiny_images());
        assert_eq!(l, tiny_labels());
    }

    #[test]
    fn synthetic_determinism_balance_and_split() {
        let kind = SyntheticKind::Blobs {
            n: 100,
            classes: 2,
            noise: 0.1,
        };
        let a = generate_dataset(kind, 5).unwrap();
        let b = generate_dataset(kind, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (70, 15, 15));

        let s = generate_dataset(SyntheticKind::Spirals { n: 300, noise: 0.05 }, 1).unwrap();
        let mut counts = [0usize; 2];
        for d in [&s.train, &s.val, &s.test] {
            for (c, k) in counts.iter_mut().zip(d.class_counts()) {
                *c += k;
            }
        }
        assert!(counts.iter().all(|&c| c.abs_diff(150) <= 1), "{counts:?}");
    }

    #[test]
    fn degenerate_synthetic_params_rejected() {
        assert!(generate_dataset(SyntheticKind::Blobs { n: 10, classes: 2, noise: 0.1 }, 0).is_err());
        assert!(generate_dataset(SyntheticKind::Blobs { n: 50, classes: 1, noise: 0.1 }, 0).is_err());
        assert!(generate_dataset(SyntheticKind::Spirals { n: 50, noise: -1.0 }, 0).is_err());
    }
}
