//! Datasets: the Gaussian-cluster generator and an IDX (MNIST format) reader.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derived_rng, rng_from_seed, LabRng};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One row per sample.
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        inputs: Array2<f64>,
        labels: Vec<usize>,
        n_classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::invalid("dataset must contain at least one sample"));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::CountMismatch {
                images: inputs.nrows(),
                labels: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::invalid(format!("label {bad} outside 0..{n_classes}")));
        }
        Ok(Self {
            inputs,
            labels,
            n_classes,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Rows `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            provenance: self.provenance.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub n_per_class: usize,
    pub n_classes: usize,
    pub dim: usize,
    pub seed: u64,
}

fn check_counts(counts: &[usize]) -> Result<()> {
    if counts.contains(&0) {
        return Err(Error::invalid(
            "cluster data needs positive sample, class and dimension counts",
        ));
    }
    Ok(())
}

fn center(dim: usize, rng: &mut LabRng) -> Vec<f64> {
    (0..dim).map(|_| rng.random::<f64>() * 10.0).collect()
}

fn fill_samples(rows: &mut Vec<f64>, c: &[f64], n: usize, rng: &mut LabRng) {
    for _ in 0..n {
        for &ci in c {
            let z: f64 = StandardNormal.sample(rng);
            rows.push(ci + 0.5 * z);
        }
    }
}

/// Class by class: a center uniform in `[0, 10)^dim`, then `n_per_class`
/// samples `center + 0.5 · N(0, I)`. One random stream drives everything.
pub fn generate_cluster_data(n_per_class: usize, n_classes: usize, dim: usize, seed: u64) -> Result<Dataset> {
    check_counts(&[n_per_class, n_classes, dim])?;
    let mut rng = rng_from_seed(seed);
    let mut rows = Vec::with_capacity(n_per_class * n_classes * dim);
    let mut labels = Vec::with_capacity(n_per_class * n_classes);
    for k in 0..n_classes {
        let c = center(dim, &mut rng);
        fill_samples(&mut rows, &c, n_per_class, &mut rng);
        labels.extend(std::iter::repeat_n(k, n_per_class));
    }
    let inputs = Array2::from_shape_vec((labels.len(), dim), rows).expect("shape matches");
    Dataset::new(
        inputs,
        labels,
        n_classes,
        format!("clusters(n_per_class={n_per_class}, n_classes={n_classes}, dim={dim}, seed={seed})"),
    )
}

/// Train and test sets drawn around shared class centers.
pub fn generate_cluster_split(
    n_train_per_class: usize,
    n_test_per_class: usize,
    n_classes: usize,
    dim: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    check_counts(&[n_train_per_class, n_test_per_class, n_classes, dim])?;
    let mut crng = derived_rng(seed, "cluster-centers", 0);
    let centers: Vec<Vec<f64>> = (0..n_classes).map(|_| center(dim, &mut crng)).collect();
    let make = |n: usize, label: &str| -> Result<Dataset> {
        let mut rng = derived_rng(seed, label, 0);
        let mut rows = Vec::with_capacity(n * n_classes * dim);
        let mut labels = Vec::with_capacity(n * n_classes);
        for (k, c) in centers.iter().enumerate() {
            fill_samples(&mut rows, c, n, &mut rng);
            labels.extend(std::iter::repeat_n(k, n));
        }
        let inputs = Array2::from_shape_vec((labels.len(), dim), rows).expect("shape matches");
        Dataset::new(
            inputs,
            labels,
            n_classes,
            format!("clusters-{label}(n_per_class={n}, n_classes={n_classes}, dim={dim}, seed={seed})"),
        )
    };
    Ok((make(n_train_per_class, "train")?, make(n_test_per_class, "test")?))
}

fn be_u32(bytes: &[u8], offset: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated {
            what,
            needed: offset + 4,
            found: bytes.len(),
        })
}

/// Parses an IDX image file: magic, count, rows, cols, then `u8` pixels.
/// Returns `(count, rows * cols, pixels / 255)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let magic = be_u32(bytes, 0, "image header")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4, "image header")? as usize;
    let rows = be_u32(bytes, 8, "image header")? as usize;
    let cols = be_u32(bytes, 12, "image header")? as usize;
    let pixels = rows * cols;
    let needed = 16 + count * pixels;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            what: "image payload",
            needed,
            found: bytes.len(),
        });
    }
    let data = bytes[16..needed].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok((count, pixels, data))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, "label header")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4, "label header")? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            what: "label payload",
            needed,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..needed].iter().map(|&b| b as usize).collect())
}

pub fn idx_from_bytes(images: &[u8], labels: &[u8], provenance: &str) -> Result<Dataset> {
    let (count, pixels, data) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    let n_classes = labels.iter().max().map_or(1, |m| m + 1).max(10);
    let inputs = Array2::from_shape_vec((count, pixels), data).expect("shape matches");
    Dataset::new(inputs, labels, n_classes, provenance)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let ip = images_path.as_ref();
    let lp = labels_path.as_ref();
    let images = std::fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let labels = std::fs::read(lp).map_err(|e| Error::io(lp, e))?;
    idx_from_bytes(&images, &labels, &format!("idx({}, {})", ip.display(), lp.display()))
}
