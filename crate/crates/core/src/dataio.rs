//! Datasets: seeded synthetic blobs, the CIFAR-10 binary record format,
//! standardisation, splitting and shuffled mini-batches.
//!
//! All randomness comes from ChaCha8 streams seeded with a `u64`, so every
//! generator and iterator here is reproducible across platforms.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::micronet::{Batch, Labels};
use crate::report::fmt_sig;
use crate::scalar::Scalar;

pub const CIFAR10_PIXELS: usize = 3072;
pub const CIFAR10_RECORD: usize = CIFAR10_PIXELS + 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("truncated file: incomplete record at byte offset {offset} ({len} bytes total)")]
    Truncated { offset: usize, len: usize },
    #[error("corrupt label {label} at byte offset {offset}")]
    CorruptLabel { offset: usize, label: u8 },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("split leaves an empty partition (n={n}, test={test})")]
    EmptySplit { n: usize, test: usize },
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub features: Matrix<T>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub name: String,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(features: Matrix<T>, labels: Vec<usize>, classes: usize, name: impl Into<String>) -> Result<Self> {
        let ds = Self {
            features,
            labels,
            classes,
            name: name.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(DataError::Invalid("dataset is empty".into()));
        }
        if self.labels.len() != self.features.rows() {
            return Err(DataError::Invalid(format!(
                "{} labels for {} rows",
                self.labels.len(),
                self.features.rows()
            )));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(DataError::Invalid(format!("label {l} >= {} classes", self.classes)));
        }
        if self.features.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("non-finite feature".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows `indices`, in that order.
    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> Self {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
        }
        Self {
            features: Matrix::from_vec(indices.len(), d, data),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            name: name.into(),
        }
    }

    /// The whole dataset as one batch.
    pub fn full_batch(&self) -> Batch<T> {
        Batch {
            inputs: self.features.clone(),
            labels: Labels::Sparse(self.labels.clone()),
        }
    }

    /// CSV with header `label,f0,f1,...`.
    pub fn write_csv<W: Write + ?Sized>(&self, out: &mut W) -> io::Result<()> {
        write!(out, "label")?;
        for j in 0..self.dim() {
            write!(out, ",f{j}")?;
        }
        writeln!(out)?;
        for (r, label) in self.labels.iter().enumerate() {
            write!(out, "{label}")?;
            for v in self.features.row(r) {
                write!(out, ",{}", fmt_sig(v.to_f64_lossy(), 10))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub center_separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.per_class < 1 || self.dim < 1 {
            return Err(DataError::Invalid(
                "blobs need >= 2 classes, >= 1 point per class and dim >= 1".into(),
            ));
        }
        if !(self.center_separation > 0.0 && self.center_separation.is_finite()) {
            return Err(DataError::Invalid("center separation must be > 0".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(DataError::Invalid("noise sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// Class centres, pairwise `center_separation` apart where the dimension
    /// allows it.
    ///
    /// With `classes <= dim` the centres are the vertices of a regular simplex
    /// `(sep / sqrt 2) (e_k - 1/C)`. Otherwise they sit evenly on a circle in
    /// the first two coordinates with neighbouring chord `sep` (or on a line
    /// when `dim == 1`).
    pub fn centers(&self) -> Vec<Vec<f64>> {
        let (c, d, sep) = (self.classes, self.dim, self.center_separation);
        (0..c)
            .map(|k| {
                let mut center = vec![0.0; d];
                if c <= d {
                    let scale = sep / std::f64::consts::SQRT_2;
                    for (j, v) in center.iter_mut().enumerate().take(c) {
                        let e = if j == k { 1.0 } else { 0.0 };
                        *v = scale * (e - 1.0 / c as f64);
                    }
                } else if d >= 2 {
                    let radius = sep / (2.0 * (std::f64::consts::PI / c as f64).sin());
                    let angle = 2.0 * std::f64::consts::PI * k as f64 / c as f64;
                    center[0] = radius * angle.cos();
                    center[1] = radius * angle.sin();
                } else {
                    center[0] = sep * (k as f64 - (c - 1) as f64 / 2.0);
                }
                center
            })
            .collect()
    }
}

/// Isotropic Gaussian blobs around [`BlobSpec::centers`], rows grouped by class.
pub fn gen_blobs<T: Scalar>(spec: &BlobSpec) -> Result<Dataset<T>> {
    spec.validate()?;
    let centers = spec.centers();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.classes * spec.per_class;
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for (k, center) in centers.iter().enumerate() {
        for _ in 0..spec.per_class {
            for &c in center {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(T::lit(c + spec.noise_sigma * z));
            }
            labels.push(k);
        }
    }
    Dataset::new(Matrix::from_vec(n, spec.dim, data), labels, spec.classes, "blobs")
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Seeded train/test split with `|test| = round(n * test_fraction)`.
pub fn split<T: Scalar>(data: &Dataset<T>, test_fraction: f64, seed: u64) -> Result<(Dataset<T>, Dataset<T>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::Invalid(format!(
            "test fraction {test_fraction} not in (0, 1)"
        )));
    }
    let n = data.len();
    let test = (n as f64 * test_fraction).round() as usize;
    if test == 0 || test >= n {
        return Err(DataError::EmptySplit { n, test });
    }
    let perm = permutation(n, seed);
    let (test_idx, train_idx) = perm.split_at(test);
    Ok((
        data.select(train_idx, format!("{}-train", data.name)),
        data.select(test_idx, format!("{}-test", data.name)),
    ))
}

/// Per-feature `(mean, std)` pairs.
pub type FeatureStats<T> = Vec<(T, T)>;

/// Standardises every feature to mean 0 and population std 1. Features with
/// std below `1e-12` are only centred. Returns the per-feature `(mean, std)`.
pub fn normalize<T: Scalar>(data: &Dataset<T>) -> Result<(Dataset<T>, FeatureStats<T>)> {
    let n = data.len();
    if n < 2 {
        return Err(DataError::Invalid("normalisation needs at least 2 rows".into()));
    }
    let d = data.dim();
    let nt = T::from_count(n);
    let mut stats = Vec::with_capacity(d);
    let mut out = data.features.clone();
    for j in 0..d {
        let mean = (0..n).map(|r| data.features[(r, j)]).sum::<T>() / nt;
        let var = (0..n)
            .map(|r| {
                let c = data.features[(r, j)] - mean;
                c * c
            })
            .sum::<T>()
            / nt;
        let std = var.sqrt();
        let scale = if std < T::lit(1e-12) { T::one() } else { std };
        for r in 0..n {
            out[(r, j)] = (data.features[(r, j)] - mean) / scale;
        }
        stats.push((mean, std));
    }
    let normalized = Dataset {
        features: out,
        labels: data.labels.clone(),
        classes: data.classes,
        name: data.name.clone(),
    };
    Ok((normalized, stats))
}

/// Shuffled mini-batches over a dataset; the last batch may be short.
pub struct BatchIter<'a, T> {
    data: &'a Dataset<T>,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<T: Scalar> Iterator for BatchIter<'_, T> {
    type Item = Batch<T>;

    fn next(&mut self) -> Option<Batch<T>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let sub = self.data.select(idx, "");
        Some(Batch {
            inputs: sub.features,
            labels: Labels::Sparse(sub.labels),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl<T: Scalar> ExactSizeIterator for BatchIter<'_, T> {}

pub fn batch_iter<T: Scalar>(data: &Dataset<T>, batch_size: usize, epoch_seed: u64) -> Result<BatchIter<'_, T>> {
    if batch_size < 1 || batch_size > data.len() {
        return Err(DataError::Invalid(format!(
            "batch size {batch_size} not in [1, {}]",
            data.len()
        )));
    }
    Ok(BatchIter {
        data,
        order: permutation(data.len(), epoch_seed),
        batch_size,
        pos: 0,
    })
}

/// One CIFAR-10 image: label byte plus 32x32 pixels as R, G, B planes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cifar10Record {
    pub label: u8,
    pub pixels: Box<[u8; CIFAR10_PIXELS]>,
}

/// Parses the CIFAR-10 binary format (3073-byte records).
pub fn parse_cifar10(bytes: &[u8]) -> Result<Vec<Cifar10Record>> {
    if !bytes.len().is_multiple_of(CIFAR10_RECORD) {
        return Err(DataError::Truncated {
            offset: bytes.len() / CIFAR10_RECORD * CIFAR10_RECORD,
            len: bytes.len(),
        });
    }
    bytes
        .chunks_exact(CIFAR10_RECORD)
        .enumerate()
        .map(|(i, chunk)| {
            let label = chunk[0];
            if label > 9 {
                return Err(DataError::CorruptLabel {
                    offset: i * CIFAR10_RECORD,
                    label,
                });
            }
            let pixels: Box<[u8; CIFAR10_PIXELS]> = Box::new(chunk[1..].try_into().expect("record size"));
            Ok(Cifar10Record { label, pixels })
        })
        .collect()
}

pub fn serialize_cifar10(records: &[Cifar10Record]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * CIFAR10_RECORD);
    for r in records {
        out.push(r.label);
        out.extend_from_slice(&r.pixels[..]);
    }
    out
}

/// Pixels scaled to `[0, 1]`, ten classes.
pub fn cifar_to_dataset<T: Scalar>(records: &[Cifar10Record], name: impl Into<String>) -> Result<Dataset<T>> {
    let mut data = Vec::with_capacity(records.len() * CIFAR10_PIXELS);
    let scale = T::lit(255.0);
    for r in records {
        data.extend(r.pixels.iter().map(|&p| T::from_u8(p).expect("byte") / scale));
    }
    Dataset::new(
        Matrix::from_vec(records.len(), CIFAR10_PIXELS, data),
        records.iter().map(|r| r.label as usize).collect(),
        10,
        name,
    )
}
