//! Datasets: synthetic Gaussian blobs, feature-file ingestion, splitting and
//! per-epoch batching.
//!
//! The harness works on feature vectors only. Image decoding and image
//! augmentation (flips, rotations, colour jitter, mean/std normalisation) are
//! out of scope; feed precomputed embeddings through [`load_features`]
//! instead.
//!
//! # Binary feature file
//!
//! ```text
//! offset  size       field
//! 0       4          magic "SALN" (0x53 0x41 0x4C 0x4E)
//! 4       1          version = 1
//! 5       1          has_labels (0 or 1)
//! 6       8          n, u64 little-endian
//! 14      8          d, u64 little-endian
//! 22      4*n*d      features, f32 little-endian, row-major
//! ..      4*n        labels, u32 little-endian (only if has_labels = 1)
//! ```
//!
//! CSV files carry a `feat_0,...,feat_{d-1}[,label]` header and one row per
//! sample.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::FeatureBatch;

pub const MAGIC: [u8; 4] = *b"SALN";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobParams {
    pub n: usize,
    pub d: usize,
    pub classes: usize,
    pub separation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Synthetic { seed: u64, params: BlobParams },
    File { path: String },
}

/// Feature rows with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    class_count: usize,
    provenance: Provenance,
}

impl Dataset {
    /// Validates finiteness, label count and label range. `class_count` is
    /// ignored (and reported as 0) when there are no labels.
    pub fn new(features: Array2<f64>, labels: Option<Vec<usize>>, class_count: usize, provenance: Provenance) -> Result<Self> {
        for ((row, col), v) in features.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFiniteInput { row, col });
            }
        }
        let class_count = match &labels {
            None => 0,
            Some(labels) => {
                if labels.len() != features.nrows() {
                    return Err(Error::LengthMismatch {
                        what: "labels",
                        got: labels.len(),
                        expected: features.nrows(),
                    });
                }
                if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
                    return Err(Error::LabelOutOfRange {
                        label,
                        classes: class_count,
                    });
                }
                class_count
            }
        };
        Ok(Self {
            features,
            labels,
            class_count,
            provenance,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| Error::Config("dataset has no labels".into()))
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            class_count: self.class_count,
            provenance: self.provenance.clone(),
        }
    }

    /// The whole dataset as a single batch.
    pub fn as_batch(&self, batch_id: u64) -> Result<FeatureBatch> {
        FeatureBatch::new(self.features.clone(), batch_id)
    }
}

/// Gaussian blobs with unit variance.
///
/// Class `k` is centred at `separation * (1 + k / d) * e_{k mod d}`, so with
/// `classes <= d` every mean sits on its own axis at distance `separation`
/// from the origin. Sample `i` belongs to class `i mod classes`. Values are
/// rounded to `f32` precision so that a dataset survives the binary feature
/// format bit for bit.
pub fn generate_blobs(params: BlobParams, seed: u64) -> Result<Dataset> {
    let BlobParams { n, d, classes, separation } = params;
    if classes < 2 || n < classes || d == 0 || !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "blobs need n >= classes >= 2, d >= 1 and separation > 0 (got n={n}, d={d}, classes={classes}, separation={separation})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut features = Array2::<f64>::zeros((n, d));
    for (i, mut row) in features.axis_iter_mut(Axis(0)).enumerate() {
        let k = labels[i];
        for (j, v) in row.iter_mut().enumerate() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let centre = if j == k % d {
                separation * (1 + k / d) as f64
            } else {
                0.0
            };
            *v = f64::from((centre + noise) as f32);
        }
    }
    Dataset::new(
        features,
        Some(labels),
        classes,
        Provenance::Synthetic { seed, params },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFormat {
    Binary,
    Csv,
}

impl FeatureFormat {
    /// `.csv` files are CSV, everything else is the binary format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FeatureFormat::Csv,
            _ => FeatureFormat::Binary,
        }
    }
}

pub fn encode_binary(ds: &Dataset) -> Vec<u8> {
    let (n, d) = ds.features.dim();
    let label_bytes = if ds.labels.is_some() { 4 * n } else { 0 };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * d + label_bytes);
    out.extend_from_slice(&MAGIC);
    out.push(FORMAT_VERSION);
    out.push(u8::from(ds.labels.is_some()));
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    for v in ds.features.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    if let Some(labels) = &ds.labels {
        for &l in labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
    }
    out
}

pub fn decode_binary(bytes: &[u8], provenance: Provenance) -> Result<Dataset> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {}", bytes[4])));
    }
    let has_labels = match bytes[5] {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("invalid has_labels flag {other}"))),
    };
    let read_u64 = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"));
    let (n, d) = (read_u64(6), read_u64(14));
    if n == 0 || d == 0 {
        return Err(Error::Format(format!("empty shape {n}x{d}")));
    }
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|b| b.checked_add(if has_labels { n.checked_mul(4)? } else { 0 }))
        .and_then(|b| b.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| Error::Format(format!("shape {n}x{d} overflows")))?;
    if bytes.len() as u64 != expected {
        return Err(Error::Format(format!(
            "file is {} bytes, header declares {expected}",
            bytes.len()
        )));
    }
    let (n, d) = (n as usize, d as usize);

    let body = &bytes[HEADER_LEN..];
    let values: Vec<f64> = body[..4 * n * d]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4-byte chunk"))))
        .collect();
    let features = Array2::from_shape_vec((n, d), values).map_err(|e| Error::Format(e.to_string()))?;

    let labels = has_labels.then(|| {
        body[4 * n * d..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")) as usize)
            .collect::<Vec<_>>()
    });
    let class_count = labels
        .as_ref()
        .map_or(0, |l| l.iter().max().map_or(0, |m| m + 1));
    Dataset::new(features, labels, class_count, provenance)
}

fn csv_header(d: usize, has_labels: bool) -> Vec<String> {
    let mut header: Vec<String> = (0..d).map(|j| format!("feat_{j}")).collect();
    if has_labels {
        header.push("label".into());
    }
    header
}

pub fn encode_csv(ds: &Dataset) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(csv_header(ds.dim(), ds.labels.is_some()))?;
    for (i, row) in ds.features.axis_iter(Axis(0)).enumerate() {
        let mut record: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some(labels) = &ds.labels {
            record.push(labels[i].to_string());
        }
        writer.write_record(&record)?;
    }
    writer.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn decode_csv(bytes: &[u8], provenance: Provenance) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = reader.headers()?.clone();
    let has_labels = header.iter().next_back() == Some("label");
    let d = header.len() - usize::from(has_labels);
    if d == 0 {
        return Err(Error::Format("CSV has no feature columns".into()));
    }
    for (j, name) in header.iter().take(d).enumerate() {
        if name != format!("feat_{j}") {
            return Err(Error::Format(format!("column {j} is '{name}', expected 'feat_{j}'")));
        }
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::Format(format!(
                "row {row} has {} fields, expected {}",
                record.len(),
                header.len()
            )));
        }
        for (col, field) in record.iter().take(d).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("row {row}, column {col}: '{field}' is not a number")))?;
            if !v.is_finite() {
                return Err(Error::NonFiniteInput { row, col });
            }
            values.push(v);
        }
        if has_labels {
            let field = &record[d];
            let label: usize = field
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("row {row}: label '{field}' is not a class index")))?;
            labels.push(label);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Format("CSV has no data rows".into()));
    }
    let features = Array2::from_shape_vec((n, d), values).map_err(|e| Error::Format(e.to_string()))?;
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, has_labels.then_some(labels), class_count, provenance)
}

/// Reads a feature file; either a fully valid dataset or an error.
pub fn load_features(path: &Path, format: FeatureFormat) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let provenance = Provenance::File {
        path: path.display().to_string(),
    };
    match format {
        FeatureFormat::Binary => decode_binary(&bytes, provenance),
        FeatureFormat::Csv => decode_csv(&bytes, provenance),
    }
}

pub fn write_features(ds: &Dataset, path: &Path, format: FeatureFormat) -> Result<()> {
    let bytes = match format {
        FeatureFormat::Binary => encode_binary(ds),
        FeatureFormat::Csv => encode_csv(ds)?,
    };
    fs::write(path, bytes)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub shuffle_seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            val_fraction: 0.15,
            test_fraction: 0.15,
            shuffle_seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fractions = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fractions.iter().any(|f| f.is_nan() || *f < 0.0) {
            return Err(Error::InvalidParams(format!("split fractions must be non-negative: {fractions:?}")));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParams(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes: val and test are floored, train takes the
    /// remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let floor = |f: f64| ((n as f64 * f + 1e-9).floor() as usize).min(n);
        let val = floor(self.val_fraction);
        let test = floor(self.test_fraction).min(n - val);
        (n - val - test, val, test)
    }
}

/// Seeded permutation of `0..n` cut into contiguous train/val/test pieces.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    if n < 3 {
        return Err(Error::InvalidParams(format!("cannot split {n} samples three ways")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.shuffle_seed));
    let (train, val, _) = spec.sizes(n);
    let test = order.split_off(train + val);
    let val = order.split_off(train);
    Ok((order, val, test))
}

pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let (train, val, test) = split_indices(ds.len(), spec)?;
    Ok((ds.subset(&train), ds.subset(&val), ds.subset(&test)))
}

/// One training batch with labels and dataset-global sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: FeatureBatch,
    /// Empty when the dataset is unlabelled.
    pub labels: Vec<usize>,
    pub ids: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Sizes of consecutive batches: full batches, then the remainder, which is
/// folded into the previous batch when it would hold a single sample.
pub fn batch_sizes(n: usize, batch_size: usize) -> Vec<usize> {
    let mut sizes = vec![batch_size; n / batch_size];
    match n % batch_size {
        0 => {}
        1 if !sizes.is_empty() => *sizes.last_mut().expect("non-empty") += 1,
        r => sizes.push(r),
    }
    sizes
}

/// Order of the dataset for one epoch, keyed by `(shuffle_seed, epoch)`.
pub fn epoch_order(n: usize, shuffle_seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Shuffled batches for one epoch. Every sample appears exactly once and no
/// batch is smaller than 2.
pub fn batches(ds: &Dataset, batch_size: usize, shuffle_seed: u64, epoch: u64) -> Result<Vec<Batch>> {
    if batch_size < 2 {
        return Err(Error::InvalidParams(format!("batch_size {batch_size} is below the minimum of 2")));
    }
    if ds.len() < 2 {
        return Err(Error::InvalidParams(format!("cannot batch {} samples", ds.len())));
    }
    let order = epoch_order(ds.len(), shuffle_seed, epoch);
    let mut out = Vec::new();
    let mut start = 0;
    for (batch_id, size) in batch_sizes(ds.len(), batch_size).into_iter().enumerate() {
        let ids = order[start..start + size].to_vec();
        start += size;
        let features = FeatureBatch::new(ds.features.select(Axis(0), &ids), batch_id as u64)?;
        let labels = ds
            .labels
            .as_ref()
            .map_or_else(Vec::new, |l| ids.iter().map(|&i| l[i]).collect());
        out.push(Batch { features, labels, ids });
    }
    Ok(out)
}
