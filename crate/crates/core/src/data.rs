//! Datasets and the per-epoch mini-batch partition.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::scalar::Scalar;

/// Per-channel (R, G, B) statistics used to standardize CIFAR-10 pixels
/// after scaling to `[0, 1]`.
pub const CIFAR10_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR10_STD: [f64; 3] = [0.2470, 0.2435, 0.2616];
pub const CIFAR10_RECORD: usize = 3073;
const CIFAR10_PIXELS: usize = 3072;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T = f64> {
    /// Row-major `n_samples × dim`.
    features: Vec<T>,
    labels: Vec<usize>,
    dim: usize,
    n_classes: usize,
}

/// A materialized mini-batch together with the dataset row ids it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T = f64> {
    pub indices: Vec<usize>,
    pub features: Vec<T>,
    pub labels: Vec<usize>,
    pub dim: usize,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

impl<T: Scalar> Dataset<T> {
    pub fn new(features: Vec<T>, labels: Vec<usize>, dim: usize, n_classes: usize) -> Result<Self> {
        if dim == 0 || n_classes == 0 {
            return Err(Error::InvalidArgument(
                "dataset dim and n_classes must be positive".into(),
            ));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Structural(format!(
                "{} feature values for {} samples of dim {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite feature at sample {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Dataset {
            features,
            labels,
            dim,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn batch(&self, indices: &[usize]) -> Batch<T> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Batch {
            indices: indices.to_vec(),
            features,
            labels,
            dim: self.dim,
        }
    }

    /// The whole dataset, in storage order, as one batch.
    pub fn as_batch(&self) -> Batch<T> {
        Batch {
            indices: (0..self.len()).collect(),
            features: self.features.clone(),
            labels: self.labels.clone(),
            dim: self.dim,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Writes `label,feat_0,...` rows with a header line. Floats use the
    /// shortest representation that round-trips.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("label");
        for k in 0..self.dim {
            out.push_str(&format!(",feat_{k}"));
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&self.labels[i].to_string());
            for v in self.row(i) {
                out.push(',');
                out.push_str(&format!("{:?}", v.as_f64()));
            }
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Gaussian blobs: one unit-covariance cluster per class, with each class
/// mean placed in a uniformly random direction at radius `class_separation`.
pub fn gen_synthetic<T: Scalar>(
    n_classes: usize,
    n_per_class: usize,
    dim: usize,
    class_separation: f64,
    rng: &mut RngState,
) -> Result<Dataset<T>> {
    if n_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "n_classes must be >= 2, got {n_classes}"
        )));
    }
    if dim == 0 || n_per_class == 0 {
        return Err(Error::InvalidArgument("dim and n_per_class must be >= 1".into()));
    }
    if !(class_separation > 0.0 && class_separation.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "class_separation must be positive, got {class_separation}"
        )));
    }
    let mut means = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let dir: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        means.push(dir.into_iter().map(|v| v / norm * class_separation).collect::<Vec<_>>());
    }
    let n = n_classes * n_per_class;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            for &m in mean {
                features.push(T::lit(m + rng.standard_normal()));
            }
            labels.push(c);
        }
    }
    Dataset::new(features, labels, dim, n_classes)
}

/// Reads `label,feat_0,...,feat_{dim-1}` rows. A first row whose first field
/// is not numeric is treated as a header; `#` lines are comments. Labels are
/// re-indexed densely in ascending order of their original value; the second
/// return value maps new index to original label.
pub fn load_csv_with_labels<T: Scalar>(path: &Path) -> Result<(Dataset<T>, Vec<i64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut raw_labels: Vec<i64> = Vec::new();
    let mut features: Vec<T> = Vec::new();
    let mut dim: Option<usize> = None;
    let mut first = true;
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            row: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.is_empty() || (rec.len() == 1 && rec[0].is_empty()) {
            continue;
        }
        if first {
            first = false;
            if rec[0].parse::<f64>().is_err() {
                continue;
            }
        }
        if rec.len() < 2 {
            return Err(Error::Parse {
                row,
                msg: "expected a label and at least one feature".into(),
            });
        }
        let width = rec.len() - 1;
        match dim {
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(Error::Parse {
                    row,
                    msg: format!("ragged row: {width} features, expected {d}"),
                })
            }
            _ => {}
        }
        let label = parse_label(&rec[0]).ok_or_else(|| Error::Parse {
            row,
            msg: format!("label {:?} is not an integer", &rec[0]),
        })?;
        raw_labels.push(label);
        for (k, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("feature {k} {field:?} is not numeric"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    msg: format!("feature {k} is not finite"),
                });
            }
            features.push(T::lit(v));
        }
    }
    let dim = dim.ok_or_else(|| Error::Parse {
        row: 0,
        msg: "no data rows".into(),
    })?;

    let mut mapping: BTreeMap<i64, usize> = raw_labels.iter().map(|&l| (l, 0)).collect();
    for (i, v) in mapping.values_mut().enumerate() {
        *v = i;
    }
    let originals: Vec<i64> = mapping.keys().copied().collect();
    let identity = originals.iter().enumerate().all(|(i, &l)| l == i as i64);
    if !identity {
        info!(
            "{}: labels re-indexed {:?} -> 0..{}",
            path.display(),
            originals,
            originals.len()
        );
    }
    let labels = raw_labels.iter().map(|l| mapping[l]).collect();
    let ds = Dataset::new(features, labels, dim, originals.len())?;
    Ok((ds, originals))
}

fn parse_label(s: &str) -> Option<i64> {
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    // accept "3.0"
    let f: f64 = s.parse().ok()?;
    (f.fract() == 0.0 && f.abs() < 9.0e15).then_some(f as i64)
}

pub fn load_csv<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    load_csv_with_labels(path).map(|(d, _)| d)
}

/// Parses one CIFAR-10 binary batch: 3073-byte records of one label byte
/// followed by 1024 red, 1024 green and 1024 blue pixel bytes.
pub fn parse_cifar10_records<T: Scalar>(bytes: &[u8], features: &mut Vec<T>, labels: &mut Vec<usize>) -> Result<()> {
    if !bytes.len().is_multiple_of(CIFAR10_RECORD) {
        return Err(Error::Format(format!(
            "CIFAR-10 batch of {} bytes is not a multiple of {CIFAR10_RECORD}",
            bytes.len()
        )));
    }
    for (r, rec) in bytes.chunks_exact(CIFAR10_RECORD).enumerate() {
        let label = rec[0] as usize;
        if label > 9 {
            return Err(Error::Format(format!("record {r}: label byte {label} outside 0-9")));
        }
        labels.push(label);
        for (p, &px) in rec[1..].iter().enumerate() {
            let ch = p / 1024;
            let v = (f64::from(px) / 255.0 - CIFAR10_MEAN[ch]) / CIFAR10_STD[ch];
            features.push(T::lit(v));
        }
    }
    Ok(())
}

pub fn load_cifar10_file<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    parse_cifar10_records(&bytes, &mut features, &mut labels)?;
    Dataset::new(features, labels, CIFAR10_PIXELS, 10)
}

/// Loads every `data_batch_*.bin` in `directory` (sorted by name). Falls back
/// to `test_batch.bin` when no training batches are present.
pub fn load_cifar10_binary<T: Scalar>(directory: &Path) -> Result<Dataset<T>> {
    let entries = fs::read_dir(directory).map_err(|e| Error::io(directory, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("data_batch_") && n.ends_with(".bin"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        let test = directory.join("test_batch.bin");
        if test.exists() {
            files.push(test);
        } else {
            return Err(Error::Format(format!(
                "{}: no CIFAR-10 batch files (data_batch_*.bin) found",
                directory.display()
            )));
        }
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for f in &files {
        let bytes = fs::read(f).map_err(|e| Error::io(f, e))?;
        parse_cifar10_records(&bytes, &mut features, &mut labels)
            .map_err(|e| Error::Format(format!("{}: {e}", f.display())))?;
    }
    Dataset::new(features, labels, CIFAR10_PIXELS, 10)
}

/// Mini-batch partition of a dataset. Each epoch is a fresh permutation keyed
/// by `(seed, epoch)`; the trailing partial batch is dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl BatchPlan {
    pub fn new(n_samples: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if batch_size > n_samples {
            return Err(Error::InvalidArgument(format!(
                "batch_size {batch_size} exceeds dataset size {n_samples}"
            )));
        }
        Ok(BatchPlan {
            batch_size,
            batches_per_epoch: n_samples / batch_size,
            n_samples,
            seed,
        })
    }

    pub fn permutation(&self, epoch: usize) -> Vec<usize> {
        RngState::new(self.seed)
            .child_indexed("epoch-permutation", epoch as u64)
            .permutation(self.n_samples)
    }

    /// Row ids of each batch of `epoch`, in order.
    pub fn epoch_indices(&self, epoch: usize) -> Vec<Vec<usize>> {
        let perm = self.permutation(epoch);
        perm.chunks_exact(self.batch_size)
            .take(self.batches_per_epoch)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

pub fn epoch_batches<T: Scalar>(dataset: &Dataset<T>, plan: &BatchPlan, epoch: usize) -> Result<Vec<Batch<T>>> {
    if plan.n_samples != dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "batch plan built for {} samples, dataset has {}",
            plan.n_samples,
            dataset.len()
        )));
    }
    Ok(plan.epoch_indices(epoch).iter().map(|idx| dataset.batch(idx)).collect())
}
