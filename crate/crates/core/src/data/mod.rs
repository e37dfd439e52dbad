//! Datasets: synthetic generators, IDX and CSV ingestion, splitting, normalization.

pub mod idx;
pub mod synthetic;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::rng;
use crate::tensor::Tensor;

const SPLIT_STREAM: u64 = 2;

/// Samples stacked along the first axis with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if inputs.shape().len() < 2 || inputs.rows() != labels.len() {
            return Err(Error::input(format!(
                "inputs {:?} do not match {} labels",
                inputs.shape(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::input(format!("label {bad} outside [0, {n_classes})")));
        }
        Ok(Self {
            inputs,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample input shape.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        (self.inputs.select_rows(idx), idx.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let (inputs, labels) = self.batch(idx);
        Dataset {
            inputs,
            labels,
            n_classes: self.n_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub eval: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    /// Zero mean, unit variance per input element, fitted on the train split.
    Standardize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Blobs {
        n_samples: usize,
        #[serde(default = "two")]
        n_classes: usize,
        #[serde(default = "two")]
        n_features: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    TwoSpirals {
        n_samples: usize,
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Csv {
        path: PathBuf,
        label_column: String,
    },
}

fn two() -> usize {
    2
}

fn default_spread() -> f64 {
    4.0
}

fn default_noise() -> f64 {
    0.5
}

fn default_train_fraction() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: DataSource,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config(
                "data.train_fraction",
                format!("must lie in (0, 1), got {}", self.train_fraction),
            ));
        }
        match &self.source {
            DataSource::Blobs { n_samples, n_classes, n_features, noise, .. } => {
                if *n_samples < 2 || *n_classes < 2 || *n_features < 2 || !(*noise >= 0.0) {
                    return Err(Error::config("data.source", "blobs need n_samples >= 2, n_classes >= 2, n_features >= 2, noise >= 0"));
                }
            }
            DataSource::TwoSpirals { n_samples, noise, .. }
                if (*n_samples < 2 || !(*noise >= 0.0)) => {
                    return Err(Error::config("data.source", "two_spirals need n_samples >= 2 and noise >= 0"));
                }
            _ => {}
        }
        Ok(())
    }

    /// Load the source (relative paths resolved against `base`), split and normalize.
    pub fn load(&self, base: Option<&Path>) -> Result<Split> {
        self.validate()?;
        let resolve = |p: &PathBuf| match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.clone(),
        };
        let full = match &self.source {
            DataSource::Blobs {
                n_samples,
                n_classes,
                n_features,
                spread,
                noise,
                seed,
            } => synthetic::blobs(*n_samples, *n_classes, *n_features, *spread, *noise, *seed)?,
            DataSource::TwoSpirals { n_samples, noise, seed } => synthetic::two_spirals(*n_samples, *noise, *seed)?,
            DataSource::Idx { images, labels } => load_idx(&resolve(images), &resolve(labels))?,
            DataSource::Csv { path, label_column } => load_csv(&resolve(path), label_column)?,
        };
        let mut split = split(&full, self.train_fraction, self.split_seed)?;
        if self.normalization == Normalization::Standardize {
            standardize(&mut split);
        }
        Ok(split)
    }
}

/// Shuffle indices with `seed` and cut at `round(fraction * n)`; both sides must be nonempty.
pub fn split(data: &Dataset, fraction: f64, seed: u64) -> Result<Split> {
    let n = data.len();
    let n_train = (fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::input(format!(
            "train fraction {fraction} of {n} samples leaves an empty split"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, SPLIT_STREAM));
    let (train, eval) = idx.split_at(n_train);
    Ok(Split {
        train: data.subset(train),
        eval: data.subset(eval),
    })
}

/// Per-element standardization with statistics from the train split only.
pub fn standardize(split: &mut Split) {
    let width = split.train.inputs.row_len();
    let rows = split.train.len() as f64;
    let mut mean = vec![0.0; width];
    let mut var = vec![0.0; width];
    for r in 0..split.train.len() {
        for (m, &x) in mean.iter_mut().zip(split.train.inputs.row(r)) {
            *m += x / rows;
        }
    }
    for r in 0..split.train.len() {
        for ((v, &m), &x) in var.iter_mut().zip(&mean).zip(split.train.inputs.row(r)) {
            *v += (x - m).powi(2) / rows;
        }
    }
    let std: Vec<f64> = var.iter().map(|v| if *v > 0.0 { v.sqrt() } else { 1.0 }).collect();
    for d in [&mut split.train, &mut split.eval] {
        for row in d.inputs.data_mut().chunks_mut(width) {
            for ((x, m), s) in row.iter_mut().zip(&mean).zip(&std) {
                *x = (*x - m) / s;
            }
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Pair an IDX image file with an IDX label file.
///
/// Images become `(N, 1, H, W)` (or `(N, C, H, W)` for 4-d files) scaled to [0, 1].
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = idx::parse_idx(&read(images)?)?;
    let lab = idx::parse_idx(&read(labels)?)?;
    if lab.dims.len() != 1 {
        return Err(Error::input(format!("label file must be 1-d, got dims {:?}", lab.dims)));
    }
    let n = img.dims[0];
    if lab.dims[0] != n {
        return Err(Error::input(format!("{n} images but {} labels", lab.dims[0])));
    }
    let shape = match img.dims.len() {
        3 => vec![n, 1, img.dims[1], img.dims[2]],
        2 | 4 => img.dims.clone(),
        _ => return Err(Error::input(format!("unsupported image dims {:?}", img.dims))),
    };
    let x = Tensor::new(shape, img.data.iter().map(|&b| b as f64 / 255.0).collect())?;
    let y: Vec<usize> = lab.data.iter().map(|&b| b as usize).collect();
    let n_classes = y.iter().max().map_or(0, |m| m + 1);
    Dataset::new(x, y, n_classes)
}

/// Numeric CSV with a header row; `label_column` holds non-negative integer classes.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::input(format!("{}: {other:?}", path.display())),
    })?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::input(format!("no column named {label_column:?} in {}", path.display())))?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::input(format!("row {}, column {col}: {field:?} is not a number", row + 1))
            })?;
            if col == label_idx {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::input(format!("row {}: label {v} is not a class index", row + 1)));
                }
                y.push(v as usize);
            } else {
                x.push(v);
            }
        }
    }
    let n = y.len();
    let width = headers.len() - 1;
    if n == 0 || width == 0 {
        return Err(Error::input(format!("{} has no samples or no features", path.display())));
    }
    let n_classes = y.iter().max().unwrap() + 1;
    Dataset::new(Tensor::new(vec![n, width], x)?, y, n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let d = synthetic::blobs(101, 3, 2, 4.0, 0.5, 1).unwrap();
        let s = split(&d, 0.7, 5).unwrap();
        assert_eq!(s.train.len(), 71);
        assert_eq!(s.train.len() + s.eval.len(), 101);
        let mut rows: Vec<Vec<u64>> = (0..s.train.len())
            .map(|i| s.train.inputs.row(i).iter().map(|v| v.to_bits()).collect())
            .chain((0..s.eval.len()).map(|i| s.eval.inputs.row(i).iter().map(|v| v.to_bits()).collect()))
            .collect();
        rows.sort();
        rows.dedup();
        assert_eq!(rows.len(), 101);
    }

    #[test]
    fn standardized_train_has_zero_mean() {
        let spec = DatasetSpec {
            source: DataSource::TwoSpirals {
                n_samples: 200,
                noise: 0.1,
                seed: 0,
            },
            normalization: Normalization::Standardize,
            train_fraction: 0.5,
            split_seed: 0,
        };
        let s = spec.load(None).unwrap();
        for f in 0..2 {
            let m: f64 = (0..s.train.len()).map(|i| s.train.inputs.row(i)[f]).sum::<f64>() / 100.0;
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_label_rejected() {
        assert!(Dataset::new(Tensor::zeros(&[2, 1]), vec![0, 2], 2).is_err());
    }

    #[test]
    fn csv_loader() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "a,label,b\n1.0,0,2\n3,1,4\n").unwrap();
        let d = load_csv(&p, "label").unwrap();
        assert_eq!(d.inputs.data(), &[1., 2., 3., 4.]);
        assert_eq!(d.labels, vec![0, 1]);
        assert!(load_csv(&p, "missing").is_err());
    }
}
