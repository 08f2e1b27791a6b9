use serde::{Deserialize, Serialize};

use super::preprocess::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Per-column min-max scaling `(x − min) / (max − min)` on selected columns.
/// A column constant on the fitting rows is only shifted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub columns: Vec<usize>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    /// Statistics of `columns` over the given rows of `x`.
    pub fn fit(x: &Tensor<f64>, rows: &[usize], columns: &[usize]) -> Result<Self> {
        let (_, w) = x.dims2()?;
        if rows.is_empty() {
            return Err(Error::Data("cannot fit a scaler on zero rows".into()));
        }
        let mut min = vec![f64::INFINITY; columns.len()];
        let mut max = vec![f64::NEG_INFINITY; columns.len()];
        for &r in rows {
            for (k, &c) in columns.iter().enumerate() {
                let v = x.data()[r * w + c];
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        Ok(Self {
            columns: columns.to_vec(),
            min,
            max,
        })
    }

    pub fn transform(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let (_, w) = x.dims2()?;
        if let Some(&c) = self.columns.iter().find(|&&c| c >= w) {
            return Err(Error::Schema(format!("scaler column {c} outside width {w}")));
        }
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(w) {
            for (k, &c) in self.columns.iter().enumerate() {
                let range = self.max[k] - self.min[k];
                let range = if range > 0.0 { range } else { 1.0 };
                row[c] = (row[c] - self.min[k]) / range;
            }
        }
        Ok(out)
    }
}

/// Train split (normals only, unlabeled) and labeled test split, both scaled
/// with statistics of the training rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Tensor<f64>,
    pub test: Tensor<f64>,
    pub test_labels: Vec<u8>,
    /// Dataset row of every train / test sample.
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub scaler: MinMaxScaler,
}

/// Puts `round(train_fraction · normals)` randomly chosen normal rows in the
/// training split; the remaining normals and every attack form the test
/// split, in dataset order.
pub fn protocol_split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside (0, 1]")));
    }
    let mut normals: Vec<usize> = (0..ds.n_samples()).filter(|&i| ds.labels[i] == 0).collect();
    if normals.is_empty() {
        return Err(Error::Data("dataset has no normal samples".into()));
    }
    crate::augment::shuffle_in_place(&mut normals, &mut rng::stream(seed, "split"));
    let n_train = (train_fraction * normals.len() as f64).round() as usize;
    if n_train == 0 {
        return Err(Error::Data("training split would be empty".into()));
    }
    let mut train_rows = normals[..n_train].to_vec();
    train_rows.sort_unstable();
    let mut in_train = vec![false; ds.n_samples()];
    for &r in &train_rows {
        in_train[r] = true;
    }
    let test_rows: Vec<usize> = (0..ds.n_samples()).filter(|&i| !in_train[i]).collect();

    let scaler = MinMaxScaler::fit(&ds.features, &train_rows, &ds.layout.numeric)?;
    Ok(Split {
        train: scaler.transform(&ds.features.select_rows(&train_rows))?,
        test: scaler.transform(&ds.features.select_rows(&test_rows))?,
        test_labels: test_rows.iter().map(|&i| ds.labels[i]).collect(),
        train_rows,
        test_rows,
        scaler,
    })
}

/// Keeps `round(fraction · n)` randomly chosen rows of each class, in
/// dataset order.
pub fn subsample(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("subsample fraction {fraction} outside (0, 1]")));
    }
    let mut r = rng::stream(seed, "subsample");
    let mut keep = Vec::new();
    for class in [0u8, 1] {
        let mut rows: Vec<usize> = (0..ds.n_samples()).filter(|&i| ds.labels[i] == class).collect();
        crate::augment::shuffle_in_place(&mut rows, &mut r);
        let n = (fraction * rows.len() as f64).round() as usize;
        keep.extend_from_slice(&rows[..n]);
    }
    keep.sort_unstable();
    if keep.is_empty() {
        return Err(Error::Data("subsample is empty".into()));
    }
    Ok(Dataset {
        features: ds.features.select_rows(&keep),
        labels: keep.iter().map(|&i| ds.labels[i]).collect(),
        layout: ds.layout.clone(),
        names: ds.names.clone(),
        report: ds.report.clone(),
    })
}
