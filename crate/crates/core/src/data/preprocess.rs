use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::table::{ColumnData, RawColumn, RawTable, RejectReport};
use crate::error::{Error, Result};
use crate::features::{CategoricalGroup, FeatureLayout};
use crate::tensor::Tensor;

/// What cleaning removed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub rows_in: usize,
    pub missing_rows: usize,
    pub duplicate_rows: usize,
    pub duplicate_columns: Vec<String>,
    pub constant_columns: Vec<String>,
}

/// Cleaned, one-hot encoded features with binary labels (1 = attack).
///
/// Numeric columns come first in source order, followed by one block per
/// categorical column. Values are not yet scaled; see
/// [`protocol_split`](super::protocol_split).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Tensor<f64>,
    pub labels: Vec<u8>,
    pub layout: FeatureLayout,
    pub names: Vec<String>,
    pub report: PreprocessReport,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.layout.width
    }

    pub fn attack_ratio(&self) -> f64 {
        self.labels.iter().filter(|&&l| l == 1).count() as f64 / self.labels.len().max(1) as f64
    }
}

/// Drops rows with missing cells, duplicate columns, duplicate rows, then
/// one-hot encodes categoricals (categories sorted) and drops constant
/// columns.
pub fn preprocess(raw: &RawTable) -> Result<Dataset> {
    raw.validate()?;
    let n = raw.n_rows();
    let mut report = PreprocessReport {
        rows_in: n,
        ..Default::default()
    };

    let complete: Vec<usize> = (0..n)
        .filter(|&r| {
            raw.columns.iter().all(|c| match &c.data {
                ColumnData::Numeric(v) => !v[r].is_nan(),
                ColumnData::Categorical(v) => v[r].is_some(),
            })
        })
        .collect();
    report.missing_rows = n - complete.len();

    // Categorical cells become per-column integer codes so that rows and
    // columns can be compared by value.
    let mut numeric: Vec<(&RawColumn, Vec<f64>)> = Vec::new();
    let mut categorical: Vec<(&RawColumn, Vec<String>, Vec<u32>)> = Vec::new();
    for c in &raw.columns {
        match &c.data {
            ColumnData::Numeric(v) => numeric.push((c, complete.iter().map(|&r| v[r]).collect())),
            ColumnData::Categorical(v) => {
                let values: BTreeSet<&str> = complete.iter().map(|&r| v[r].as_deref().unwrap()).collect();
                let values: Vec<String> = values.into_iter().map(str::to_string).collect();
                let index: HashMap<&str, u32> =
                    values.iter().enumerate().map(|(i, s)| (s.as_str(), i as u32)).collect();
                let codes = complete.iter().map(|&r| index[v[r].as_deref().unwrap()]).collect();
                categorical.push((c, values, codes));
            }
        }
    }

    let mut seen_num: HashSet<Vec<u64>> = HashSet::new();
    numeric.retain(|(c, v)| {
        let key: Vec<u64> = v.iter().map(|x| canonical_bits(*x)).collect();
        let fresh = seen_num.insert(key);
        if !fresh {
            report.duplicate_columns.push(c.name.clone());
        }
        fresh
    });
    let mut seen_cat: HashSet<Vec<String>> = HashSet::new();
    categorical.retain(|(c, values, codes)| {
        let key: Vec<String> = codes.iter().map(|&k| values[k as usize].clone()).collect();
        let fresh = seen_cat.insert(key);
        if !fresh {
            report.duplicate_columns.push(c.name.clone());
        }
        fresh
    });

    let mut seen_rows: HashSet<Vec<u64>> = HashSet::new();
    let keep: Vec<usize> = (0..complete.len())
        .filter(|&i| {
            let mut key: Vec<u64> = numeric.iter().map(|(_, v)| canonical_bits(v[i])).collect();
            key.extend(categorical.iter().map(|(_, _, c)| c[i] as u64));
            key.push(raw.labels[complete[i]] as u64);
            seen_rows.insert(key)
        })
        .collect();
    report.duplicate_rows = complete.len() - keep.len();
    if keep.is_empty() {
        return Err(Error::Data("no rows remain after cleaning".into()));
    }

    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (c, v) in &numeric {
        let vals: Vec<f64> = keep.iter().map(|&i| v[i]).collect();
        if is_constant(&vals) {
            log::warn!("dropping constant feature `{}`", c.name);
            report.constant_columns.push(c.name.clone());
            continue;
        }
        names.push(c.name.clone());
        cols.push(vals);
    }
    let n_numeric = cols.len();
    let mut groups = Vec::new();
    for (c, values, codes) in &categorical {
        let used: BTreeSet<u32> = keep.iter().map(|&i| codes[i]).collect();
        if used.len() < 2 {
            log::warn!("dropping constant feature `{}`", c.name);
            report.constant_columns.push(c.name.clone());
            continue;
        }
        // Categories that only occurred in dropped rows get no column.
        let used: Vec<u32> = used.into_iter().collect();
        groups.push(CategoricalGroup {
            name: c.name.clone(),
            start: cols.len(),
            categories: used.iter().map(|&k| values[k as usize].clone()).collect(),
        });
        for &k in &used {
            names.push(format!("{}={}", c.name, values[k as usize]));
            cols.push(keep.iter().map(|&i| if codes[i] == k { 1.0 } else { 0.0 }).collect());
        }
    }

    let width = cols.len();
    if width == 0 {
        return Err(Error::Data("no informative features remain after cleaning".into()));
    }
    let rows = keep.len();
    let mut data = vec![0.0; rows * width];
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            data[i * width + j] = v;
        }
    }
    let layout = FeatureLayout {
        width,
        numeric: (0..n_numeric).collect(),
        groups,
    };
    layout.validate()?;
    Ok(Dataset {
        features: Tensor::new(vec![rows, width], data)?,
        labels: keep.iter().map(|&i| raw.labels[complete[i]]).collect(),
        layout,
        names,
        report,
    })
}

fn canonical_bits(x: f64) -> u64 {
    // -0.0 and 0.0 compare equal.
    if x == 0.0 {
        0
    } else {
        x.to_bits()
    }
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// Inverse of the one-hot encoding: numeric columns stay numeric and each
/// categorical block becomes one column of category names.
pub fn to_raw(ds: &Dataset) -> Result<RawTable> {
    let (n, w) = ds.features.dims2()?;
    let x = ds.features.data();
    let mut columns = Vec::new();
    for &j in &ds.layout.numeric {
        columns.push(RawColumn {
            name: ds.names[j].clone(),
            data: ColumnData::Numeric((0..n).map(|i| x[i * w + j]).collect()),
        });
    }
    for g in &ds.layout.groups {
        let mut values = Vec::with_capacity(n);
        for i in 0..n {
            let hot: Vec<usize> = g.columns().filter(|&j| x[i * w + j] == 1.0).collect();
            if hot.len() != 1 {
                return Err(Error::Data(format!("row {i} is not one-hot in group `{}`", g.name)));
            }
            values.push(Some(g.categories[hot[0] - g.start].clone()));
        }
        columns.push(RawColumn {
            name: g.name.clone(),
            data: ColumnData::Categorical(values),
        });
    }
    Ok(RawTable {
        columns,
        labels: ds.labels.clone(),
        rejects: RejectReport {
            rows_read: n,
            rejected: Vec::new(),
        },
    })
}
