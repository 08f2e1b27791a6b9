use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{ColumnKind, Schema};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnData {
    /// `NaN` marks a missing cell.
    Numeric(Vec<f64>),
    /// `None` marks a missing cell.
    Categorical(Vec<Option<String>>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawColumn {
    pub name: String,
    pub data: ColumnData,
}

/// Malformed input rows, by 1-based data line number.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectReport {
    pub rows_read: usize,
    pub rejected: Vec<(usize, String)>,
}

impl RejectReport {
    pub fn fraction(&self) -> f64 {
        if self.rows_read == 0 {
            0.0
        } else {
            self.rejected.len() as f64 / self.rows_read as f64
        }
    }
}

/// Typed feature columns plus binary labels (1 = attack).
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub columns: Vec<RawColumn>,
    pub labels: Vec<u8>,
    pub rejects: RejectReport,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    /// Appends the rows of `other`, which must have the same columns.
    pub fn append(&mut self, other: RawTable) -> Result<()> {
        let same = self.columns.len() == other.columns.len()
            && self.columns.iter().zip(&other.columns).all(|(a, b)| {
                a.name == b.name
                    && matches!(
                        (&a.data, &b.data),
                        (ColumnData::Numeric(_), ColumnData::Numeric(_))
                            | (ColumnData::Categorical(_), ColumnData::Categorical(_))
                    )
            });
        if !same {
            return Err(Error::Schema("tables have different columns".into()));
        }
        for (a, b) in self.columns.iter_mut().zip(other.columns) {
            match (&mut a.data, b.data) {
                (ColumnData::Numeric(x), ColumnData::Numeric(y)) => x.extend(y),
                (ColumnData::Categorical(x), ColumnData::Categorical(y)) => x.extend(y),
                _ => unreachable!(),
            }
        }
        self.labels.extend(other.labels);
        let offset = self.rejects.rows_read;
        self.rejects.rows_read += other.rejects.rows_read;
        self.rejects.rejected.extend(
            other
                .rejects
                .rejected
                .into_iter()
                .map(|(line, why)| (line + offset, why)),
        );
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.columns {
            if c.data.len() != self.labels.len() {
                return Err(Error::Data(format!(
                    "column `{}` has {} rows, labels have {}",
                    c.name,
                    c.data.len(),
                    self.labels.len()
                )));
            }
        }
        Ok(())
    }
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, schema)
}

/// Parses CSV text with a header row. Rows with the wrong field count, an
/// unparsable numeric cell or a missing label go to the rejects report.
pub fn read_csv(reader: impl Read, schema: &Schema) -> Result<RawTable> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let expected: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    if header != expected {
        let diff = header
            .iter()
            .zip(&expected)
            .position(|(h, e)| h != e)
            .unwrap_or(header.len().min(expected.len()));
        return Err(Error::Schema(format!(
            "header does not match schema `{}` ({} columns vs {}; first difference at column {diff})",
            schema.name,
            header.len(),
            expected.len()
        )));
    }

    let feature_cols: Vec<usize> = (0..schema.columns.len())
        .filter(|&i| matches!(schema.columns[i].kind, ColumnKind::Numeric | ColumnKind::Categorical))
        .collect();
    let mut data: Vec<ColumnData> = feature_cols
        .iter()
        .map(|&i| match schema.columns[i].kind {
            ColumnKind::Numeric => ColumnData::Numeric(Vec::new()),
            _ => ColumnData::Categorical(Vec::new()),
        })
        .collect();
    let label_col = schema.label_index();
    let mut labels = Vec::new();
    let mut rejects = RejectReport::default();
    let mut numeric = vec![0.0; feature_cols.len()];

    for (line, record) in rdr.records().enumerate() {
        let line = line + 1;
        rejects.rows_read += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                rejects.rejected.push((line, e.to_string()));
                continue;
            }
        };
        if record.len() != schema.columns.len() {
            rejects.rejected.push((
                line,
                format!("{} fields, expected {}", record.len(), schema.columns.len()),
            ));
            continue;
        }
        let label = record[label_col].trim();
        if schema.is_missing(label) {
            rejects.rejected.push((line, "missing label".into()));
            continue;
        }
        let mut bad = None;
        for (k, &i) in feature_cols.iter().enumerate() {
            if schema.columns[i].kind != ColumnKind::Numeric {
                continue;
            }
            let cell = record[i].trim();
            numeric[k] = if schema.is_missing(cell) {
                f64::NAN
            } else {
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => v,
                    Ok(_) | Err(_) => {
                        bad = Some(format!(
                            "column `{}`: `{cell}` is not a finite number",
                            schema.columns[i].name
                        ));
                        break;
                    }
                }
            };
        }
        if let Some(reason) = bad {
            rejects.rejected.push((line, reason));
            continue;
        }
        for (k, &i) in feature_cols.iter().enumerate() {
            match &mut data[k] {
                ColumnData::Numeric(v) => v.push(numeric[k]),
                ColumnData::Categorical(v) => {
                    let cell = record[i].trim();
                    v.push((!schema.is_missing(cell)).then(|| cell.to_string()));
                }
            }
        }
        labels.push(u8::from(!schema.is_normal(label)));
    }

    if rejects.fraction() > schema.max_reject_fraction {
        return Err(Error::Data(format!(
            "{} of {} rows rejected ({:.4} > {}); first: line {} ({})",
            rejects.rejected.len(),
            rejects.rows_read,
            rejects.fraction(),
            schema.max_reject_fraction,
            rejects.rejected[0].0,
            rejects.rejected[0].1
        )));
    }
    if !rejects.rejected.is_empty() {
        log::warn!("{} malformed rows skipped", rejects.rejected.len());
    }
    let columns = feature_cols
        .iter()
        .zip(data)
        .map(|(&i, data)| RawColumn {
            name: schema.columns[i].name.clone(),
            data,
        })
        .collect();
    Ok(RawTable {
        columns,
        labels,
        rejects,
    })
}
