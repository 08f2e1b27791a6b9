use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Label,
    /// Present in the file but ignored (identifiers, attack sub-types).
    Drop,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Column roles of a CSV file, in header order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    /// Label values meaning benign traffic; every other value is an attack.
    pub normal_labels: Vec<String>,
    /// Cell values read as missing.
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
    /// Largest tolerated fraction of malformed rows.
    #[serde(default = "default_reject")]
    pub max_reject_fraction: f64,
    pub columns: Vec<ColumnSpec>,
}

fn default_missing() -> Vec<String> {
    ["", "NA", "NaN", "nan", "null"].iter().map(|s| s.to_string()).collect()
}

fn default_reject() -> f64 {
    0.01
}

impl Schema {
    /// Builds a schema from `(name, kind)` pairs with default settings.
    pub fn new(columns: &[(&str, ColumnKind)], normal_labels: &[&str]) -> Result<Self> {
        let s = Self {
            version: SCHEMA_VERSION,
            name: String::new(),
            normal_labels: normal_labels.iter().map(|s| s.to_string()).collect(),
            missing: default_missing(),
            max_reject_fraction: default_reject(),
            columns: columns
                .iter()
                .map(|(n, k)| ColumnSpec {
                    name: n.to_string(),
                    kind: *k,
                })
                .collect(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Schema = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(Error::Schema(format!("unsupported schema version {}", self.version)));
        }
        let labels = self.columns.iter().filter(|c| c.kind == ColumnKind::Label).count();
        if labels != 1 {
            return Err(Error::Schema(format!(
                "expected exactly one label column, found {labels}"
            )));
        }
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("column `{}` listed twice", c.name)));
            }
        }
        if self.normal_labels.is_empty() {
            return Err(Error::Schema("normal_labels must name at least one value".into()));
        }
        if !(0.0..=1.0).contains(&self.max_reject_fraction) {
            return Err(Error::Schema(format!(
                "max_reject_fraction {} outside [0, 1]",
                self.max_reject_fraction
            )));
        }
        Ok(())
    }

    pub fn label_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.kind == ColumnKind::Label)
            .expect("validated schema has a label column")
    }

    pub fn is_missing(&self, cell: &str) -> bool {
        self.missing.iter().any(|m| m == cell)
    }

    pub fn is_normal(&self, label: &str) -> bool {
        self.normal_labels.iter().any(|m| m == label)
    }
}
