use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-hot block standing for one original categorical column.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalGroup {
    pub name: String,
    /// First column of the block in the feature matrix.
    pub start: usize,
    /// Category labels in column order.
    pub categories: Vec<String>,
}

impl CategoricalGroup {
    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn columns(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.categories.len()
    }
}

/// Column roles of a feature matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub width: usize,
    /// Column indices of numeric features, ascending.
    pub numeric: Vec<usize>,
    pub groups: Vec<CategoricalGroup>,
}

impl FeatureLayout {
    /// Every column numeric.
    pub fn numeric_only(width: usize) -> Self {
        Self {
            width,
            numeric: (0..width).collect(),
            groups: Vec::new(),
        }
    }

    /// Number of original features (numeric columns plus categorical groups).
    pub fn n_features(&self) -> usize {
        self.numeric.len() + self.groups.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.width];
        let cols = self
            .numeric
            .iter()
            .copied()
            .chain(self.groups.iter().flat_map(|g| g.columns()));
        for c in cols {
            if c >= self.width || std::mem::replace(&mut seen[c], true) {
                return Err(Error::Schema(format!("column {c} out of range or assigned twice")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Schema("feature layout leaves columns unassigned".into()));
        }
        Ok(())
    }
}
