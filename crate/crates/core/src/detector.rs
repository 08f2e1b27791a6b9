//! Single-center distance detector on frozen representations.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::SubsetSplit;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::ssl::SslModel;
use crate::tensor::Tensor;

/// Rows encoded per forward pass when scoring through a model.
pub const ENCODE_CHUNK: usize = 1024;

/// Cluster center of the training representations. With one center the
/// k-means fixed point is the mean, so fitting is closed-form.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    center: Option<Vec<f64>>,
    /// Window layout used to aggregate Subsets representations.
    pub split: Option<SubsetSplit>,
}

impl Detector {
    pub fn unfitted() -> Self {
        Self::default()
    }

    /// Center = mean of the rows of `reps` (`[n, r]`).
    pub fn fit(reps: &Tensor<impl Scalar>) -> Result<Self> {
        let (n, r) = reps.dims2()?;
        if n == 0 {
            return Err(Error::Data("cannot fit a detector on zero samples".into()));
        }
        let mut center = vec![0.0; r];
        for row in reps.data().chunks(r) {
            for (c, v) in center.iter_mut().zip(row) {
                *c += v.as_f64();
            }
        }
        for c in &mut center {
            *c /= n as f64;
        }
        Ok(Self {
            center: Some(center),
            split: None,
        })
    }

    /// Fits on the eval-mode encoder outputs of the training normals.
    pub fn fit_model<T: Scalar>(model: &SslModel<T>, train: &Tensor<T>) -> Result<Self> {
        let reps = model.represent(train, ENCODE_CHUNK)?;
        let mut d = Self::fit(&reps)?;
        d.split = model.split.clone();
        Ok(d)
    }

    pub fn is_fitted(&self) -> bool {
        self.center.is_some()
    }

    pub fn center(&self) -> Result<&[f64]> {
        self.center
            .as_deref()
            .ok_or_else(|| Error::State("detector has not been fitted".into()))
    }

    /// Euclidean distance of one representation to the center.
    pub fn score<T: Scalar>(&self, rep: &[T]) -> Result<f64> {
        let c = self.center()?;
        if rep.len() != c.len() {
            return Err(Error::Shape {
                op: "anomaly_score",
                detail: format!(
                    "representation width {} differs from center width {}",
                    rep.len(),
                    c.len()
                ),
            });
        }
        Ok(rep
            .iter()
            .zip(c)
            .map(|(&x, &m)| {
                let d = x.as_f64() - m;
                d * d
            })
            .sum::<f64>()
            .sqrt())
    }

    pub fn score_batch<T: Scalar>(&self, reps: &Tensor<T>) -> Result<Vec<f64>> {
        let (_, r) = reps.dims2()?;
        self.center()?;
        reps.data().chunks(r).map(|row| self.score(row)).collect()
    }

    /// Scores raw feature rows through the model's frozen encoder.
    pub fn score_inputs<T: Scalar>(&self, model: &SslModel<T>, x: &Tensor<T>) -> Result<Vec<f64>> {
        self.center()?;
        self.score_batch(&model.represent(x, ENCODE_CHUNK)?)
    }
}

/// Writes `sample_id,score,label` rows; the label column is empty when
/// labels are unknown.
pub fn write_scores(path: &Path, scores: &[f64], labels: Option<&[u8]>) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != scores.len() {
            return Err(Error::Data(format!("{} labels for {} scores", l.len(), scores.len())));
        }
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "sample_id,score,label")?;
    for (i, s) in scores.iter().enumerate() {
        match labels {
            Some(l) => writeln!(w, "{i},{s:e},{}", l[i])?,
            None => writeln!(w, "{i},{s:e},")?,
        }
    }
    w.flush()?;
    Ok(())
}
