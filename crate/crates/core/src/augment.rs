//! View generation for the joint-embedding models.
//!
//! Input-space augmentations (swap noise, zero-out, Gaussian noise, random
//! shuffle) act element-wise on a `[b, d]` batch. Subsets split the columns
//! into overlapping windows. Mixup acts on encoder outputs, so its views are
//! two raw copies of the batch and the mixing happens inside the model.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    SwapNoise,
    ZeroOut,
    GaussianNoise,
    RandomShuffle,
    Subsets,
    Mixup,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 6] = [
        AugmentKind::SwapNoise,
        AugmentKind::ZeroOut,
        AugmentKind::GaussianNoise,
        AugmentKind::RandomShuffle,
        AugmentKind::Subsets,
        AugmentKind::Mixup,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentKind::SwapNoise => "swap_noise",
            AugmentKind::ZeroOut => "zero_out",
            AugmentKind::GaussianNoise => "gaussian_noise",
            AugmentKind::RandomShuffle => "random_shuffle",
            AugmentKind::Subsets => "subsets",
            AugmentKind::Mixup => "mixup",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub kind: AugmentKind,
    /// Bernoulli masking rate.
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    /// Number of subsets.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub overlap: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_p() -> f64 {
    0.2
}
fn default_sigma2() -> f64 {
    0.01
}
fn default_k() -> usize {
    2
}
fn default_alpha() -> f64 {
    0.8
}

impl AugmentationSpec {
    pub fn new(kind: AugmentKind) -> Self {
        Self {
            kind,
            p: default_p(),
            mu: 0.0,
            sigma2: default_sigma2(),
            k: default_k(),
            overlap: 0.0,
            alpha: default_alpha(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self.kind {
            AugmentKind::SwapNoise | AugmentKind::ZeroOut | AugmentKind::GaussianNoise
                if !(0.0..=1.0).contains(&self.p) =>
            {
                bad(format!("p = {} outside [0, 1]", self.p))
            }
            AugmentKind::GaussianNoise if !(self.sigma2 > 0.0) => {
                bad(format!("sigma2 = {} must be positive", self.sigma2))
            }
            AugmentKind::Subsets if self.k < 2 => bad(format!("k = {} must be at least 2", self.k)),
            AugmentKind::Subsets if !(0.0..1.0).contains(&self.overlap) => {
                bad(format!("overlap = {} outside [0, 1)", self.overlap))
            }
            AugmentKind::Mixup if !(0.0..=1.0).contains(&self.alpha) => {
                bad(format!("alpha = {} outside [0, 1]", self.alpha))
            }
            _ => Ok(()),
        }
    }
}

/// Replaces each element with probability `p` by the same feature of a
/// uniformly drawn donor row.
pub fn swap_noise<T: Scalar>(batch: &Tensor<T>, p: f64, donors: &Tensor<T>, rng: &mut Rng) -> Result<Tensor<T>> {
    let (_, d) = batch.dims2()?;
    let (n, dd) = donors.dims2()?;
    if dd != d {
        return Err(Error::Schema(format!("donor width {dd} differs from batch width {d}")));
    }
    let mut out = batch.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if rng.random::<f64>() < p {
            let donor = rng.random_range(0..n);
            *v = donors.data()[donor * d + i % d];
        }
    }
    Ok(out)
}

/// `i ⊙ (1 − m) + j ⊙ m` for an explicit mask and donor rows.
pub fn swap_with_mask<T: Scalar>(batch: &Tensor<T>, mask: &[bool], donor: &Tensor<T>) -> Result<Tensor<T>> {
    if mask.len() != batch.len() || donor.shape() != batch.shape() {
        return Err(Error::Schema("mask and donor must match the batch shape".into()));
    }
    let data = batch
        .data()
        .iter()
        .zip(donor.data())
        .zip(mask)
        .map(|((&i, &j), &m)| if m { j } else { i })
        .collect();
    Tensor::new(batch.shape().to_vec(), data)
}

pub fn zero_out<T: Scalar>(batch: &Tensor<T>, p: f64, rng: &mut Rng) -> Tensor<T> {
    let mut out = batch.clone();
    for v in out.data_mut() {
        if rng.random::<f64>() < p {
            *v = T::zero();
        }
    }
    out
}

/// Adds an independent `N(mu, sigma2)` draw to each element selected with
/// probability `p`.
pub fn gaussian_noise<T: Scalar>(batch: &Tensor<T>, p: f64, mu: f64, sigma2: f64, rng: &mut Rng) -> Result<Tensor<T>> {
    if !(sigma2 > 0.0) {
        return Err(Error::Config(format!("sigma2 = {sigma2} must be positive")));
    }
    let sigma = sigma2.sqrt();
    let mut out = batch.clone();
    for v in out.data_mut() {
        if rng.random::<f64>() < p {
            *v += T::of(mu + sigma * rng::normal(rng));
        }
    }
    Ok(out)
}

/// In-place Fisher–Yates: for `k = d-1 … 0`, swap position `k` with a
/// uniform index in `[0, k]`.
pub fn shuffle_in_place<T>(sample: &mut [T], rng: &mut Rng) {
    for k in (0..sample.len()).rev() {
        let p = rng.random_range(0..=k);
        sample.swap(k, p);
    }
}

/// Shuffles the feature positions of every row independently.
pub fn random_shuffle<T: Scalar>(batch: &Tensor<T>, rng: &mut Rng) -> Result<Tensor<T>> {
    let (_, d) = batch.dims2()?;
    let mut out = batch.clone();
    for row in out.data_mut().chunks_mut(d) {
        shuffle_in_place(row, rng);
    }
    Ok(out)
}

/// Column windows of a Subsets split.
///
/// All windows share one width `w = ceil(d/k) + round(overlap·ceil(d/k))`
/// (capped at `d`) so a single encoder serves every view; window `i` starts
/// at `round(i·(d − w)/(k − 1))` in the permuted feature order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSplit {
    pub columns: Vec<Vec<usize>>,
}

impl SubsetSplit {
    pub fn new(d: usize, k: usize, overlap: f64, permutation: &[usize]) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("subsets need k >= 2, got {k}")));
        }
        if k > d {
            return Err(Error::Config(format!("k = {k} exceeds feature count {d}")));
        }
        if !(0.0..1.0).contains(&overlap) {
            return Err(Error::Config(format!("overlap {overlap} outside [0, 1)")));
        }
        if permutation.len() != d {
            return Err(Error::Config(format!(
                "permutation has {} entries for {d} features",
                permutation.len()
            )));
        }
        let base = d.div_ceil(k);
        let width = (base + (overlap * base as f64).round() as usize).min(d);
        let span = (d - width) as f64;
        let columns = (0..k)
            .map(|i| {
                let start = (i as f64 * span / (k - 1) as f64).round() as usize;
                permutation[start..start + width].to_vec()
            })
            .collect();
        Ok(Self { columns })
    }

    pub fn width(&self) -> usize {
        self.columns[0].len()
    }

    pub fn views<T: Scalar>(&self, batch: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.columns.iter().map(|c| batch.select_cols(c)).collect()
    }
}

/// Per-row partner indices for Mixup, never pairing a row with itself.
pub fn mixup_partners(b: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if b < 2 {
        return Err(Error::BatchSize {
            op: "mixup",
            got: b,
            need: 2,
        });
    }
    Ok((0..b)
        .map(|i| {
            let j = rng.random_range(0..b - 1);
            if j >= i {
                j + 1
            } else {
                j
            }
        })
        .collect())
}

/// `α·y + (1 − α)·y[partner]` on representations.
pub fn mixup<'t, T: Scalar>(y: Var<'t, T>, alpha: f64, partners: &[usize]) -> Result<Var<'t, T>> {
    let b = y.shape()[0];
    if b < 2 {
        return Err(Error::BatchSize {
            op: "mixup",
            got: b,
            need: 2,
        });
    }
    if partners.len() != b {
        return Err(Error::Shape {
            op: "mixup",
            detail: format!("{} partners for {b} rows", partners.len()),
        });
    }
    if alpha == 1.0 {
        return Ok(y);
    }
    let other = y.index_select(0, partners)?;
    y.scale(T::of(alpha)).add(other.scale(T::of(1.0 - alpha)))
}

/// Views produced for one training step.
#[derive(Clone, Debug)]
pub enum ViewSet<T: Scalar> {
    /// Independently augmented full-width copies.
    Input(Vec<Tensor<T>>),
    /// Column windows of the same batch.
    Subsets(Vec<Tensor<T>>),
    /// Raw copies; mixing is applied to the representations.
    Mixup(Vec<Tensor<T>>),
}

impl<T: Scalar> ViewSet<T> {
    pub fn views(&self) -> &[Tensor<T>] {
        match self {
            ViewSet::Input(v) | ViewSet::Subsets(v) | ViewSet::Mixup(v) => v,
        }
    }
}

/// Builds the views of `batch` for `spec`. `donors` feeds swap noise and
/// `split` is required for subsets.
pub fn make_views<T: Scalar>(
    spec: &AugmentationSpec,
    batch: &Tensor<T>,
    donors: &Tensor<T>,
    split: Option<&SubsetSplit>,
    rng: &mut Rng,
) -> Result<ViewSet<T>> {
    let two = |rng: &mut Rng, f: &dyn Fn(&mut Rng) -> Result<Tensor<T>>| -> Result<Vec<Tensor<T>>> {
        Ok(vec![f(rng)?, f(rng)?])
    };
    Ok(match spec.kind {
        AugmentKind::SwapNoise => ViewSet::Input(two(rng, &|r| swap_noise(batch, spec.p, donors, r))?),
        AugmentKind::ZeroOut => ViewSet::Input(two(rng, &|r| Ok(zero_out(batch, spec.p, r)))?),
        AugmentKind::GaussianNoise => {
            ViewSet::Input(two(rng, &|r| gaussian_noise(batch, spec.p, spec.mu, spec.sigma2, r))?)
        }
        AugmentKind::RandomShuffle => ViewSet::Input(two(rng, &|r| random_shuffle(batch, r))?),
        AugmentKind::Subsets => {
            let split = split.ok_or_else(|| Error::Config("subsets augmentation needs a split".into()))?;
            ViewSet::Subsets(split.views(batch)?)
        }
        AugmentKind::Mixup => ViewSet::Mixup(vec![batch.clone(), batch.clone()]),
    })
}
