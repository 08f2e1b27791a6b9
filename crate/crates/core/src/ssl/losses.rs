use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Loss value with its named components.
#[derive(Clone, Copy)]
pub struct Loss<'t, T: Scalar> {
    pub total: Var<'t, T>,
    terms: [Option<(&'static str, Var<'t, T>)>; 3],
}

impl<'t, T: Scalar> Loss<'t, T> {
    pub fn scalar(total: Var<'t, T>) -> Self {
        Self {
            total,
            terms: [None; 3],
        }
    }

    pub fn breakdown(&self) -> LossBreakdown {
        LossBreakdown {
            total: self.total.value().item().as_f64(),
            terms: self
                .terms
                .iter()
                .flatten()
                .map(|(n, v)| (n.to_string(), v.value().item().as_f64()))
                .collect(),
        }
    }
}

/// Plain numbers of a [`Loss`], for logging.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub terms: Vec<(String, f64)>,
}

impl LossBreakdown {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Element-wise mean of several breakdowns with the same term names.
    pub fn mean(parts: &[LossBreakdown]) -> LossBreakdown {
        let n = parts.len().max(1) as f64;
        let mut out = parts.first().cloned().unwrap_or_default();
        out.total = parts.iter().map(|p| p.total).sum::<f64>() / n;
        for (i, (_, v)) in out.terms.iter_mut().enumerate() {
            *v = parts.iter().map(|p| p.terms[i].1).sum::<f64>() / n;
        }
        out
    }
}

/// Guard added under the square root of row norms.
pub const NORM_EPS: f64 = 1e-12;

/// Rows scaled to unit ℓ₂ norm, `x / sqrt(Σx² + ε)`.
pub fn l2_normalize<'t, T: Scalar>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let norm = x.square().sum(Some(1))?.add_scalar(T::of(NORM_EPS)).sqrt()?;
    let b = x.shape()[0];
    x.div(norm.reshape(vec![b, 1])?)
}

fn check_pair<T: Scalar>(op: &'static str, a: Var<'_, T>, b: Var<'_, T>, min_rows: usize) -> Result<(usize, usize)> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sa != sb {
        return Err(Error::Shape {
            op,
            detail: format!("branches must be equal matrices, got {sa:?} and {sb:?}"),
        });
    }
    if sa[0] < min_rows {
        return Err(Error::BatchSize {
            op,
            got: sa[0],
            need: min_rows,
        });
    }
    Ok((sa[0], sa[1]))
}

/// Row-wise cosine similarity, shape `[b]`.
pub fn cosine<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    l2_normalize(a)?.mul(l2_normalize(b)?)?.sum(Some(1))
}

/// Mean over rows of `‖q̂ − ẑ‖²` for one view ordering (`= 2 − 2·cos`).
/// `z_target` is expected to carry no gradient.
pub fn byol_loss<'t, T: Scalar>(q: Var<'t, T>, z_target: Var<'t, T>) -> Result<Var<'t, T>> {
    check_pair("byol_loss", q, z_target, 1)?;
    let d = l2_normalize(q)?.sub(l2_normalize(z_target)?)?;
    d.square().sum(Some(1))?.mean(None)
}

/// `−½·cos(p, sg z′) − ½·cos(p′, sg z)`, averaged over the batch.
pub fn simsiam_loss<'t, T: Scalar>(p: Var<'t, T>, p2: Var<'t, T>, z: Var<'t, T>, z2: Var<'t, T>) -> Result<Var<'t, T>> {
    check_pair("simsiam_loss", p, z2, 1)?;
    check_pair("simsiam_loss", p2, z, 1)?;
    let a = cosine(p, z2.detach())?.mean(None)?;
    let b = cosine(p2, z.detach())?.mean(None)?;
    Ok(a.add(b)?.scale(T::of(-0.5)))
}

/// Guard on the per-dimension standard deviation used for batch
/// standardization in the cross-correlation loss.
pub const BT_EPS: f64 = 1e-5;

fn standardize<'t, T: Scalar>(z: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
    let centered = z.sub(z.mean_keepdim(0)?)?;
    let std = centered.square().mean_keepdim(0)?.add_scalar(T::of(eps)).sqrt()?;
    centered.div(std)
}

fn diag_mask<T: Scalar>(n: usize) -> Tensor<T> {
    Tensor::eye(n)
}

/// `Σᵢ(1 − Cᵢᵢ)² + λ·Σ_{i≠j} Cᵢⱼ²` with `C = Ẑᵀ·Ẑ′ / b` over batch-standardized
/// columns. Terms: `on_diag`, `off_diag` (unweighted).
pub fn barlow_twins_loss<'t, T: Scalar>(z: Var<'t, T>, z2: Var<'t, T>, lambda: f64) -> Result<Loss<'t, T>> {
    let (b, dim) = check_pair("barlow_twins_loss", z, z2, 2)?;
    let tape = z.tape();
    let c = standardize(z, BT_EPS)?
        .t()?
        .matmul(standardize(z2, BT_EPS)?)?
        .scale(T::of(1.0 / b as f64));
    let eye = tape.constant(diag_mask::<T>(dim));
    let diag = c.mul(eye)?.sum(Some(1))?;
    let on = diag.neg().add_scalar(T::one()).square().sum(None)?;
    let off = c.square().sum(None)?.sub(diag.square().sum(None)?)?;
    let total = on.add(off.scale(T::of(lambda)))?;
    Ok(Loss {
        total,
        terms: [Some(("on_diag", on)), Some(("off_diag", off)), None],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VicregWeights {
    #[serde(default = "d25")]
    pub lambda: f64,
    #[serde(default = "d25")]
    pub mu: f64,
    #[serde(default = "d1")]
    pub nu: f64,
    #[serde(default = "d1")]
    pub gamma: f64,
    #[serde(default = "d1e4")]
    pub eps: f64,
}

fn d25() -> f64 {
    25.0
}
fn d1() -> f64 {
    1.0
}
fn d1e4() -> f64 {
    1e-4
}

impl Default for VicregWeights {
    fn default() -> Self {
        Self {
            lambda: 25.0,
            mu: 25.0,
            nu: 1.0,
            gamma: 1.0,
            eps: 1e-4,
        }
    }
}

fn variance_term<'t, T: Scalar>(z: Var<'t, T>, w: &VicregWeights) -> Result<Var<'t, T>> {
    let std = z.var(Some(0), 0)?.add_scalar(T::of(w.eps)).sqrt()?;
    std.neg().add_scalar(T::of(w.gamma)).relu().mean(None)
}

fn covariance_term<'t, T: Scalar>(z: Var<'t, T>) -> Result<Var<'t, T>> {
    let (b, dim) = (z.shape()[0], z.shape()[1]);
    let centered = z.sub(z.mean_keepdim(0)?)?;
    let cov = centered.t()?.matmul(centered)?.scale(T::of(1.0 / b as f64));
    let diag = centered.square().mean(Some(0))?;
    let off = cov.square().sum(None)?.sub(diag.square().sum(None)?)?;
    Ok(off.scale(T::of(1.0 / dim as f64)))
}

/// `λ·s + μ·[v(Z)+v(Z′)] + ν·[c(Z)+c(Z′)]`. Terms: `invariance`, `variance`,
/// `covariance` (unweighted, both branches summed).
pub fn vicreg_loss<'t, T: Scalar>(z: Var<'t, T>, z2: Var<'t, T>, w: &VicregWeights) -> Result<Loss<'t, T>> {
    check_pair("vicreg_loss", z, z2, 2)?;
    let inv = z.sub(z2)?.square().mean(None)?;
    let var = variance_term(z, w)?.add(variance_term(z2, w)?)?;
    let cov = covariance_term(z)?.add(covariance_term(z2)?)?;
    let total = inv
        .scale(T::of(w.lambda))
        .add(var.scale(T::of(w.mu)))?
        .add(cov.scale(T::of(w.nu)))?;
    Ok(Loss {
        total,
        terms: [
            Some(("invariance", inv)),
            Some(("variance", var)),
            Some(("covariance", cov)),
        ],
    })
}

/// Whitens the rows of `x` (`[s, dim]`): centers, then solves `L·W = X_cᵀ`
/// with `L` the Cholesky factor of `X_cᵀX_c / s + ε·I`.
pub fn whiten<'t, T: Scalar>(x: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
    let (s, dim) = (x.shape()[0], x.shape()[1]);
    let centered = x.sub(x.mean_keepdim(0)?)?;
    let jitter = x.tape().constant(Tensor::eye(dim).map(|v| v * T::of(eps)));
    let cov = centered
        .t()?
        .matmul(centered)?
        .scale(T::of(1.0 / s as f64))
        .add(jitter)?;
    let l = cov.cholesky()?;
    l.solve_lower(centered.t()?)?.t()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WmseParams {
    /// Sub-batch size.
    #[serde(default = "d128")]
    pub slice: usize,
    #[serde(default = "d1e4")]
    pub eps: f64,
    /// Re-normalize rows after whitening.
    #[serde(default = "dtrue")]
    pub post_norm: bool,
}

fn d128() -> usize {
    128
}
fn dtrue() -> bool {
    true
}

impl Default for WmseParams {
    fn default() -> Self {
        Self {
            slice: 128,
            eps: 1e-4,
            post_norm: true,
        }
    }
}

/// Mean over sub-batches of the row-averaged squared distance between the
/// whitened branches. Rows past the last full sub-batch are ignored.
pub fn wmse_loss<'t, T: Scalar>(z: Var<'t, T>, z2: Var<'t, T>, p: &WmseParams) -> Result<Var<'t, T>> {
    if p.slice < 2 {
        return Err(Error::Config(format!(
            "W-MSE slice size {} must be at least 2",
            p.slice
        )));
    }
    let (b, _) = check_pair("wmse_loss", z, z2, p.slice)?;
    let (zn, zn2) = (l2_normalize(z)?, l2_normalize(z2)?);
    let slices = b / p.slice;
    let mut total: Option<Var<'t, T>> = None;
    for k in 0..slices {
        let rows: Vec<usize> = (k * p.slice..(k + 1) * p.slice).collect();
        let mut w = whiten(zn.index_select(0, &rows)?, p.eps)?;
        let mut w2 = whiten(zn2.index_select(0, &rows)?, p.eps)?;
        if p.post_norm {
            w = l2_normalize(w)?;
            w2 = l2_normalize(w2)?;
        }
        let l = w.sub(w2)?.square().sum(Some(1))?.mean(None)?;
        total = Some(match total {
            Some(t) => t.add(l)?,
            None => l,
        });
    }
    Ok(total.expect("at least one slice").scale(T::of(1.0 / slices as f64)))
}
