use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

use super::params::{normal, uniform, Ctx, ParamId, ParamStore};

/// Fully connected layer, `y = x·W + b` with `W` stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform(rng, vec![fan_in, fan_out], bound),
            true,
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), uniform(rng, vec![fan_out], bound), true)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.fan_in {
            return Err(Error::Shape {
                op: "linear",
                detail: format!("expected [b, {}], got {shape:?}", self.fan_in),
            });
        }
        let y = x.matmul(ctx.var(self.weight))?;
        match self.bias {
            Some(b) => y.add(ctx.var(b)),
            None => Ok(y),
        }
    }
}

/// Batch normalization over the rows of a `[b, d]` input.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(vec![dim]), true)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![dim]), true)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(vec![dim]), false)?,
            running_var: store.add(format!("{name}.running_var"), Tensor::ones(vec![dim]), false)?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    /// Normalized input before the affine scale/shift.
    pub fn normalize<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        let dim = ctx.store().get(self.gamma).len();
        if shape.len() != 2 || shape[1] != dim {
            return Err(Error::Shape {
                op: "batch_norm",
                detail: format!("expected [b, {dim}], got {shape:?}"),
            });
        }
        let eps = T::of(self.eps);
        if ctx.is_train() {
            if shape[0] < 2 {
                return Err(Error::BatchSize {
                    op: "batch_norm",
                    got: shape[0],
                    need: 2,
                });
            }
            let mean = x.mean_keepdim(0)?;
            let centered = x.sub(mean)?;
            let var = centered.square().mean_keepdim(0)?;
            self.track(ctx, &mean.value(), &var.value())?;
            centered.div(var.add_scalar(eps).sqrt()?)
        } else {
            let mean = ctx.tape.constant(ctx.buffer(self.running_mean));
            let std = ctx.buffer(self.running_var).map(|v| (v + eps).sqrt());
            x.sub(mean)?.div(ctx.tape.constant(std))
        }
    }

    fn track<T: Scalar>(&self, ctx: &Ctx<'_, '_, T>, mean: &Tensor<T>, var: &Tensor<T>) -> Result<()> {
        let m = T::of(self.momentum);
        let keep = T::one() - m;
        let blend = |old: Tensor<T>, new: &Tensor<T>| {
            let data = old
                .data()
                .iter()
                .zip(new.data())
                .map(|(&o, &n)| keep * o + m * n)
                .collect();
            Tensor::new(old.shape().to_vec(), data)
        };
        let rm = blend(ctx.buffer(self.running_mean), mean)?;
        let rv = blend(ctx.buffer(self.running_var), var)?;
        ctx.queue_update(self.running_mean, rm);
        ctx.queue_update(self.running_var, rv);
        Ok(())
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let xhat = self.normalize(ctx, x)?;
        xhat.mul(ctx.var(self.gamma))?.add(ctx.var(self.beta))
    }
}

/// Layer normalization over the last axis.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(vec![dim]), true)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![dim]), true)?,
            eps: 1e-5,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let last = x.shape().len() - 1;
        let centered = x.sub(x.mean_keepdim(last)?)?;
        let var = centered.square().mean_keepdim(last)?;
        let xhat = centered.div(var.add_scalar(T::of(self.eps)).sqrt()?)?;
        xhat.mul(ctx.var(self.gamma))?.add(ctx.var(self.beta))
    }
}

/// `1×kw` convolution with stride 1 and no padding on `[b, C_in, 1, W]`.
#[derive(Clone, Debug)]
pub struct Conv1xW {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel_width: usize,
}

impl Conv1xW {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel_width: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let bound = 1.0 / ((c_in * kernel_width) as f64).sqrt();
        Ok(Self {
            weight: store.add(
                format!("{name}.weight"),
                uniform(rng, vec![c_out, c_in, 1, kernel_width], bound),
                true,
            )?,
            bias: store.add(format!("{name}.bias"), uniform(rng, vec![c_out], bound), true)?,
            c_in,
            c_out,
            kernel_width,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = x.conv1xw(ctx.var(self.weight))?;
        let bias = ctx.var(self.bias).reshape(vec![self.c_out, 1, 1])?;
        y.add(bias)
    }
}

/// Non-overlapping `1×k` max pooling.
pub fn maxpool_1xk<'t, T: Scalar>(x: Var<'t, T>, k: usize) -> Result<Var<'t, T>> {
    x.maxpool1xk(k)
}

/// Inverted dropout: scales kept units by `1/(1-p)` at train time, identity
/// at eval time.
pub fn dropout<'t, T: Scalar>(ctx: &Ctx<'t, '_, T>, x: Var<'t, T>, p: f64) -> Result<Var<'t, T>> {
    if !ctx.is_train() || p == 0.0 {
        return Ok(x);
    }
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
    }
    let scale = T::of(1.0 / (1.0 - p));
    let mask = ctx.with_rng(|rng| {
        use rand::Rng as _;
        Tensor::from_fn(x.shape(), |_| if rng.random::<f64>() < p { T::zero() } else { scale })
    });
    x.mul(ctx.tape.constant(mask))
}

/// Multi-head scaled dot-product self-attention over `[b, t, d]`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
    pub dropout: f64,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "attention width {dim} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, true, rng)?,
            key: Linear::new(store, &format!("{name}.key"), dim, dim, true, rng)?,
            value: Linear::new(store, &format!("{name}.value"), dim, dim, true, rng)?,
            output: Linear::new(store, &format!("{name}.output"), dim, dim, true, rng)?,
            heads,
            dim,
            dropout,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.forward_with_weights(ctx, x)?.0)
    }

    /// Output together with the attention weights `[b·heads, t, t]`.
    pub fn forward_with_weights<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let shape = x.shape();
        if shape.len() != 3 || shape[2] != self.dim {
            return Err(Error::Shape {
                op: "multi_head_attention",
                detail: format!("expected [b, t, {}], got {shape:?}", self.dim),
            });
        }
        let (b, t, d) = (shape[0], shape[1], shape[2]);
        let h = self.heads;
        let dh = d / h;
        let flat = x.reshape(vec![b * t, d])?;
        let split = |lin: &Linear| -> Result<Var<'t, T>> {
            lin.forward(ctx, flat)?
                .reshape(vec![b, t, h, dh])?
                .permute(&[0, 2, 1, 3])?
                .reshape(vec![b * h, t, dh])
        };
        let q = split(&self.query)?;
        let k = split(&self.key)?;
        let v = split(&self.value)?;
        let scores = q.bmm(k.permute(&[0, 2, 1])?)?.scale(T::of(1.0 / (dh as f64).sqrt()));
        let weights = scores.softmax()?;
        let attended = dropout(ctx, weights, self.dropout)?.bmm(v)?;
        let merged = attended
            .reshape(vec![b, h, t, dh])?
            .permute(&[0, 2, 1, 3])?
            .reshape(vec![b * t, d])?;
        let out = self.output.forward(ctx, merged)?.reshape(vec![b, t, d])?;
        Ok((out, weights))
    }
}

/// Lookup table of `count` rows of width `dim`, initialized `N(0, 1/dim)`.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub count: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        count: usize,
        dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let std = 1.0 / (dim as f64).sqrt();
        Ok(Self {
            table: store.add(format!("{name}.table"), normal(rng, vec![count, dim], std), true)?,
            count,
            dim,
        })
    }

    /// Rows for `indices`, shape `[indices.len(), dim]`.
    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, indices: &[usize]) -> Result<Var<'t, T>> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.count) {
            return Err(Error::Schema(format!(
                "category index {bad} out of range for {} entries",
                self.count
            )));
        }
        ctx.var(self.table).index_select(0, indices)
    }
}
