//! Unsupervised comparison models: a reconstruction autoencoder and a
//! one-class hypersphere network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, Ctx, Linear, Mode, ParamStore};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeConfig {
    /// Widths between input and reconstruction.
    #[serde(default = "ae_hidden")]
    pub hidden: Vec<usize>,
    /// Drop the ReLU between layers.
    #[serde(default)]
    pub linear: bool,
    #[serde(default = "default_lr")]
    pub lr: f64,
}

fn ae_hidden() -> Vec<usize> {
    vec![256, 64, 256]
}
fn default_lr() -> f64 {
    1e-3
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            hidden: ae_hidden(),
            linear: false,
            lr: default_lr(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvddConfig {
    /// Widths of the bias-free mapping; the last one is the latent size.
    #[serde(default = "svdd_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_lr")]
    pub lr: f64,
}

fn svdd_hidden() -> Vec<usize> {
    vec![256, 64]
}

impl Default for SvddConfig {
    fn default() -> Self {
        Self {
            hidden: svdd_hidden(),
            lr: default_lr(),
        }
    }
}

/// Stack of fully connected layers with ReLU between them (not after the last).
#[derive(Clone, Debug)]
struct Stack {
    layers: Vec<Linear>,
    relu: bool,
}

impl Stack {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        widths: &[usize],
        bias: bool,
        relu: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{prefix}.fc{i}"), w[0], w[1], bias, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers, relu })
    }

    fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(ctx, h)?;
            if self.relu && i + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        Ok(h)
    }
}

/// Shuffled mini-batches of row indices; the last batch may be short.
fn batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    crate::augment::shuffle_in_place(&mut order, rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

fn check_data<T: Scalar>(data: &Tensor<T>, width: usize) -> Result<usize> {
    let (n, d) = data.dims2()?;
    if d != width {
        return Err(Error::Schema(format!("model expects {width} features, got {d}")));
    }
    if n == 0 {
        return Err(Error::Data("empty training set".into()));
    }
    Ok(n)
}

/// Reconstruction autoencoder; the anomaly score is the per-sample mean
/// squared reconstruction error.
#[derive(Clone, Debug)]
pub struct AeModel<T: Scalar> {
    pub store: ParamStore<T>,
    pub optimizer: Adam<T>,
    pub input_width: usize,
    net: Stack,
    rng: Rng,
}

impl<T: Scalar> AeModel<T> {
    pub fn new(config: &AeConfig, input_width: usize, seed: u64) -> Result<Self> {
        let mut widths = vec![input_width];
        widths.extend(&config.hidden);
        widths.push(input_width);
        let mut store = ParamStore::new();
        let net = Stack::new(
            &mut store,
            "ae",
            &widths,
            true,
            !config.linear,
            &mut rng::stream(seed, "init"),
        )?;
        Ok(Self {
            store,
            optimizer: Adam::new(config.lr),
            input_width,
            net,
            rng: rng::stream(seed, "train"),
        })
    }

    pub fn latent_dim(&self) -> usize {
        let hidden = &self.net.layers[..self.net.layers.len() - 1];
        hidden.iter().map(|l| l.fan_out).min().unwrap_or(0)
    }

    fn errors<'t>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.net.forward(ctx, x)?.sub(x)?.square().mean(Some(1))
    }

    /// One Adam step on a batch; returns the batch loss.
    pub fn train_step(&mut self, batch: &Tensor<T>) -> Result<f64> {
        check_data(batch, self.input_width)?;
        let tape = Tape::new();
        let (loss, grads) = {
            let ctx = Ctx::new(&tape, &self.store, Mode::Train, 0);
            let loss = self.errors(&ctx, tape.constant(batch.clone()))?.mean(None)?;
            tape.backward(loss)?;
            (loss.value().item().as_f64(), ctx.grads())
        };
        self.optimizer.step(&mut self.store, &grads)?;
        Ok(loss)
    }

    /// Mean training loss per epoch.
    pub fn fit(&mut self, data: &Tensor<T>, epochs: usize, batch_size: usize) -> Result<Vec<f64>> {
        let n = check_data(data, self.input_width)?;
        let mut out = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let mut total = 0.0;
            for rows in batches(n, batch_size, &mut self.rng) {
                total += self.train_step(&data.select_rows(&rows))? * rows.len() as f64;
            }
            out.push(total / n as f64);
        }
        Ok(out)
    }

    pub fn score(&self, x: &Tensor<T>) -> Result<Vec<f64>> {
        check_data(x, self.input_width)?;
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.store, Mode::Eval, 0).frozen();
        let e = self.errors(&ctx, tape.constant(x.clone()))?.value();
        Ok(e.data().iter().map(|v| v.as_f64()).collect())
    }
}

/// Coordinates this close to zero in every dimension make the center
/// collapse-prone.
pub const CENTER_EPS: f64 = 1e-3;

/// Bias-free mapping trained to pull normals toward a fixed center `c`;
/// the anomaly score is `‖f(x) − c‖²`.
#[derive(Clone, Debug)]
pub struct SvddModel<T: Scalar> {
    pub store: ParamStore<T>,
    pub optimizer: Adam<T>,
    pub input_width: usize,
    net: Stack,
    center: Option<Tensor<T>>,
    /// Set when the initial center had every coordinate within `CENTER_EPS` of 0.
    pub collapse_warning: bool,
    rng: Rng,
}

impl<T: Scalar> SvddModel<T> {
    pub fn new(config: &SvddConfig, input_width: usize, seed: u64) -> Result<Self> {
        let mut widths = vec![input_width];
        widths.extend(&config.hidden);
        let mut store = ParamStore::new();
        let net = Stack::new(&mut store, "svdd", &widths, false, true, &mut rng::stream(seed, "init"))?;
        Ok(Self {
            store,
            optimizer: Adam::new(config.lr),
            input_width,
            net,
            center: None,
            collapse_warning: false,
            rng: rng::stream(seed, "train"),
        })
    }

    fn map(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.store, Mode::Eval, 0).frozen();
        Ok((*self.net.forward(&ctx, tape.constant(x.clone()))?.value()).clone())
    }

    /// Sets `c` to the mean network output over `data`.
    pub fn init_center(&mut self, data: &Tensor<T>) -> Result<()> {
        let n = check_data(data, self.input_width)?;
        let out = self.map(data)?;
        let (_, r) = out.dims2()?;
        let mut c = vec![0.0; r];
        for row in out.data().chunks(r) {
            for (a, v) in c.iter_mut().zip(row) {
                *a += v.as_f64() / n as f64;
            }
        }
        self.collapse_warning = c.iter().all(|v| v.abs() < CENTER_EPS);
        if self.collapse_warning {
            log::warn!("hypersphere center is within {CENTER_EPS} of the origin; training may collapse");
        }
        self.center = Some(Tensor::from_f64(vec![r], &c)?);
        Ok(())
    }

    pub fn center(&self) -> Result<&Tensor<T>> {
        self.center
            .as_ref()
            .ok_or_else(|| Error::State("hypersphere center not initialized".into()))
    }

    fn distances<'t>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let c = ctx.tape.constant(self.center()?.clone());
        self.net.forward(ctx, x)?.sub(c)?.square().sum(Some(1))
    }

    pub fn train_step(&mut self, batch: &Tensor<T>) -> Result<f64> {
        check_data(batch, self.input_width)?;
        let tape = Tape::new();
        let (loss, grads) = {
            let ctx = Ctx::new(&tape, &self.store, Mode::Train, 0);
            let loss = self.distances(&ctx, tape.constant(batch.clone()))?.mean(None)?;
            tape.backward(loss)?;
            (loss.value().item().as_f64(), ctx.grads())
        };
        self.optimizer.step(&mut self.store, &grads)?;
        Ok(loss)
    }

    /// Initializes the center if needed, then trains; returns the mean
    /// training loss per epoch.
    pub fn fit(&mut self, data: &Tensor<T>, epochs: usize, batch_size: usize) -> Result<Vec<f64>> {
        let n = check_data(data, self.input_width)?;
        if self.center.is_none() {
            self.init_center(data)?;
        }
        let mut out = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let mut total = 0.0;
            for rows in batches(n, batch_size, &mut self.rng) {
                total += self.train_step(&data.select_rows(&rows))? * rows.len() as f64;
            }
            out.push(total / n as f64);
        }
        Ok(out)
    }

    pub fn score(&self, x: &Tensor<T>) -> Result<Vec<f64>> {
        check_data(x, self.input_width)?;
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.store, Mode::Eval, 0).frozen();
        let d = self.distances(&ctx, tape.constant(x.clone()))?.value();
        Ok(d.data().iter().map(|v| v.as_f64()).collect())
    }
}
