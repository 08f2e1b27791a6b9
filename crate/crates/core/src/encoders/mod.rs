//! Representation backbones: MLP, 1-row CNN and FT-Transformer.

mod cnn;
mod ft;
mod mlp;

pub use cnn::{cnn_min_width, cnn_shapes, Cnn};
pub use ft::FtTransformer;
pub use mlp::Mlp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureLayout;
use crate::nn::{Ctx, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Mlp,
    Cnn,
    FtTransformer,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 3] = [EncoderKind::Mlp, EncoderKind::Cnn, EncoderKind::FtTransformer];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Mlp => "mlp",
            EncoderKind::Cnn => "cnn",
            EncoderKind::FtTransformer => "ft_transformer",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// MLP layer width.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// CNN output channels of the five convolutions.
    #[serde(default = "default_channels")]
    pub cnn_channels: [usize; 5],
    #[serde(default = "default_token_dim")]
    pub token_dim: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// FT-Transformer feed-forward width; `round(4/3 · token_dim)` when unset.
    #[serde(default)]
    pub ffn_hidden: Option<usize>,
}

fn default_hidden() -> usize {
    256
}
fn default_channels() -> [usize; 5] {
    [32, 64, 128, 256, 512]
}
fn default_token_dim() -> usize {
    32
}
fn default_heads() -> usize {
    4
}
fn default_layers() -> usize {
    4
}
fn default_dropout() -> f64 {
    0.1
}

impl EncoderConfig {
    pub fn new(kind: EncoderKind) -> Self {
        Self {
            kind,
            hidden: default_hidden(),
            cnn_channels: default_channels(),
            token_dim: default_token_dim(),
            heads: default_heads(),
            layers: default_layers(),
            dropout: default_dropout(),
            ffn_hidden: None,
        }
    }

    pub fn ffn_width(&self) -> usize {
        self.ffn_hidden
            .unwrap_or_else(|| (4.0 * self.token_dim as f64 / 3.0).round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.token_dim == 0 || self.layers == 0 || self.cnn_channels.contains(&0) {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        if self.heads == 0 || !self.token_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "token_dim {} not divisible by {} heads",
                self.token_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Output width of the encoder for the given input layout.
pub fn representation_dim(config: &EncoderConfig, layout: &FeatureLayout) -> Result<usize> {
    config.validate()?;
    match config.kind {
        EncoderKind::Mlp => Ok(config.hidden),
        EncoderKind::Cnn => {
            let shapes = cnn_shapes(layout.width, &config.cnn_channels)?;
            let (w, c) = shapes.last().map(|s| (s.1, s.2)).expect("non-empty stack");
            Ok(w * c)
        }
        EncoderKind::FtTransformer => Ok(layout.n_features() * config.token_dim),
    }
}

#[derive(Clone, Debug)]
pub enum Encoder {
    Mlp(Mlp),
    Cnn(Cnn),
    Ft(FtTransformer),
}

impl Encoder {
    /// Registers the encoder's parameters under `prefix`.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: &EncoderConfig,
        layout: &FeatureLayout,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        Ok(match config.kind {
            EncoderKind::Mlp => Encoder::Mlp(Mlp::new(store, prefix, layout.width, config.hidden, rng)?),
            EncoderKind::Cnn => Encoder::Cnn(Cnn::new(store, prefix, layout.width, &config.cnn_channels, rng)?),
            EncoderKind::FtTransformer => Encoder::Ft(FtTransformer::new(store, prefix, config, layout, rng)?),
        })
    }

    pub fn input_width(&self) -> usize {
        match self {
            Encoder::Mlp(m) => m.input_width,
            Encoder::Cnn(c) => c.input_width,
            Encoder::Ft(f) => f.layout.width,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Mlp(m) => m.output_dim(),
            Encoder::Cnn(c) => c.output_dim(),
            Encoder::Ft(f) => f.output_dim(),
        }
    }

    /// `[b, d]` feature batch to `[b, r]` representations.
    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.input_width() {
            return Err(Error::Schema(format!(
                "encoder expects [b, {}] input, got {shape:?}",
                self.input_width()
            )));
        }
        match self {
            Encoder::Mlp(m) => m.forward(ctx, x),
            Encoder::Cnn(c) => c.forward(ctx, x),
            Encoder::Ft(f) => f.forward(ctx, x),
        }
    }
}
