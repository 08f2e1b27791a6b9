use crate::error::{Error, Result};
use crate::features::FeatureLayout;
use crate::nn::{dropout, normal, Ctx, LayerNorm, Linear, MultiHeadAttention, ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{concat, Var};

use super::EncoderConfig;

#[derive(Clone, Debug)]
struct Block {
    attn_norm: LayerNorm,
    attn: MultiHeadAttention,
    ffn_norm: LayerNorm,
    ffn_in: Linear,
    ffn_out: Linear,
}

/// Feature-tokenizer transformer without a class token; the final token
/// matrix is flattened.
#[derive(Clone, Debug)]
pub struct FtTransformer {
    pub layout: FeatureLayout,
    pub token_dim: usize,
    num_weight: Option<ParamId>,
    num_bias: Option<ParamId>,
    cat_table: Option<ParamId>,
    cat_bias: Option<ParamId>,
    cat_offsets: Vec<usize>,
    blocks: Vec<Block>,
    dropout: f64,
}

impl FtTransformer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: &EncoderConfig,
        layout: &FeatureLayout,
        rng: &mut Rng,
    ) -> Result<Self> {
        layout.validate()?;
        let d = config.token_dim;
        let std = 1.0 / (d as f64).sqrt();
        let n_num = layout.numeric.len();
        let (num_weight, num_bias) = if n_num > 0 {
            (
                Some(store.add(
                    format!("{prefix}.tokenizer.num_weight"),
                    normal(rng, vec![n_num, d], std),
                    true,
                )?),
                Some(store.add(
                    format!("{prefix}.tokenizer.num_bias"),
                    normal(rng, vec![n_num, d], std),
                    true,
                )?),
            )
        } else {
            (None, None)
        };
        let mut cat_offsets = Vec::with_capacity(layout.groups.len());
        let mut total = 0;
        for g in &layout.groups {
            cat_offsets.push(total);
            total += g.len();
        }
        let (cat_table, cat_bias) = if total > 0 {
            (
                Some(store.add(
                    format!("{prefix}.tokenizer.cat_table"),
                    normal(rng, vec![total, d], std),
                    true,
                )?),
                Some(store.add(
                    format!("{prefix}.tokenizer.cat_bias"),
                    normal(rng, vec![layout.groups.len(), d], std),
                    true,
                )?),
            )
        } else {
            (None, None)
        };
        let ffn = config.ffn_width();
        let blocks = (0..config.layers)
            .map(|i| {
                let p = format!("{prefix}.block{i}");
                Ok(Block {
                    attn_norm: LayerNorm::new(store, &format!("{p}.attn_norm"), d)?,
                    attn: MultiHeadAttention::new(store, &format!("{p}.attn"), d, config.heads, config.dropout, rng)?,
                    ffn_norm: LayerNorm::new(store, &format!("{p}.ffn_norm"), d)?,
                    ffn_in: Linear::new(store, &format!("{p}.ffn_in"), d, ffn, true, rng)?,
                    ffn_out: Linear::new(store, &format!("{p}.ffn_out"), ffn, d, true, rng)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            layout: layout.clone(),
            token_dim: d,
            num_weight,
            num_bias,
            cat_table,
            cat_bias,
            cat_offsets,
            blocks,
            dropout: config.dropout,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.layout.n_features() * self.token_dim
    }

    /// Category index of every `(row, group)` from the one-hot columns.
    fn category_indices<T: Scalar>(&self, x: &crate::tensor::Tensor<T>) -> Result<Vec<usize>> {
        let (b, width) = x.dims2()?;
        let mut idx = Vec::with_capacity(b * self.layout.groups.len());
        for r in 0..b {
            let row = &x.data()[r * width..(r + 1) * width];
            for (g, off) in self.layout.groups.iter().zip(&self.cat_offsets) {
                let cols = &row[g.columns()];
                let mut best = 0;
                for (j, v) in cols.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(Error::Schema(format!("non-finite value in group `{}`", g.name)));
                    }
                    if *v > cols[best] {
                        best = j;
                    }
                }
                idx.push(off + best);
            }
        }
        Ok(idx)
    }

    /// `[b, n_features, token_dim]` tokens: numeric features first, then one
    /// token per categorical group.
    pub fn tokenize<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let b = x.shape()[0];
        let d = self.token_dim;
        let mut parts = Vec::with_capacity(2);
        if let (Some(w), Some(bias)) = (self.num_weight, self.num_bias) {
            let n = self.layout.numeric.len();
            let xs = x.index_select(1, &self.layout.numeric)?.reshape(vec![b, n, 1])?;
            parts.push(xs.mul(ctx.var(w))?.add(ctx.var(bias))?);
        }
        if let (Some(table), Some(bias)) = (self.cat_table, self.cat_bias) {
            let n = self.layout.groups.len();
            let idx = self.category_indices(&x.value())?;
            let emb = ctx.var(table).index_select(0, &idx)?.reshape(vec![b, n, d])?;
            parts.push(emb.add(ctx.var(bias))?);
        }
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            concat(&parts, 1)
        }
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let b = x.shape()[0];
        let mut h = self.tokenize(ctx, x)?;
        let n = h.shape()[1];
        let d = self.token_dim;
        for block in &self.blocks {
            let a = block.attn.forward(ctx, block.attn_norm.forward(ctx, h)?)?;
            h = h.add(a)?;
            let z = block.ffn_norm.forward(ctx, h)?.reshape(vec![b * n, d])?;
            let z = dropout(ctx, block.ffn_in.forward(ctx, z)?.gelu(), self.dropout)?;
            let z = block.ffn_out.forward(ctx, z)?.reshape(vec![b, n, d])?;
            h = h.add(z)?;
        }
        h.reshape(vec![b, n * d])
    }
}
