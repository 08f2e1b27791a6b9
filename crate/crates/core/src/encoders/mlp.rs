use crate::error::Result;
use crate::nn::{BatchNorm, Ctx, Linear, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Var;

/// Four fully connected layers `d → h → h → h → h`; the first three are
/// followed by batch normalization and ReLU.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub input_width: usize,
    pub layers: Vec<Linear>,
    pub norms: Vec<BatchNorm>,
}

impl Mlp {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_width: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(4);
        let mut norms = Vec::with_capacity(3);
        for i in 0..4 {
            let fan_in = if i == 0 { input_width } else { hidden };
            layers.push(Linear::new(
                store,
                &format!("{prefix}.fc{i}"),
                fan_in,
                hidden,
                true,
                rng,
            )?);
            if i < 3 {
                norms.push(BatchNorm::new(store, &format!("{prefix}.bn{i}"), hidden)?);
            }
        }
        Ok(Self {
            input_width,
            layers,
            norms,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.layers[3].fan_out
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(ctx, h)?;
            if let Some(bn) = self.norms.get(i) {
                h = bn.forward(ctx, h)?.relu();
            }
        }
        Ok(h)
    }
}
