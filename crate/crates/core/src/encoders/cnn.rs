use crate::error::{Error, Result};
use crate::nn::{maxpool_1xk, Conv1xW, Ctx, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Var;

#[derive(Clone, Copy, Debug)]
enum Stage {
    Conv(usize),
    Pool(usize),
}

const KERNEL: usize = 2;
const STACK: [Stage; 8] = [
    Stage::Conv(0),
    Stage::Conv(1),
    Stage::Conv(2),
    Stage::Pool(3),
    Stage::Conv(3),
    Stage::Pool(2),
    Stage::Conv(4),
    Stage::Pool(4),
];

/// `(layer name, width, channels)` after every stage of the stack.
pub fn cnn_shapes(input_width: usize, channels: &[usize; 5]) -> Result<Vec<(String, usize, usize)>> {
    let mut width = input_width;
    let mut ch = 1;
    let mut conv = 0;
    let mut pool = 0;
    let mut out = Vec::with_capacity(STACK.len());
    for stage in STACK {
        let name = match stage {
            Stage::Conv(i) => {
                conv += 1;
                if width < KERNEL {
                    return Err(Error::Shape {
                        op: "cnn",
                        detail: format!("conv{conv} needs width >= {KERNEL}, got {width}"),
                    });
                }
                width -= KERNEL - 1;
                ch = channels[i];
                format!("conv{conv}")
            }
            Stage::Pool(k) => {
                pool += 1;
                if width < k {
                    return Err(Error::Shape {
                        op: "cnn",
                        detail: format!("pool{pool} needs width >= {k}, got {width}"),
                    });
                }
                width /= k;
                format!("pool{pool}")
            }
        };
        out.push((name, width, ch));
    }
    Ok(out)
}

/// Smallest input width that survives the whole stack.
pub fn cnn_min_width() -> usize {
    let channels = [1; 5];
    (1..)
        .find(|&d| cnn_shapes(d, &channels).is_ok())
        .expect("some width fits")
}

/// Convolutional encoder over a sample reshaped to `1 × d × 1`.
#[derive(Clone, Debug)]
pub struct Cnn {
    pub input_width: usize,
    pub convs: Vec<Conv1xW>,
    output_dim: usize,
}

impl Cnn {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_width: usize,
        channels: &[usize; 5],
        rng: &mut Rng,
    ) -> Result<Self> {
        let shapes = cnn_shapes(input_width, channels)?;
        let (_, w, c) = shapes.last().expect("non-empty stack");
        let mut convs = Vec::with_capacity(5);
        let mut c_in = 1;
        for (i, &c_out) in channels.iter().enumerate() {
            convs.push(Conv1xW::new(
                store,
                &format!("{prefix}.conv{i}"),
                c_in,
                c_out,
                KERNEL,
                rng,
            )?);
            c_in = c_out;
        }
        Ok(Self {
            input_width,
            convs,
            output_dim: w * c,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Feature maps `[b, C, 1, W]` after every stage, for shape inspection.
    pub fn trace<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        let b = x.shape()[0];
        let mut h = x.reshape(vec![b, 1, 1, self.input_width])?;
        let mut maps = Vec::with_capacity(STACK.len());
        for stage in STACK {
            h = match stage {
                Stage::Conv(i) => self.convs[i].forward(ctx, h)?.relu(),
                Stage::Pool(k) => maxpool_1xk(h, k)?,
            };
            maps.push(h);
        }
        Ok(maps)
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let b = x.shape()[0];
        let last = *self.trace(ctx, x)?.last().expect("non-empty stack");
        // [b, C, 1, W] → [b, W, C] so the flattened order is width-major,
        // matching the `1 × W × C` layout.
        last.reshape(vec![b, self.convs[4].c_out, last.shape()[3]])?
            .permute(&[0, 2, 1])?
            .reshape(vec![b, self.output_dim])
    }
}
