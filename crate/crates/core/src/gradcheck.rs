//! Central finite-difference gradient checking.

use rand::Rng as _;

use crate::error::Result;
use crate::nn::{Ctx, Mode, ParamStore};
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};

/// Compares the tape gradient of `f` against central differences at `inputs`.
///
/// `f` builds a scalar from the given leaves. Returns the largest relative
/// error `|a - n| / max(1, |a|, |n|)` over every input entry.
pub fn max_relative_error<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let loss = f(&tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(v.shape())))
        .collect();

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        Ok(f(&tape, &vars)?.value().item())
    };

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let x0 = input.data()[i];
            probe[k].data_mut()[i] = x0 + h;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = x0 - h;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[k].data()[i];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Finite-difference check through a parameter store.
///
/// Perturbs every entry of `inputs` and up to `per_tensor` randomly chosen
/// entries of each trainable parameter. Every evaluation builds a fresh
/// [`Ctx`] with the same `mode` and dropout `seed`, so stochastic layers see
/// identical masks.
pub fn max_relative_error_params<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    mode: Mode,
    h: f64,
    per_tensor: usize,
    seed: u64,
    f: F,
) -> Result<f64>
where
    F: for<'t, 'p> Fn(&Ctx<'t, 'p, f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store, mode, seed);
    let vars: Vec<_> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let loss = f(&ctx, &vars)?;
    tape.backward(loss)?;
    let param_grads = ctx.grads();
    let input_grads: Vec<Tensor<f64>> = vars
        .iter()
        .map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(v.shape())))
        .collect();

    let eval = |s: &ParamStore<f64>, xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, s, mode, seed);
        let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        Ok(f(&ctx, &vars)?.value().item())
    };
    let rel = |a: f64, n: f64| (a - n).abs() / 1f64.max(a.abs()).max(n.abs());

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let x0 = input.data()[i];
            probe[k].data_mut()[i] = x0 + h;
            let up = eval(store, &probe)?;
            probe[k].data_mut()[i] = x0 - h;
            let down = eval(store, &probe)?;
            probe[k].data_mut()[i] = x0;
            worst = worst.max(rel(input_grads[k].data()[i], (up - down) / (2.0 * h)));
        }
    }

    let mut rng = rng::stream(seed, "gradcheck");
    let mut scratch = store.clone();
    for id in store.trainable_ids() {
        let n = store.get(id).len();
        let picks: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..n)).collect()
        };
        let zeros;
        let grad = match param_grads.get(&id) {
            Some(g) => g,
            None => {
                zeros = Tensor::zeros(store.get(id).shape().to_vec());
                &zeros
            }
        };
        for i in picks {
            let x0 = store.get(id).data()[i];
            scratch.get_mut(id).data_mut()[i] = x0 + h;
            let up = eval(&scratch, inputs)?;
            scratch.get_mut(id).data_mut()[i] = x0 - h;
            let down = eval(&scratch, inputs)?;
            scratch.get_mut(id).data_mut()[i] = x0;
            worst = worst.max(rel(grad.data()[i], (up - down) / (2.0 * h)));
        }
    }
    Ok(worst)
}
