use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::params::{Grads, ParamId, ParamStore};

/// Adam with bias correction, one instance per parameter store.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: HashMap<ParamId, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Whether moment estimates exist for `id`.
    pub fn tracks(&self, id: ParamId) -> bool {
        self.moments.contains_key(&id)
    }

    pub fn tracked(&self) -> usize {
        self.moments.len()
    }

    /// Updates every trainable parameter of `store`; each must have a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>) -> Result<()> {
        let ids: Vec<ParamId> = store.trainable_ids().collect();
        for &id in &ids {
            match grads.get(&id) {
                None => return Err(Error::Optimizer(format!("missing gradient for `{}`", store.name(id)))),
                Some(g) if g.shape() != store.get(id).shape() => {
                    return Err(Error::Optimizer(format!(
                        "gradient shape {:?} does not match `{}` {:?}",
                        g.shape(),
                        store.name(id),
                        store.get(id).shape()
                    )))
                }
                Some(_) => {}
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(t));
        let c2 = T::of(1.0 - self.beta2.powi(t));
        let lr = T::of(self.lr);
        let eps = T::of(self.eps);
        let one = T::one();
        for id in ids {
            let g = &grads[&id];
            let (m, v) = self
                .moments
                .entry(id)
                .or_insert_with(|| (Tensor::zeros(g.shape().to_vec()), Tensor::zeros(g.shape().to_vec())));
            let param = store.get_mut(id);
            for (((p, &gi), mi), vi) in param
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
