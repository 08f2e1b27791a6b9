use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors of one network. Buffers (running statistics) live
/// here too, flagged non-trainable.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Scalar> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    trainable: Vec<bool>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            trainable: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        self.trainable.push(trainable);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::Shape {
                op: "set_param",
                detail: format!(
                    "`{}` has shape {:?}, got {:?}",
                    self.names[id.0],
                    self.values[id.0].shape(),
                    value.shape()
                ),
            });
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|id| self.trainable[id.0])
    }

    /// Total number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.trainable_ids().map(|id| self.values[id.0].len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            trainable: self.trainable.clone(),
            index: self.index.clone(),
        }
    }
}

/// Uniform `U(-bound, bound)` tensor.
pub fn uniform<T: Scalar>(rng: &mut Rng, shape: Vec<usize>, bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..=bound)))
}

/// `N(0, std²)` tensor.
pub fn normal<T: Scalar>(rng: &mut Rng, shape: Vec<usize>, std: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(std * rng::normal(rng)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Gradients keyed by parameter.
pub type Grads<T> = HashMap<ParamId, Tensor<T>>;

/// One forward pass over a [`ParamStore`]: binds parameters onto a tape on
/// first use, carries the train/eval mode and dropout randomness, and queues
/// running-statistic updates until the caller applies them.
pub struct Ctx<'t, 'p, T: Scalar> {
    pub tape: &'t Tape<T>,
    store: &'p ParamStore<T>,
    bound: RefCell<Vec<Option<Var<'t, T>>>>,
    mode: Mode,
    frozen: bool,
    rng: RefCell<Rng>,
    pending: RefCell<HashMap<ParamId, Tensor<T>>>,
}

impl<'t, 'p, T: Scalar> Ctx<'t, 'p, T> {
    pub fn new(tape: &'t Tape<T>, store: &'p ParamStore<T>, mode: Mode, seed: u64) -> Self {
        Self {
            tape,
            store,
            bound: RefCell::new(vec![None; store.len()]),
            mode,
            frozen: false,
            rng: RefCell::new(rng::stream(seed, "dropout")),
            pending: RefCell::new(HashMap::new()),
        }
    }

    /// Parameters enter the tape as constants: no gradients are produced.
    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.store
    }

    pub fn with_rng<R>(&self, f: impl FnOnce(&mut Rng) -> R) -> R {
        f(&mut self.rng.borrow_mut())
    }

    /// Tape handle for a parameter.
    pub fn var(&self, id: ParamId) -> Var<'t, T> {
        if let Some(v) = self.bound.borrow()[id.0] {
            return v;
        }
        let value = self.store.get(id).clone();
        let v = if self.store.is_trainable(id) && !self.frozen {
            self.tape.param(value)
        } else {
            self.tape.constant(value)
        };
        self.bound.borrow_mut()[id.0] = Some(v);
        v
    }

    /// Current value of a buffer, including updates queued in this pass.
    pub fn buffer(&self, id: ParamId) -> Tensor<T> {
        match self.pending.borrow().get(&id) {
            Some(t) => t.clone(),
            None => self.store.get(id).clone(),
        }
    }

    pub fn queue_update(&self, id: ParamId, value: Tensor<T>) {
        self.pending.borrow_mut().insert(id, value);
    }

    /// Buffer updates to write back once the step is done.
    pub fn take_updates(&self) -> Vec<(ParamId, Tensor<T>)> {
        let mut v: Vec<_> = self.pending.borrow_mut().drain().collect();
        v.sort_by_key(|(id, _)| *id);
        v
    }

    /// Gradients of every trainable parameter bound in this pass that is
    /// connected to the loss.
    pub fn grads(&self) -> Grads<T> {
        let mut out = HashMap::new();
        for (i, v) in self.bound.borrow().iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = v.grad() {
                    out.insert(ParamId(i), g);
                }
            }
        }
        out
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn apply_updates(&mut self, updates: Vec<(ParamId, Tensor<T>)>) -> Result<()> {
        for (id, v) in updates {
            self.set(id, v)?;
        }
        Ok(())
    }
}
