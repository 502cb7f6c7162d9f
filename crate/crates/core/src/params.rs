//! Named parameter registry and the per-forward binding of parameters to a tape.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Index of a parameter in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Flat parameter registry with unique, stable names.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Arc<Tensor<T>>>,
    index: HashMap<String, usize>,
    /// Set for shape-only stores, whose values are all this placeholder.
    placeholder: Option<Arc<Tensor<T>>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), shapes: Vec::new(), values: Vec::new(), index: HashMap::new(), placeholder: None }
    }

    /// A store that records names and shapes without allocating values.
    /// Useful for counting parameters of very large networks; it cannot be
    /// used for a forward pass.
    pub fn shapes_only() -> Self {
        Self { placeholder: Some(Arc::new(Tensor::zeros([1]))), ..Self::new() }
    }

    pub fn is_shapes_only(&self) -> bool {
        self.placeholder.is_some()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let shape = value.shape().to_vec();
        let value = match &self.placeholder {
            Some(p) => p.clone(),
            None => Arc::new(value),
        };
        self.insert_arc(name.into(), shape, value)
    }

    pub(crate) fn insert_shape(&mut self, name: String, shape: Vec<usize>) -> Result<ParamId> {
        let p = self.placeholder.clone().expect("shape-only store");
        self.insert_arc(name, shape, p)
    }

    fn insert_arc(&mut self, name: String, shape: Vec<usize>, value: Arc<Tensor<T>>) -> Result<ParamId> {
        if self.index.contains_key(&name) {
            return Err(Error::InvalidSpec(format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.shapes.push(shape);
        self.values.push(value);
        Ok(ParamId(self.names.len() - 1))
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.shapes[id.0] {
            return Err(Error::shape("param set", format!("{:?} -> {:?}", self.shapes[id.0], value.shape())));
        }
        self.values[id.0] = Arc::new(value);
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.shapes.iter().map(|s| s.iter().product::<usize>()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            values: self.values.iter().map(|v| Arc::new(v.cast())).collect(),
            index: self.index.clone(),
            placeholder: self.placeholder.as_ref().map(|p| Arc::new(p.cast())),
        }
    }
}

/// Binds a [`ParamStore`] to one [`Tape`] for a forward pass. Each parameter
/// becomes a single leaf the first time it is used.
pub struct Ctx<'t, T> {
    tape: &'t Tape<T>,
    /// Snapshot of the store's values, so the store need not outlive the tape.
    values: Vec<Arc<Tensor<T>>>,
    bound: RefCell<Vec<Option<usize>>>,
    train: bool,
}

impl<'t, T: Real> Ctx<'t, T> {
    pub fn new(tape: &'t Tape<T>, store: &ParamStore<T>, train: bool) -> Self {
        assert!(!store.is_shapes_only(), "a shape-only parameter store cannot run a forward pass");
        Self { tape, values: store.values.clone(), bound: RefCell::new(vec![None; store.len()]), train }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn param(&self, id: ParamId) -> Var<'t, T> {
        let mut bound = self.bound.borrow_mut();
        if let Some(node) = bound[id.0] {
            return self.leaf_var(node);
        }
        let v = self.tape.leaf_shared(self.values[id.0].clone(), self.train);
        bound[id.0] = Some(v.id());
        v
    }

    fn leaf_var(&self, node: usize) -> Var<'t, T> {
        // re-materialize a handle for an existing node
        crate::autodiff::var_from_id(self.tape, node)
    }

    pub fn constant(&self, t: Tensor<T>) -> Var<'t, T> {
        self.tape.constant(t)
    }

    /// Gradients for every parameter used in this pass, indexed by [`ParamId`].
    pub fn param_grads(&self, mut grads: Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.bound.borrow().iter().map(|b| b.and_then(|node| grads.take_id(node))).collect()
    }
}

/// Creates parameters under a hierarchical name prefix.
pub struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Real> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    /// A builder whose names are prefixed with `name.`.
    pub fn sub(&mut self, name: impl std::fmt::Display) -> Builder<'_, T> {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{}", self.prefix, name) };
        Builder { store: self.store, rng: self.rng, prefix }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        let full = self.full_name(name);
        self.store.insert(full, value)
    }

    /// True when building into a [`ParamStore::shapes_only`] store.
    pub fn shapes_only(&self) -> bool {
        self.store.is_shapes_only()
    }

    fn add_shape(&mut self, name: &str, shape: Vec<usize>) -> Result<ParamId> {
        let full = self.full_name(name);
        self.store.insert_shape(full, shape)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    /// Kaiming-uniform: U(-b, b) with b = sqrt(6 / fan_in) / sqrt(1 + a^2), a = sqrt(5).
    pub fn kaiming_uniform(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) -> Result<ParamId> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.uniform(name, shape, bound)
    }

    pub fn uniform(&mut self, name: &str, shape: Vec<usize>, bound: f64) -> Result<ParamId> {
        if self.shapes_only() {
            return self.add_shape(name, shape);
        }
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n).map(|_| T::of(self.rng.gen_range(-bound..=bound))).collect();
        self.add(name, Tensor::new(shape, data)?)
    }

    pub fn zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<ParamId> {
        if self.shapes_only() {
            return self.add_shape(name, shape);
        }
        self.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: Vec<usize>) -> Result<ParamId> {
        if self.shapes_only() {
            return self.add_shape(name, shape);
        }
        self.add(name, Tensor::ones(shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn names_are_unique_and_prefixed() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = Builder::new(&mut store, &mut rng);
        let mut enc = b.sub("enc");
        enc.sub(0).zeros("w", vec![2]).unwrap();
        assert!(enc.sub(0).zeros("w", vec![2]).is_err());
        assert_eq!(store.names(), &["enc.0.w".to_string()]);
    }

    #[test]
    fn param_bound_once_per_tape() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", Tensor::ones([2])).unwrap();
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, true);
        let a = ctx.param(id);
        let b = ctx.param(id);
        assert_eq!(a.id(), b.id());
        let loss = a.mul(b).unwrap().sum().unwrap();
        let grads = ctx.param_grads(tape.backward(loss).unwrap());
        assert_eq!(grads[0].as_ref().unwrap().data(), &[2.0, 2.0]);
    }
}
