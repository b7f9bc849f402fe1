use std::collections::BTreeMap;

use rand::Rng;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Named trainable tensors with one gradient slot each.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T: Real = f32> {
    params: BTreeMap<String, Tensor<T>>,
    grads: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
            grads: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        self.grads.insert(name.clone(), Tensor::zeros(value.shape()));
        self.params.insert(name, value);
        Ok(())
    }

    /// Replaces the value of an existing parameter with one of the same shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "{name}: stored {:?}, new {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor<T>> {
        self.grads.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &Tensor<T>) -> Result<()> {
        let slot = self
            .grads
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        if slot.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient for {name}: expected {:?}, got {:?}",
                slot.shape(),
                g.shape()
            )));
        }
        slot.add_assign(g);
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            grads: self.grads.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Copies the parameters whose names start with `prefix` from `other`.
    pub fn copy_prefix_from(&mut self, other: &ParamStore<T>, prefix: &str) -> Result<()> {
        for (name, value) in other.params.iter().filter(|(k, _)| k.starts_with(prefix)) {
            self.set(name, value.clone())?;
        }
        Ok(())
    }
}

/// Glorot/Xavier uniform initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::c(rng.gen_range(-limit..=limit))).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// RMSprop with a per-parameter running mean of squared gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Rmsprop<T: Real = f32> {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    acc: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Default for Rmsprop<T> {
    fn default() -> Self {
        Self::new(1e-3)
    }
}

impl<T: Real> Rmsprop<T> {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            rho: 0.9,
            epsilon: 1e-8,
            acc: BTreeMap::new(),
        }
    }

    pub fn accumulator(&self, name: &str) -> Option<&Tensor<T>> {
        self.acc.get(name)
    }

    /// Updates every parameter from its gradient slot, then clears the slots.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        let (lr, rho, eps) = (T::c(self.learning_rate), T::c(self.rho), T::c(self.epsilon));
        for (name, p) in store.params.iter_mut() {
            let g = &store.grads[name];
            let acc = self
                .acc
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            for ((pv, av), &gv) in p.data_mut().iter_mut().zip(acc.data_mut()).zip(g.data()) {
                *av = rho * *av + (T::one() - rho) * gv * gv;
                *pv = *pv - lr * gv / (av.sqrt() + eps);
            }
        }
        store.zero_grads();
    }
}
