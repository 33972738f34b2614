use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

use super::tensor::{Scalar, Tensor2};

/// One named parameter with its gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor2<T>,
    pub grad: Tensor2<T>,
    /// 1 for vectors (stored as `1 x n`), 2 for matrices.
    pub rank: u32,
}

/// Named parameters, iterated in lexicographic name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2<T>, rank: u32) {
        let grad = Tensor2::zeros(value.rows, value.cols);
        self.params.insert(name.into(), Param { value, grad, rank });
    }

    /// Matrix initialized from a truncated normal with standard deviation `std`.
    pub fn insert_normal(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut SeededRng) {
        let t = Tensor2::from_fn(rows, cols, |_, _| T::c(std * rng.truncated_normal()));
        self.insert(name, t, 2);
    }

    pub fn insert_vector(&mut self, name: &str, len: usize, fill: f64) {
        self.insert(name, Tensor2::filled(1, len, T::c(fill)), 1);
    }

    /// Panics if `name` was never registered; layer wiring is static.
    pub fn value(&self, name: &str) -> &Tensor2<T> {
        match self.params.get(name) {
            Some(p) => &p.value,
            None => panic!("parameter {name:?} is not registered"),
        }
    }

    pub fn value_mut(&mut self, name: &str) -> &mut Tensor2<T> {
        match self.params.get_mut(name) {
            Some(p) => &mut p.value,
            None => panic!("parameter {name:?} is not registered"),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param<T>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Add `grads` into the gradient slots.
    pub fn accumulate(&mut self, grads: &Grads<T>) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::ShapeMismatch(format!("gradient for unknown parameter {name}")))?;
            p.grad.add_assign(g)?;
        }
        Ok(())
    }

    pub fn grads(&self) -> Grads<T> {
        let mut g = Grads::new();
        for (name, p) in &self.params {
            g.map.insert(name.clone(), p.grad.clone());
        }
        g
    }

    /// Replace values with `other`'s, requiring identical names and shapes.
    pub fn load_values(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters, source has {}",
                self.len(),
                other.len()
            )));
        }
        for (name, p) in self.params.iter_mut() {
            let src = other
                .get(name)
                .ok_or_else(|| Error::ShapeMismatch(format!("missing parameter {name}")))?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: {:?} vs {:?}",
                    p.value.shape(),
                    src.value.shape()
                )));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, p) in &self.params {
            out.params.insert(
                name.clone(),
                Param {
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    rank: p.rank,
                },
            );
        }
        out
    }
}

/// Gradient buffer keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Grads<T> {
    map: BTreeMap<String, Tensor2<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn new() -> Self {
        Self { map: BTreeMap::new() }
    }

    pub fn add(&mut self, name: &str, delta: &Tensor2<T>) {
        match self.map.get_mut(name) {
            Some(g) => g
                .add_assign(delta)
                .unwrap_or_else(|e| panic!("gradient shape for {name}: {e}")),
            None => {
                self.map.insert(name.to_string(), delta.clone());
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor2<T>> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor2<T>)> {
        self.map.iter()
    }

    /// `self += other`, in name order.
    pub fn merge(&mut self, other: &Grads<T>) {
        for (name, g) in other.iter() {
            self.add(name, g);
        }
    }

    pub fn scale(&mut self, s: T) {
        self.map.values_mut().for_each(|g| g.scale(s));
    }

    pub fn first_non_finite(&self) -> Option<&str> {
        self.map.iter().find(|(_, g)| !g.is_finite()).map(|(n, _)| n.as_str())
    }
}
