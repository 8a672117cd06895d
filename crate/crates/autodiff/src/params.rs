//! Named parameter storage.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Tensor,
    #[serde(default)]
    pub frozen: bool,
}

/// Parameters keyed by dotted path (`es.gru.w_z`). Iteration order is the
/// lexicographic path order, which keeps every reduction over parameters
/// deterministic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(
            name.into(),
            Param {
                value,
                frozen: false,
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Records the named parameter on `g` as a leaf.
    pub fn bind(&self, g: &mut Graph, name: &str) -> Result<Var> {
        let p = self
            .params
            .get(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?;
        Ok(g.param(name, p.value.clone(), !p.frozen))
    }

    /// Uniform Glorot initialization of an `out x inp` weight.
    pub fn init_weight(&mut self, name: &str, out: usize, inp: usize, rng: &mut impl Rng) {
        let a = (6.0 / (inp + out) as f64).sqrt();
        let data = (0..out * inp).map(|_| rng.gen_range(-a..=a)).collect();
        self.insert(name, Tensor::matrix(out, inp, data));
    }

    pub fn init_bias(&mut self, name: &str, n: usize) {
        self.insert(name, Tensor::zeros(&[1, n]));
    }

    /// Sets every parameter whose path starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.value.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    pub fn freeze_prefix(&mut self, prefix: &str) {
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.frozen = true;
            }
        }
    }

    /// Copies every parameter of `other` into `self`, replacing same-named ones.
    pub fn extend(&mut self, other: ParamStore) {
        self.params.extend(other.params);
    }
}
