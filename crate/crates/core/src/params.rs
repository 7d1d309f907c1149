//! Named parameter storage partitioned into groups.
//!
//! A parameter is addressed as `group/name`, e.g. `encoder.blocks/0.attn.wq`.
//! Groups are the unit of freezing and of checkpoint serialisation.

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{cast, Graph, Gradients, NodeId, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    params: BTreeMap<String, Array2<S>>,
}

impl<S> Default for ParamStore<S> {
    fn default() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }
}

/// Group part of a parameter key.
pub fn group_of(key: &str) -> &str {
    key.split_once('/').map_or(key, |(g, _)| g)
}

pub fn key(group: &str, name: &str) -> String {
    format!("{group}/{name}")
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, value: Array2<S>) {
        self.params.insert(key.into(), value);
    }

    pub fn get(&self, key: &str) -> Result<&Array2<S>> {
        self.params
            .get(key)
            .ok_or_else(|| Error::MissingGroup(key.to_string()))
    }

    pub fn get_mut(&mut self, key: &str) -> Result<&mut Array2<S>> {
        self.params
            .get_mut(key)
            .ok_or_else(|| Error::MissingGroup(key.to_string()))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.params.contains_key(key)
    }

    pub fn remove_group(&mut self, group: &str) {
        self.params.retain(|k, _| group_of(k) != group);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<S>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array2<S>)> {
        self.params.iter_mut()
    }

    /// Sorted, de-duplicated group names.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = self.params.keys().map(|k| group_of(k).to_string()).collect();
        out.dedup();
        out
    }

    /// Parameters of one group, in key order.
    pub fn group(&self, group: &str) -> Vec<(&String, &Array2<S>)> {
        self.params
            .iter()
            .filter(|(k, _)| group_of(k) == group)
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|a| a.len()).sum()
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.mapv(|x| cast::<T>(x.to_f64().unwrap_or(0.0)))))
                .collect(),
        }
    }
}

/// Draws an `rows x cols` matrix from N(0, std²).
pub fn normal_matrix<S: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Array2<S> {
    let dist = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_fn((rows, cols), |_| cast::<S>(dist.sample(rng)))
}

/// Binds parameters from a store onto a graph, creating each leaf once.
pub struct Binder<'a, S: Scalar> {
    store: &'a ParamStore<S>,
    trainable: &'a dyn Fn(&str) -> bool,
    bound: HashMap<String, NodeId>,
}

impl<'a, S: Scalar> Binder<'a, S> {
    pub fn new(store: &'a ParamStore<S>, trainable: &'a dyn Fn(&str) -> bool) -> Self {
        Self {
            store,
            trainable,
            bound: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore<S> {
        self.store
    }

    pub fn has(&self, key: &str) -> bool {
        self.store.contains(key)
    }

    pub fn get(&mut self, g: &mut Graph<S>, key: &str) -> Result<NodeId> {
        if let Some(id) = self.bound.get(key) {
            return Ok(*id);
        }
        let value = self.store.get(key)?.clone();
        let id = g.leaf(value, (self.trainable)(group_of(key)));
        self.bound.insert(key.to_string(), id);
        Ok(id)
    }

    /// Gradients of every bound trainable parameter.
    pub fn collect(&self, grads: &mut Gradients<S>) -> Vec<(String, Array2<S>)> {
        let mut out: Vec<(String, Array2<S>)> = self
            .bound
            .iter()
            .filter_map(|(k, id)| grads.take(*id).map(|g| (k.clone(), g)))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }
}

/// Always-false trainability predicate for inference passes.
pub fn frozen(_: &str) -> bool {
    false
}
