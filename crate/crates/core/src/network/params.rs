//! Named parameter tensors.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Parameters keyed by dotted name (`submodel.layer.kind`), iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor<f32>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.tensors.insert(name.into(), t.with_requires_grad(false));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.tensors.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<f32>)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn numel_with_prefix(&self, prefix: &str) -> usize {
        self.tensors.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, t)| t.numel()).sum()
    }

    /// Replaces every tensor with the one of the same name in `other`; shapes must agree.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, t) in &mut self.tensors {
            let src = other.get(name).ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::Invalid(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            *t = src.clone();
        }
        if let Some(extra) = other.names().find(|n| !self.tensors.contains_key(*n)) {
            return Err(Error::Invalid(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }

    /// Adds every parameter to `graph`. Names for which `trainable` holds
    /// become variables, the rest constants.
    pub fn bind(&self, graph: &mut Graph<f32>, trainable: impl Fn(&str) -> bool) -> Result<Bound> {
        let mut ids = BTreeMap::new();
        for (name, t) in &self.tensors {
            let id = if trainable(name) { graph.variable(t.clone())? } else { graph.constant(t.clone())? };
            ids.insert(name.clone(), id);
        }
        Ok(Bound { ids })
    }
}

/// Parameter name to graph node.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    ids: BTreeMap<String, NodeId>,
}

impl Bound {
    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.ids.get(name).copied().ok_or_else(|| Error::Invalid(format!("parameter {name} not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &NodeId)> {
        self.ids.iter()
    }

    pub fn names(&self) -> Vec<&String> {
        self.ids.keys().collect()
    }
}
