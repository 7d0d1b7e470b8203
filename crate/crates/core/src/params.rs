//! Named parameter storage and its binding onto a tape.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::numerics::{Gradients, NodeId, RngStream, Tape, Tensor};

/// Ordered map from parameter name to tensor. Iteration order is insertion
/// order and defines checkpoint layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter {name}")));
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    /// Weight matrix uniform in `[-scale, scale]`.
    pub fn insert_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        scale: f64,
        rng: &mut RngStream,
    ) -> Result<()> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform_range(-scale, scale)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.values_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn size(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Zero every tensor whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (k, v) in self.tensors.iter_mut() {
            if k.starts_with(prefix) {
                v.data_mut().fill(0.0);
            }
        }
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape()))).collect(),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> Binding {
        Binding {
            ids: self.tensors.iter().map(|(k, v)| (k.clone(), tape.leaf(v.clone()))).collect(),
        }
    }
}

/// Tape nodes holding one [`ParamSet`]'s values.
#[derive(Clone, Debug)]
pub struct Binding {
    ids: IndexMap<String, NodeId>,
}

impl Binding {
    /// Binding over nodes already on a tape, in [`ParamSet`] order.
    pub fn from_nodes(params: &ParamSet, ids: &[NodeId]) -> Result<Self> {
        if ids.len() != params.len() {
            return Err(Error::Invalid(format!("{} nodes for {} parameters", ids.len(), params.len())));
        }
        Ok(Self { ids: params.tensors.keys().cloned().zip(ids.iter().copied()).collect() })
    }

    pub fn node(&self, name: &str) -> Result<NodeId> {
        self.ids.get(name).copied().ok_or_else(|| Error::Invalid(format!("unknown parameter {name}")))
    }

    /// Gradients for every bound parameter, in [`ParamSet`] order.
    pub fn collect(&self, tape: &Tape, grads: &Gradients) -> ParamSet {
        ParamSet {
            tensors: self.ids.iter().map(|(k, &id)| (k.clone(), grads.get_or_zero(tape, id))).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.insert_zeros("a", &[2]).unwrap();
        assert!(p.insert_zeros("a", &[3]).is_err());
    }

    #[test]
    fn order_is_insertion_order() {
        let mut p = ParamSet::new();
        for name in ["z", "a", "m"] {
            p.insert_zeros(name, &[1]).unwrap();
        }
        let names: Vec<_> = p.iter().map(|(k, _)| k).collect();
        assert_eq!(names, ["z", "a", "m"]);
        assert_eq!(p.size(), 3);
    }
}
