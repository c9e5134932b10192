//! Named trainable parameters.
//!
//! A [`ParamSet`] owns the numeric state of a model between forward passes.
//! Each forward binds the set into a fresh [`Graph`] as trainable leaves,
//! yielding a [`BoundParams`] lookup from name to [`Var`].

use std::collections::HashMap;

use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

/// Insertion-ordered registry of uniquely named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.by_name.contains_key(name) {
            return Err(CoreError::InvalidArgument(format!(
                "duplicate parameter name {name:?}"
            )));
        }
        self.by_name.insert(name.to_string(), self.entries.len());
        self.entries.push(Parameter {
            name: name.to_string(),
            value,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar elements across all parameters.
    pub fn total_elems(&self) -> usize {
        self.entries.iter().map(|p| p.value.numel()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name).map(|&i| &self.entries[i].value)
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let idx = *self.by_name.get(name).ok_or_else(|| {
            CoreError::InvalidArgument(format!("unknown parameter {name:?}"))
        })?;
        if self.entries[idx].value.shape() != value.shape() {
            return Err(CoreError::ShapeMismatch(format!(
                "parameter {name:?}: {:?} vs {:?}",
                self.entries[idx].value.shape(),
                value.shape()
            )));
        }
        self.entries[idx].value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.entries.iter()
    }

    /// Parameter at registry position `idx` (insertion order).
    pub fn entry(&self, idx: usize) -> &Parameter {
        &self.entries[idx]
    }

    /// Replace the value at registry position `idx`; the shape must match.
    pub fn set_by_index(&mut self, idx: usize, value: Tensor) -> Result<()> {
        if self.entries[idx].value.shape() != value.shape() {
            return Err(CoreError::ShapeMismatch(format!(
                "parameter {:?}: {:?} vs {:?}",
                self.entries[idx].name,
                self.entries[idx].value.shape(),
                value.shape()
            )));
        }
        self.entries[idx].value = value;
        Ok(())
    }

    pub(crate) fn nudge(&mut self, param_idx: usize, elem_idx: usize, delta: f64) {
        self.entries[param_idx].value.data_mut()[elem_idx] += delta;
    }

    /// Insert every parameter into `g` as a trainable leaf, in registry order.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let mut vars = Vec::with_capacity(self.entries.len());
        let mut by_name = HashMap::with_capacity(self.entries.len());
        for (i, p) in self.entries.iter().enumerate() {
            vars.push(g.leaf(p.value.clone()));
            by_name.insert(p.name.clone(), i);
        }
        BoundParams { vars, by_name }
    }
}

/// Per-graph handles for a bound [`ParamSet`].
pub struct BoundParams {
    vars: Vec<Var>,
    by_name: HashMap<String, usize>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.by_name
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| CoreError::InvalidArgument(format!("unbound parameter {name:?}")))
    }

    /// Vars in registry order, parallel to `ParamSet::iter`.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_names() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(ps.add("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn bind_preserves_order_and_values() {
        let mut ps = ParamSet::new();
        ps.add("a", Tensor::scalar(1.0)).unwrap();
        ps.add("b", Tensor::scalar(2.0)).unwrap();
        let mut g = Graph::new();
        let bound = ps.bind(&mut g);
        assert_eq!(g.value(bound.var("a").unwrap()).data(), &[1.0]);
        assert_eq!(g.value(bound.var("b").unwrap()).data(), &[2.0]);
        assert_eq!(bound.vars().len(), 2);
        assert_eq!(ps.total_elems(), 2);
    }
}
