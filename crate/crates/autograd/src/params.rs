use indexmap::IndexMap;

use crate::error::{Result, TensorError};
use crate::graph::{Gradients, Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// Named model parameters in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<F> {
    params: IndexMap<String, Tensor<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(TensorError::DuplicateParameter(name));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.params
            .get(name)
            .ok_or_else(|| TensorError::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| TensorError::MissingParameter(name.to_string()))
    }

    /// Replaces the value of an existing parameter, keeping its position.
    pub fn set(&mut self, name: &str, value: Tensor<F>) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "ParamStore::set",
                lhs: slot.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Parameters whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore<F> {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Places every parameter on `graph`; `trainable` selects which receive gradients.
    pub fn bind<'g>(&self, graph: &'g Graph<F>, trainable: impl Fn(&str) -> bool) -> Bound<'g, F> {
        Bound {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), graph.leaf(v.clone(), trainable(k))))
                .collect(),
        }
    }
}

/// Parameters placed on a graph.
pub struct Bound<'g, F: Real> {
    vars: IndexMap<String, Var<'g, F>>,
}

impl<'g, F: Real> Bound<'g, F> {
    pub fn var(&self, name: &str) -> Result<Var<'g, F>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::MissingParameter(name.to_string()))
    }

    /// Gradients of the trainable parameters, zero-filled when unreachable from the loss.
    pub fn gradients(&self, grads: &Gradients<F>) -> GradMap<F> {
        GradMap {
            grads: self
                .vars
                .iter()
                .filter(|(_, v)| v.requires_grad())
                .map(|(k, v)| (k.clone(), grads.get_or_zeros(*v)))
                .collect(),
        }
    }
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct GradMap<F> {
    grads: IndexMap<String, Tensor<F>>,
}

impl<F: Real> GradMap<F> {
    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Largest absolute gradient entry across all parameters.
    pub fn max_abs(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|t| t.data().iter().map(|v| v.abs().to_f64_lossy()))
            .fold(0.0, f64::max)
    }

    /// Accumulates another map into this one (used for micro-batches).
    pub fn accumulate(&mut self, other: GradMap<F>) {
        for (k, v) in other.grads {
            match self.grads.get_mut(&k) {
                Some(acc) => acc.add_assign(&v),
                None => {
                    self.grads.insert(k, v);
                }
            }
        }
    }

    pub fn scale(&mut self, c: F) {
        for t in self.grads.values_mut() {
            for v in t.data_mut() {
                *v *= c;
            }
        }
    }
}
