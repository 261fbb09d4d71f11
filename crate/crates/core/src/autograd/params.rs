use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry<R> {
    name: String,
    value: Arc<Tensor<R>>,
    grad: Tensor<R>,
}

/// Named trainable tensors with their gradient accumulators.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<R> {
    entries: Vec<Entry<R>>,
}

/// Gradients gathered from one tape, keyed by parameter.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads<R> {
    pub(crate) grads: Vec<(ParamId, Tensor<R>)>,
}

impl<R: Real> ParamGrads<R> {
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<R>)> {
        self.grads.iter().map(|(id, g)| (*id, g))
    }
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<R>) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Entry {
            name: name.into(),
            value: Arc::new(value),
            grad,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor<R> {
        &self.entries[id.0].value
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor<R>> {
        Arc::clone(&self.entries[id.0].value)
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<R> {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<R> {
        &self.entries[id.0].grad
    }

    /// Replaces a value, keeping the registered shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<R>) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::shape("set_value", entry.value.shape(), value.shape()));
        }
        entry.value = Arc::new(value);
        Ok(())
    }

    /// Total number of scalars over all parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|g| *g = R::zero());
        }
    }

    pub fn accumulate(&mut self, grads: &ParamGrads<R>) {
        for (id, g) in grads.iter() {
            let dst = self.entries[id.0].grad.data_mut();
            for (d, &s) in dst.iter_mut().zip(g.data()) {
                *d += s;
            }
        }
    }

    /// Flat copy of all values, in registration order.
    pub fn flatten(&self) -> Vec<R> {
        self.entries
            .iter()
            .flat_map(|e| e.value.data().iter().copied())
            .collect()
    }

    pub fn flatten_grads(&self) -> Vec<R> {
        self.entries
            .iter()
            .flat_map(|e| e.grad.data().iter().copied())
            .collect()
    }

    /// Inverse of [`ParamStore::flatten`].
    pub fn assign_flat(&mut self, flat: &[R]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::invalid(format!(
                "expected {} parameter values, got {}",
                self.num_scalars(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for e in &mut self.entries {
            let n = e.value.len();
            Arc::make_mut(&mut e.value).data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}
