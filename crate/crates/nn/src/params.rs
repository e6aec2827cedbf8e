use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::float::Float;
use crate::tensor::Tensor;

/// Handle to a tensor registered in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<F: Float> {
    pub name: String,
    pub value: Arc<Tensor<F>>,
    pub trainable: bool,
}

/// Ordered, named collection of model tensors.
///
/// Registration order is the serialization order, so two stores built by
/// the same constructor line up entry for entry.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F: Float> {
    entries: Vec<Param<F>>,
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        self.push(name.into(), value, true)
    }

    /// Registers a tensor that is saved with the model but never updated by
    /// an optimizer (fixed matrices, running statistics).
    pub fn add_frozen(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        self.push(name.into(), value, false)
    }

    fn push(&mut self, name: String, value: Tensor<F>, trainable: bool) -> ParamId {
        self.entries.push(Param {
            name,
            value: Arc::new(value),
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Arc<Tensor<F>> {
        &self.entries[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param<F> {
        &self.entries[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<F>) -> Result<()> {
        let slot = &mut self.entries[id.0];
        if slot.value.shape() != value.shape() {
            return invalid(
                "ParamStore::set",
                format!("{} has shape {:?}, got {:?}", slot.name, slot.value.shape(), value.shape()),
            );
        }
        slot.value = Arc::new(value);
        Ok(())
    }

    /// Mutable access for in-place updates; clones only if the tensor is
    /// still shared with a live graph.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<F>)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    /// Element-type conversion preserving names, order and trainability.
    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: Arc::new(p.value.cast()),
                    trainable: p.trainable,
                })
                .collect(),
        }
    }
}
