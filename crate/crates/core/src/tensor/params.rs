use std::collections::HashMap;

use super::graph::{Gradients, Graph};
use super::value::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Tensor,
    trainable: bool,
    grad: Option<Tensor>,
}

/// Named parameters with trainable/frozen flags and accumulated gradients.
///
/// Values are kept representable in `f32` (the checkpoint precision) so a
/// save/load cycle is bit-exact; arithmetic on them runs in `f64`.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, mut value: Tensor, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        value.round_to_f32();
        let id = ParamId(self.entries.len());
        self.entries.push(Entry {
            name: name.clone(),
            value,
            trainable,
            grad: None,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    /// Replaces a value (shape must match); rounds to `f32`.
    pub fn set_value(&mut self, id: ParamId, mut value: Tensor) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::invalid(format!(
                "parameter `{}` shape {:?} cannot take {:?}",
                e.name,
                e.value.shape(),
                value.shape()
            )));
        }
        value.round_to_f32();
        e.value = value;
        Ok(())
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.entries[id.0].grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Adds `scale ·` the gradients of every parameter leaf in `graph`.
    pub fn accumulate_grads(&mut self, graph: &Graph, grads: &Gradients, scale: f64) {
        for (id, var) in graph.param_vars() {
            let Some(g) = grads.get(var) else { continue };
            let e = &mut self.entries[id.0];
            if !e.trainable {
                continue;
            }
            let slot = e.grad.get_or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            slot.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += scale * b);
        }
    }

    /// Plain gradient descent on every trainable parameter with a gradient,
    /// then clears gradients.
    pub fn sgd_step(&mut self, learning_rate: f64) -> Result<()> {
        for e in &mut self.entries {
            if let (true, Some(g)) = (e.trainable, e.grad.take()) {
                if !g.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of `{}`", e.name)));
                }
                e.value.data_mut().iter_mut().zip(g.data()).for_each(|(v, g)| *v -= learning_rate * g);
                e.value.round_to_f32();
            }
        }
        Ok(())
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.entries.iter().map(|e| (e.name.clone(), e.value.clone())).collect()
    }

    /// Overwrites values by name from a loaded checkpoint. Every parameter of
    /// this store must be present with the same shape.
    pub fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        let lookup: HashMap<&str, &Tensor> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for i in 0..self.entries.len() {
            let name = self.entries[i].name.clone();
            let t = lookup
                .get(name.as_str())
                .ok_or_else(|| Error::Format(format!("checkpoint is missing `{name}`")))?;
            self.set_value(ParamId(i), (*t).clone())?;
        }
        Ok(())
    }

    pub fn num_values(&self, trainable_only: bool) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable || !trainable_only)
            .map(|e| e.value.len())
            .sum()
    }
}
