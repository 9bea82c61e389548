//! Named parameter and buffer storage.

use std::collections::BTreeMap;

use wisense_tensor::{Element, ParamId, Tensor};

/// Part of the network a tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Segment {
    /// Stem and stages up to the branch point; feeds both exits.
    Shared,
    /// Early exit head.
    Early,
    /// Stages after the branch point.
    Rest,
    /// Final exit head.
    Final,
}

pub type BufferId = usize;

#[derive(Clone, Debug, PartialEq)]
pub struct Entry<T: Element> {
    pub name: String,
    pub segment: Segment,
    pub tensor: Tensor<T>,
}

/// Trainable parameters (indexed by [`ParamId`]) plus non-trainable buffers
/// such as batch-norm running statistics.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T: Element> {
    params: Vec<Entry<T>>,
    buffers: Vec<Entry<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn add_param(&mut self, name: String, segment: Segment, tensor: Tensor<T>) -> ParamId {
        let tensor = tensor.with_requires_grad();
        self.params.push(Entry { name, segment, tensor });
        self.params.len() - 1
    }

    pub fn add_buffer(&mut self, name: String, segment: Segment, tensor: Tensor<T>) -> BufferId {
        self.buffers.push(Entry { name, segment, tensor });
        self.buffers.len() - 1
    }

    pub fn param(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id].tensor
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id].tensor
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id].tensor
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor<T> {
        &mut self.buffers[id].tensor
    }

    pub fn params(&self) -> &[Entry<T>] {
        &self.params
    }

    pub fn buffers(&self) -> &[Entry<T>] {
        &self.buffers
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Entry<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn segment_of(&self, id: ParamId) -> Segment {
        self.params[id].segment
    }

    /// Every parameter and buffer by name, parameters first.
    pub fn named_tensors(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params
            .iter()
            .chain(&self.buffers)
            .map(|e| (e.name.as_str(), &e.tensor))
    }

    /// Mutable lookup of a parameter or buffer by name.
    pub fn by_name_mut(&mut self) -> BTreeMap<&str, &mut Tensor<T>> {
        self.params
            .iter_mut()
            .chain(self.buffers.iter_mut())
            .map(|e| (e.name.as_str(), &mut e.tensor))
            .collect()
    }
}
