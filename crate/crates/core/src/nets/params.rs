//! Named parameter storage and per-pass tape binding.

use std::collections::HashMap;

use crate::autodiff::{Gradients, Matrix, NodeId, Tape};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    /// Position in the owning store.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Matrix,
    trainable: bool,
}

/// Trainable weights plus non-trainable buffers such as running statistics.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, value: Matrix, trainable: bool) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter name {name}");
        let id = self.entries.len();
        self.entries.push(Entry { name: name.to_owned(), value, trainable });
        self.index.insert(name.to_owned(), id);
        ParamId(id)
    }

    pub fn add(&mut self, name: &str, value: Matrix) -> ParamId {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Matrix) -> ParamId {
        self.insert(name, value, false)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.is_trainable(id))
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.trainable_ids().map(|id| self.get(id).len()).sum()
    }

    /// Overwrites a value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Matrix) -> Result<()> {
        let slot = &mut self.entries[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::shape(
                "ParamStore::set",
                format!("{} is {:?}, got {:?}", slot.name, slot.value.shape(), value.shape()),
            ));
        }
        slot.value = value;
        Ok(())
    }

    /// Records every trainable entry as a tape parameter and every buffer
    /// as a constant.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        let nodes = self
            .entries
            .iter()
            .map(|e| {
                if e.trainable {
                    tape.param(e.value.clone())
                } else {
                    tape.constant(e.value.clone())
                }
            })
            .collect();
        Binding { nodes }
    }

    /// Named copies of every entry in insertion order.
    pub fn named(&self) -> Vec<(String, Matrix)> {
        self.entries.iter().map(|e| (e.name.clone(), e.value.clone())).collect()
    }
}

/// Tape nodes of one forward pass, indexed like the store.
#[derive(Clone, Debug)]
pub struct Binding {
    nodes: Vec<NodeId>,
}

impl Binding {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.nodes[id.0]
    }

    /// Gradient of each trainable entry, zero where the root does not depend on it.
    pub fn gradients(&self, store: &ParamStore, grads: &Gradients) -> Vec<(ParamId, Matrix)> {
        store
            .trainable_ids()
            .map(|id| (id, grads.wrt(self.node(id), store.get(id))))
            .collect()
    }
}
