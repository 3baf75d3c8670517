//! Per-slide patch embedding store.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::Patch;

/// Patch embeddings of one slide, `dim` values per patch, kept in insertion
/// order for serialization.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    patches: Vec<Patch>,
    data: Vec<f32>,
    index: BTreeMap<Patch, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore { dim, ..Default::default() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Inserts or replaces the embedding of `patch`.
    pub fn insert(&mut self, patch: Patch, values: &[f32]) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: values.len() });
        }
        match self.index.get(&patch) {
            Some(&i) => self.data[i * self.dim..(i + 1) * self.dim].copy_from_slice(values),
            None => {
                self.index.insert(patch, self.patches.len());
                self.patches.push(patch);
                self.data.extend_from_slice(values);
            }
        }
        Ok(())
    }

    pub fn get(&self, patch: Patch) -> Option<&[f32]> {
        self.index
            .get(&patch)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    /// Records in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (Patch, &[f32])> + '_ {
        self.patches
            .iter()
            .enumerate()
            .map(move |(i, &p)| (p, &self.data[i * self.dim..(i + 1) * self.dim]))
    }
}
