//! Named parameter storage. Parameters live here between steps; each forward
//! pass binds them into a fresh [`crate::graph::Graph`] and the optimizer
//! writes updates back after the gradients have been collected.

use crate::error::{LutError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn add(&mut self, name: &str, mut t: Tensor) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name}"
        );
        t.requires_grad = true;
        self.names.push(name.to_string());
        self.tensors.push(t);
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        (0..self.tensors.len()).map(ParamId).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar coordinates across all parameters.
    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// All parameters concatenated into one flat vector, in id order.
    pub fn flatten(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.total_len());
        for t in &self.tensors {
            data.extend_from_slice(t.data());
        }
        Tensor::new(vec![data.len()], data).expect("flatten is always consistent")
    }

    /// (offset, length) of each parameter inside [`Self::flatten`]'s output.
    pub fn layout(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.tensors.len());
        let mut off = 0;
        for t in &self.tensors {
            out.push((off, t.numel()));
            off += t.numel();
        }
        out
    }

    /// Overwrite all parameter values from a flat vector (inverse of [`Self::flatten`]).
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.total_len() {
            return Err(LutError::shape(
                "load_flat",
                format!("store holds {} values, got {}", self.total_len(), flat.len()),
            ));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Bitwise equality of every parameter (names, shapes and values).
    pub fn bit_eq(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.bit_eq(b))
    }
}
