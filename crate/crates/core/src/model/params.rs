use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter and returns its index.
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    /// Mutable views of every parameter's values, in order.
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.tensors.iter_mut().map(Tensor::data_mut).collect()
    }

    /// Total number of scalars.
    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter as a trainable leaf.
    pub fn record(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone().with_grad())).collect()
    }

    /// Records every parameter as a constant.
    pub fn record_constant(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    /// Rounds every value to the nearest `f32`, so 32-bit weight files reload exactly.
    pub fn snap_to_f32(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    /// Checks names and shapes against `other`.
    pub fn check_layout(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::format(format!(
                "expected {} parameters, found {}",
                other.len(),
                self.len()
            )));
        }
        for ((n, t), (on, ot)) in self.iter().zip(other.iter()) {
            if n != on || t.shape() != ot.shape() {
                return Err(Error::format(format!(
                    "parameter `{n}` {:?} does not match `{on}` {:?}",
                    t.shape(),
                    ot.shape()
                )));
            }
        }
        Ok(())
    }
}
