// SPDX-License-Identifier: MIT OR Apache-2.0

//! Flat, named `f32` tensors: the common currency between models, model
//! files and the trainer.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn vector(name: impl Into<String>, data: &[f32]) -> Self {
        Self {
            name: name.into(),
            shape: alloc::vec![data.len()],
            data: data.to_vec(),
        }
    }

    pub fn matrix(name: impl Into<String>, m: &Matrix) -> Self {
        Self {
            name: name.into(),
            shape: alloc::vec![m.rows(), m.cols()],
            data: m.data().to_vec(),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Tensors keyed by name, consumed while rebuilding a model.
#[derive(Debug, Default)]
pub struct TensorSet {
    map: BTreeMap<String, NamedTensor>,
}

impl TensorSet {
    pub fn new(tensors: impl IntoIterator<Item = NamedTensor>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for t in tensors {
            if t.data.len() != t.numel() {
                return Err(Error::DimensionMismatch {
                    context: "tensor data",
                    expected: t.numel(),
                    actual: t.data.len(),
                });
            }
            if map.contains_key(&t.name) {
                return Err(Error::InvalidConfig(format!("duplicate tensor {}", t.name)));
            }
            map.insert(t.name.clone(), t);
        }
        Ok(Self { map })
    }

    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f32>> {
        let t = self
            .map
            .remove(name)
            .ok_or_else(|| Error::InvalidConfig(format!("missing tensor {name}")))?;
        if t.shape != shape {
            return Err(Error::InvalidConfig(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        crate::numerics::ensure_finite(&t.data, "tensor")?;
        Ok(t.data)
    }

    pub fn take_vector(&mut self, name: &str, len: usize) -> Result<Vec<f32>> {
        self.take(name, &[len])
    }

    pub fn take_matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let data = self.take(name, &[rows, cols])?;
        Matrix::new(rows, cols, data)
    }

    /// Fails if any tensor was left unconsumed.
    pub fn finish(self) -> Result<()> {
        match self.map.keys().next() {
            None => Ok(()),
            Some(name) => Err(Error::InvalidConfig(format!("unexpected tensor {name}"))),
        }
    }
}
