//! Named `f32` tensors: the persisted form of every model parameter.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn from_f64(name: impl Into<String>, shape: Vec<usize>, data: &[f64]) -> Self {
        Self::new(name, shape, data.iter().map(|&x| x as f32).collect())
    }

    pub fn scalar(name: impl Into<String>, v: f64) -> Self {
        Self::new(name, vec![], vec![v as f32])
    }

    pub fn from_array1(name: impl Into<String>, a: &Array1<f64>) -> Self {
        Self::from_f64(name, vec![a.len()], a.as_slice().expect("contiguous"))
    }

    pub fn from_array2(name: impl Into<String>, a: &Array2<f64>) -> Self {
        let (r, c) = a.dim();
        Self::from_f64(name, vec![r, c], a.as_slice().expect("contiguous"))
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&x| x as f64).collect()
    }
}

/// Lookup by name with shape checks.
#[derive(Debug, Clone, Default)]
pub struct TensorMap {
    tensors: BTreeMap<String, NamedTensor>,
}

impl TensorMap {
    pub fn new(tensors: impl IntoIterator<Item = NamedTensor>) -> Self {
        Self {
            tensors: tensors.into_iter().map(|t| (t.name.clone(), t)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Format(format!("bundle is missing tensor `{name}`")))
    }

    pub fn contains_prefix(&self, prefix: &str) -> bool {
        self.tensors.keys().any(|k| k.starts_with(prefix))
    }

    fn shaped(&self, name: &str, shape: &[usize]) -> Result<&NamedTensor> {
        let t = self.get(name)?;
        if t.shape != shape {
            return Err(Error::Format(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(t)
    }

    pub fn array1(&self, name: &str, len: usize) -> Result<Array1<f64>> {
        Ok(Array1::from(self.shaped(name, &[len])?.to_f64()))
    }

    pub fn array2(&self, name: &str, dim: (usize, usize)) -> Result<Array2<f64>> {
        let t = self.shaped(name, &[dim.0, dim.1])?;
        Ok(Array2::from_shape_vec(dim, t.to_f64()).expect("shape checked"))
    }

    pub fn vec(&self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let t = self.get(name)?;
        Ok((t.shape.clone(), t.to_f64()))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        Ok(self.shaped(name, &[])?.data[0] as f64)
    }
}
