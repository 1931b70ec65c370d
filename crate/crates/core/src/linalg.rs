//! Flat parameter vectors and the handful of dense operations the optimizers
//! and metrics need.
//!
//! Reductions (`dot`, `l2norm`, `sum`) accumulate strictly in index order so
//! repeated evaluation is bit-stable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T = f64> {
    values: Vec<T>,
}

fn check_len(op: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Structural(format!("{op}: length mismatch ({a} vs {b})")));
    }
    Ok(())
}

impl<T: Scalar> ParamVector<T> {
    pub fn zeros(len: usize) -> Self {
        ParamVector {
            values: vec![T::zero(); len],
        }
    }

    pub fn from_vec(values: Vec<T>) -> Self {
        ParamVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with("hadamard", other, |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Self {
        ParamVector {
            values: self.values.iter().map(|&v| v * c).collect(),
        }
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        check_len("dot", self.len(), other.len())?;
        Ok(dot(&self.values, &other.values))
    }

    pub fn l2norm(&self) -> T {
        dot(&self.values, &self.values).sqrt()
    }

    /// `self += c * other`, in place.
    pub fn axpy(&mut self, c: T, other: &Self) -> Result<()> {
        check_len("axpy", self.len(), other.len())?;
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn zip_with(&self, op: &str, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        check_len(op, self.len(), other.len())?;
        Ok(ParamVector {
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }
}

impl<T> std::ops::Index<usize> for ParamVector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.values[i]
    }
}

impl<T> std::ops::IndexMut<usize> for ParamVector<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.values[i]
    }
}

/// Index-ordered dot product. Caller guarantees equal lengths.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Samples from N(0, std²) rejection-resampled into `[-2·std, 2·std]`.
pub fn trunc_normal_init<T: Scalar>(count: usize, std: f64, rng: &mut RngState) -> Result<Vec<T>> {
    if count == 0 {
        return Err(Error::InvalidArgument("trunc_normal_init: count must be >= 1".into()));
    }
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "trunc_normal_init: std must be positive, got {std}"
        )));
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let z = rng.standard_normal();
        if z.abs() <= 2.0 {
            out.push(T::lit(z * std));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorRole {
    Weight,
    Bias,
}

/// One model tensor: row-major data with its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f64> {
    pub layer: usize,
    pub role: TensorRole,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T> Tensor<T> {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub layer: usize,
    pub role: TensorRole,
    pub shape: Vec<usize>,
}

impl LayoutEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered description of how tensors are packed into a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Layout {
    pub entries: Vec<LayoutEntry>,
}

impl Layout {
    pub fn total_len(&self) -> usize {
        self.entries.iter().map(LayoutEntry::numel).sum()
    }

    /// Start offset of each entry in the flat vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.entries
            .iter()
            .map(|e| {
                let start = off;
                off += e.numel();
                start
            })
            .collect()
    }
}

pub fn flatten<T: Scalar>(tensors: &[Tensor<T>]) -> Result<(ParamVector<T>, Layout)> {
    let mut values = Vec::with_capacity(tensors.iter().map(|t| t.data.len()).sum());
    let mut entries = Vec::with_capacity(tensors.len());
    for t in tensors {
        if t.data.len() != t.numel() {
            return Err(Error::Structural(format!(
                "tensor (layer {}, {:?}) has {} elements but shape {:?}",
                t.layer,
                t.role,
                t.data.len(),
                t.shape
            )));
        }
        values.extend_from_slice(&t.data);
        entries.push(LayoutEntry {
            layer: t.layer,
            role: t.role,
            shape: t.shape.clone(),
        });
    }
    Ok((ParamVector::from_vec(values), Layout { entries }))
}

pub fn unflatten<T: Scalar>(params: &ParamVector<T>, layout: &Layout) -> Result<Vec<Tensor<T>>> {
    if params.len() != layout.total_len() {
        return Err(Error::Structural(format!(
            "parameter vector has {} values but layout describes {}",
            params.len(),
            layout.total_len()
        )));
    }
    let mut out = Vec::with_capacity(layout.entries.len());
    let mut off = 0;
    for e in &layout.entries {
        let n = e.numel();
        out.push(Tensor {
            layer: e.layer,
            role: e.role,
            shape: e.shape.clone(),
            data: params.as_slice()[off..off + n].to_vec(),
        });
        off += n;
    }
    Ok(out)
}
