//! Dense row-major tensors.
//!
//! Everything this crate computes with is at most two-dimensional: sample
//! matrices, weight matrices, bias rows, and 1x1 scalars.

use crate::scalar::Scalar;
use crate::{Error, Result};

/// Dense array of reals in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    values: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// Build a tensor, checking that the shape matches the value count and
    /// that every element is finite.
    pub fn new(shape: Vec<usize>, values: Vec<S>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!(
                "shape must be non-empty with positive dims, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} expects {numel} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            values: vec![S::zero(); numel],
        }
    }

    /// 1x1 tensor.
    pub fn scalar(v: S) -> Self {
        Tensor {
            shape: vec![1, 1],
            values: vec![v],
        }
    }

    /// `rows x cols` matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, values: Vec<S>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    /// Row vector `1 x n`.
    pub fn row(values: Vec<S>) -> Result<Self> {
        let n = values.len();
        Tensor::new(vec![1, n], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// Number of rows when viewed as a matrix (1 for vectors).
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Number of columns when viewed as a matrix.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1]
        } else {
            self.shape[0]
        }
    }

    pub fn get(&self, row: usize, col: usize) -> S {
        self.values[row * self.cols() + col]
    }

    pub fn is_scalar_shape(&self) -> bool {
        self.numel() == 1
    }

    /// Value of a 1x1 tensor.
    pub fn item(&self) -> S {
        debug_assert!(self.is_scalar_shape());
        self.values[0]
    }

    /// Row-major slice of one row.
    pub fn row_slice(&self, row: usize) -> &[S] {
        let c = self.cols();
        &self.values[row * c..(row + 1) * c]
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn vstack(top: &Tensor<S>, bottom: &Tensor<S>) -> Result<Self> {
        if top.cols() != bottom.cols() {
            return Err(Error::Shape(format!(
                "vstack needs equal column counts, got {} and {}",
                top.cols(),
                bottom.cols()
            )));
        }
        let mut values = Vec::with_capacity(top.numel() + bottom.numel());
        values.extend_from_slice(top.values());
        values.extend_from_slice(bottom.values());
        Tensor::new(vec![top.rows() + bottom.rows(), top.cols()], values)
    }
}
