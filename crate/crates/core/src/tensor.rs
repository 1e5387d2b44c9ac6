//! Dense row-major `f64` tensors.
//!
//! Everything in this crate runs on 64-bit floats so that test oracles
//! (finite differences, analytic Gaussian scores, quadrature) can use tight
//! tolerances. Shapes are explicit and validated; a tensor whose entries have
//! left the finite domain is an error state, checked at step boundaries via
//! [`Tensor::ensure_finite`].

use crate::error::{Error, Result};

/// A dense tensor: `shape` dims, row-major `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build from shape and data; `data.len()` must equal the shape product.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("{n} elements for shape {shape:?}"),
                data.len(),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// 2-D tensor from rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::shape("Tensor::from_rows", c, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Tensor {
            shape: vec![r, c],
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Number of rows when viewed as a batch: rank-1 tensors are one row.
    pub fn batch_rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            _ => panic!("batch view expects rank 1 or 2, got {:?}", self.shape),
        }
    }

    /// Row width when viewed as a batch.
    pub fn row_dim(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            _ => panic!("batch view expects rank 1 or 2, got {:?}", self.shape),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.row_dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.row_dim();
        &mut self.data[i * d..(i + 1) * d]
    }

    /// Error if any entry is NaN or infinite.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        ensure_finite(&self.data, context)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }
}

/// Error if any entry of `data` is NaN or infinite.
pub fn ensure_finite(data: &[f64], context: &str) -> Result<()> {
    for (i, v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "{context}: non-finite value {v} at flat index {i}"
            )));
        }
    }
    Ok(())
}

/// Per-coordinate mean of the rows of a `[n, d]` tensor.
pub fn column_mean(batch: &Tensor) -> Vec<f64> {
    let n = batch.batch_rows();
    let d = batch.row_dim();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(batch.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    mean
}

/// Per-coordinate population standard deviation of the rows of a `[n, d]` tensor.
pub fn column_std(batch: &Tensor, mean: &[f64]) -> Vec<f64> {
    let n = batch.batch_rows();
    let d = batch.row_dim();
    let mut var = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            let c = batch.row(i)[j] - mean[j];
            var[j] += c * c;
        }
    }
    var.iter().map(|v| (v / n as f64).sqrt()).collect()
}
