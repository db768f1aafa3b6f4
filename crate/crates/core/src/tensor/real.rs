use crate::error::{shape_err, Error, Result};

use super::Shape;

/// Dense row-major tensor of `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct RealTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl RealTensor {
    /// Builds a tensor, rejecting length mismatches and non-finite values.
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        Self::from_shape(shape, data)
    }

    pub fn from_shape(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(shape_err(format!(
                "{} values for shape {shape}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite value {} at {i}",
                data[i]
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        Ok(Self {
            shape,
            data: vec![0.0; n],
        })
    }

    pub fn filled(dims: impl Into<Vec<usize>>, value: f64) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        Self::from_shape(shape, vec![value; n])
    }

    pub fn from_fn(dims: impl Into<Vec<usize>>, f: impl FnMut(usize) -> f64) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = (0..shape.numel()).map(f).collect();
        Self::from_shape(shape, data)
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![1], vec![value])
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(vec![n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.shape.flat_index(index)?])
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.shape.last();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn reshape(&self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        Ok(Self {
            shape: self.shape.reshaped(dims)?,
            data: self.data.clone(),
        })
    }

    pub fn transpose_axes(&self, perm: &[usize]) -> Result<Self> {
        let shape = self.shape.permuted(perm)?;
        let map = self.shape.permutation_map(perm)?;
        let data = map.iter().map(|&src| self.data[src]).collect();
        Ok(Self { shape, data })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_shape(
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(shape_err(format!("{} vs {}", self.shape, other.shape)));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_shape(self.shape.clone(), data)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        self.map(|v| v * c)
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.numel() != other.numel() {
            return Err(shape_err(format!(
                "dot of {} and {}",
                self.shape, other.shape
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(shape_err(format!("{} vs {}", self.shape, other.shape)));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Contraction of two rank-2 tensors, `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (&[m, k], &[k2, n]) = (self.dims(), other.dims()) else {
            return Err(shape_err(format!(
                "matmul needs rank-2 operands, got {} and {}",
                self.shape, other.shape
            )));
        };
        if k != k2 {
            return Err(shape_err(format!("matmul inner extents {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Self::new(vec![m, n], out)
    }
}

/// `[m, k] x [k, n]` real matrix product accumulated in `f64`.
pub fn matmul_real(a: &RealTensor, b: &RealTensor) -> Result<RealTensor> {
    a.matmul(b)
}
