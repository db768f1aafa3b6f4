use std::fmt;

use crate::error::{shape_err, Result};

/// Ordered list of positive extents, row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(shape_err("shape must have at least one axis"));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(shape_err(format!("axis {pos} has zero extent in {dims:?}")));
        }
        Ok(Self(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn last(&self) -> usize {
        *self.0.last().expect("shape is never empty")
    }

    /// Number of rows when the tensor is viewed as `[numel / last, last]`.
    pub fn rows(&self) -> usize {
        self.numel() / self.last()
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }

    pub fn flat_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.0.len() {
            return Err(shape_err(format!(
                "index rank {} for shape {self}",
                index.len()
            )));
        }
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.0) {
            if i >= d {
                return Err(shape_err(format!(
                    "index {index:?} out of bounds for {self}"
                )));
            }
            flat = flat * d + i;
        }
        Ok(flat)
    }

    pub fn reshaped(&self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let next = Self::new(dims)?;
        if next.numel() != self.numel() {
            return Err(shape_err(format!("cannot reshape {self} into {next}")));
        }
        Ok(next)
    }

    /// Validates `perm` and returns the permuted shape.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.rank() {
            return Err(shape_err(format!(
                "permutation {perm:?} for rank {}",
                self.rank()
            )));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || seen[p] {
                return Err(shape_err(format!("invalid permutation {perm:?}")));
            }
            seen[p] = true;
        }
        Ok(Self(perm.iter().map(|&p| self.0[p]).collect()))
    }

    /// For each destination flat index, the source flat index under `perm`.
    pub(crate) fn permutation_map(&self, perm: &[usize]) -> Result<Vec<usize>> {
        let out = self.permuted(perm)?;
        let src_strides = self.strides();
        let n = self.numel();
        let rank = self.rank();
        let mut map = Vec::with_capacity(n);
        let mut counter = vec![0usize; rank];
        for _ in 0..n {
            let src: usize = counter
                .iter()
                .enumerate()
                .map(|(axis, &c)| c * src_strides[perm[axis]])
                .sum();
            map.push(src);
            for axis in (0..rank).rev() {
                counter[axis] += 1;
                if counter[axis] < out.0[axis] {
                    break;
                }
                counter[axis] = 0;
            }
        }
        Ok(map)
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}
