use crate::error::{shape_err, Result};

use super::Shape;

/// Exact integer accumulator tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntTensor {
    shape: Shape,
    data: Vec<i64>,
}

impl IntTensor {
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<i64>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if data.len() != shape.numel() {
            return Err(shape_err(format!(
                "{} values for shape {shape}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        Ok(Self {
            shape,
            data: vec![0; n],
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn data(&self) -> &[i64] {
        &self.data
    }

    pub fn get(&self, index: &[usize]) -> Result<i64> {
        Ok(self.data[self.shape.flat_index(index)?])
    }

    pub fn to_real(&self) -> super::RealTensor {
        super::RealTensor::from_shape(
            self.shape.clone(),
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("integers are finite")
    }
}
