//! Dense row-major 64-bit tensors.
//!
//! All learnable state in the crate lives in these; shapes are checked at
//! construction and non-finite values are rejected at graph boundaries.

use crate::error::{Error, Result};

/// Dense tensor: shape plus row-major `f64` storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Construct with full validation (shape product and finiteness).
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::dim(format!(
                "shape {:?} expects {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::value(format!("non-finite tensor element {bad}")));
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for op outputs whose inputs were already vetted.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Tensor::new(vec![], vec![v])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable element access; values must stay finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::dim(format!("item() on shape {:?}", self.shape)))
        }
    }

    /// Rows/cols of a 2-D tensor; a 1-D tensor counts as a single row.
    pub fn rows_cols(&self) -> Result<(usize, usize)> {
        match self.shape.len() {
            1 => Ok((1, self.shape[0])),
            2 => Ok((self.shape[0], self.shape[1])),
            _ => Err(Error::dim(format!("expected 1-D or 2-D, got {:?}", self.shape))),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let (_, cols) = (self.shape[0], self.shape[1]);
        &self.data[r * cols..(r + 1) * cols]
    }

    /// Squared L2 norm of all elements.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_enforced() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Dim(_))
        ));
    }

    #[test]
    fn non_finite_rejected_at_boundary() {
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::Value(_))
        ));
        assert!(matches!(
            Tensor::new(vec![1], vec![f64::INFINITY]),
            Err(Error::Value(_))
        ));
    }

    #[test]
    fn scalar_item() {
        let t = Tensor::scalar(4.25).unwrap();
        assert!(t.is_scalar());
        assert_eq!(t.item().unwrap(), 4.25);
        assert!(Tensor::vector(vec![1.0, 2.0]).unwrap().item().is_err());
    }
}
