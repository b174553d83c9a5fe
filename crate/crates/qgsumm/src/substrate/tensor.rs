use crate::error::{QgError, Result};
use serde::{Deserialize, Serialize};

/// Dense 2-D tensor of 64-bit floats in row-major order.
///
/// Scalars are `[1, 1]`, row vectors `[1, n]`. All model state and all
/// intermediate values in the compute graph are carried by this type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TensorWire")]
pub struct Tensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

/// Deserialization shim: rejects rows*cols != data length on load.
#[derive(Deserialize)]
struct TensorWire {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl TryFrom<TensorWire> for Tensor {
    type Error = String;

    fn try_from(w: TensorWire) -> std::result::Result<Self, String> {
        if w.shape[0] * w.shape[1] != w.data.len() {
            return Err(format!(
                "tensor shape {:?} inconsistent with {} values",
                w.shape,
                w.data.len()
            ));
        }
        Ok(Tensor { shape: w.shape, data: w.data })
    }
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(QgError::shape(
                "tensor_new",
                format!("shape [{rows}, {cols}] expects {} values, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Tensor { shape: [rows, cols], data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { shape: [rows, cols], data: vec![0.0; rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Tensor { shape: [rows, cols], data: vec![value; rows * cols] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: [1, 1], data: vec![value] }
    }

    pub fn row(values: &[f64]) -> Self {
        Tensor { shape: [1, values.len()], data: values.to_vec() }
    }

    /// Identity matrix of size n.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// One-hot row vector of width `width` with a 1 at `index`.
    pub fn one_hot(width: usize, index: usize) -> Self {
        let mut t = Tensor::zeros(1, width);
        t.data[index] = 1.0;
        t
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.shape[0], self.shape[1])
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

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.shape[1] + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    /// Scalar value of a [1,1] tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.shape == [1, 1]
    }

    /// Index and value of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<(usize, f64)> {
        self.data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
            .map(|(i, v)| (i, *v))
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    /// Elementwise in-place a += b (shapes must match).
    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    /// In-place a += s * b.
    pub fn add_scaled_assign(&mut self, other: &Tensor, s: f64) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * b;
        }
    }

    /// Euclidean norm of the flattened data.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Byte-stable digest of shape + data, for freeze/determinism checks.
    pub fn checksum(&self) -> u64 {
        let mut h = crate::substrate::rng::Fnv64::new();
        h.write_u64(self.shape[0] as u64);
        h.write_u64(self.shape[1] as u64);
        for v in &self.data {
            h.write_u64(v.to_bits());
        }
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_shape() {
        assert!(Tensor::new(2, 3, vec![0.0; 5]).is_err());
        assert!(Tensor::new(2, 3, vec![0.0; 6]).is_ok());
    }

    #[test]
    fn one_hot_and_eye() {
        let t = Tensor::one_hot(4, 2);
        assert_eq!(t.data(), &[0.0, 0.0, 1.0, 0.0]);
        let i = Tensor::eye(3);
        assert_eq!(i.at(1, 1), 1.0);
        assert_eq!(i.at(0, 1), 0.0);
    }

    #[test]
    fn non_finite_detection() {
        let mut t = Tensor::zeros(2, 2);
        assert!(t.first_non_finite().is_none());
        t.set(1, 0, f64::NAN);
        assert_eq!(t.first_non_finite().map(|(i, _)| i), Some(2));
    }
}
