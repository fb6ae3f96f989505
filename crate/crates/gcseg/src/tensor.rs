//! Dense row-major tensors over either `f32` (training) or `f64`
//! (verification / gradient checking).
//!
//! Tensors are immutable once constructed; the payload sits behind an `Arc`
//! so clones are cheap and operations never alias mutable state.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Scalar element type. `f64` is used wherever finite differences must be
/// meaningful; `f32` is the training precision.
pub trait Real:
    num_traits::Float
    + num_traits::NumAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn into_f64(self) -> f64 {
        self
    }
}

/// Dense row-major tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    /// Builds a tensor, checking that the data length matches the shape.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero dimension in shape {shape:?}")));
        }
        if data.len() != expect {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?} (= {} elements)",
                data.len(),
                shape,
                expect
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
        })
    }

    /// Like [`Tensor::new`] but panics; for internally computed buffers whose
    /// length is correct by construction.
    pub(crate) fn from_parts(shape: &[usize], data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape: shape.to_vec(),
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(shape, vec![T::zero(); shape.iter().product()])
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::from_parts(shape, vec![v; shape.iter().product()])
    }

    /// A single-element tensor of shape `[1]`.
    pub fn scalar(v: T) -> Self {
        Self::from_parts(&[1], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// The value of a `[1]`-shaped tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Dimension `i` of the shape.
    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    /// Element of a rank-2 tensor.
    pub fn at2(&self, r: usize, c: usize) -> T {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Self::from_parts(&self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.shape, other.shape, "add shape mismatch");
        Self::from_parts(
            &self.shape,
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| a + b)
                .collect(),
        )
    }

    /// Casts every element to another precision.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_parts(
            &self.shape,
            self.data.iter().map(|&v| U::from_f64(v.into_f64())).collect(),
        )
    }

    /// Largest absolute difference to another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }
}

impl<T: Real> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.len() <= 16 {
            write!(f, " {:?}", &self.data[..])
        } else {
            write!(f, " [{:?}, ...]", &self.data[..8])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_mismatched_length() {
        assert!(matches!(
            Tensor::new(&[2, 3], vec![0.0f64; 5]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn new_rejects_zero_dimension() {
        assert!(Tensor::<f64>::new(&[2, 0], vec![]).is_err());
    }

    #[test]
    fn cast_round_trips_small_values() {
        let t = Tensor::new(&[3], vec![1.0f64, -2.5, 0.125]).unwrap();
        let back: Tensor<f64> = t.cast::<f32>().cast();
        assert_eq!(t.data(), back.data());
    }

    #[test]
    fn clones_share_storage() {
        let t = Tensor::<f64>::zeros(&[4, 4]);
        let u = t.clone();
        assert!(std::ptr::eq(t.data().as_ptr(), u.data().as_ptr()));
    }
}
