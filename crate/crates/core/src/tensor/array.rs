use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::{Element, Scalar};

/// Dense row-major n-dimensional array.
///
/// Image batches and feature maps use `N × C × H × W`. A scalar is stored as
/// rank 1 with a single element.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E> {
    dims: Vec<usize>,
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    pub fn new(dims: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("dims {dims:?} hold {expected} elements but data has {}", data.len()),
            ));
        }
        if dims.len() > 4 {
            return Err(Error::shape("tensor", format!("rank {} exceeds 4", dims.len())));
        }
        Ok(Tensor { dims, data })
    }

    pub fn filled(dims: &[usize], value: E) -> Self {
        let n = dims.iter().product();
        Tensor { dims: dims.to_vec(), data: vec![value; n] }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::filled(dims, E::default())
    }

    pub fn scalar(value: E) -> Self {
        Tensor { dims: vec![1], data: vec![value] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", format!("cannot view {:?} as {dims:?}", self.dims)));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    /// Interpret as `N × C × H × W`, failing with the operation name otherwise.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.dims[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::shape(op, format!("expected a rank-4 tensor, got dims {:?}", self.dims))),
        }
    }

    /// Stack equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor<E>]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::InvalidArgument("cannot stack zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.dims != first.dims {
                return Err(Error::shape("stack", format!("dims {:?} differ from {:?}", t.dims, first.dims)));
            }
            data.extend_from_slice(&t.data);
        }
        let mut dims = vec![items.len()];
        dims.extend_from_slice(&first.dims);
        Tensor::new(dims, data)
    }

    /// Slice `index` along the leading axis.
    pub fn index0(&self, index: usize) -> Tensor<E> {
        let inner: usize = self.dims[1..].iter().product();
        Tensor { dims: self.dims[1..].to_vec(), data: self.data[index * inner..(index + 1) * inner].to_vec() }
    }
}

impl<T: Scalar> Tensor<T> {
    /// Zero-mean normal samples with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(dims: &[usize], std: f64, rng: &mut R) -> Self {
        let n: usize = dims.iter().product();
        let normal = Normal::new(0.0, std.max(0.0)).expect("finite std");
        let data = (0..n).map(|_| T::of(normal.sample(rng))).collect();
        Tensor { dims: dims.to_vec(), data }
    }

    pub fn uniform<R: Rng + ?Sized>(dims: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| T::of(rng.gen_range(lo..hi))).collect();
        Tensor { dims: dims.to_vec(), data }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { dims: self.dims.clone(), data: self.data.iter().map(|v| U::of(v.as_f64())).collect() }
    }

    /// First element; meant for scalar losses.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality of dims and payload (distinguishes `0.0`/`-0.0` and NaN payloads).
    pub fn bit_eq(&self, other: &Tensor<T>) -> bool {
        self.dims == other.dims
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.bits() == b.bits())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_length() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![1, 1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn stack_and_index_invert() {
        let a = Tensor::new(vec![2], vec![1.0f32, 2.0]).unwrap();
        let b = Tensor::new(vec![2], vec![3.0f32, 4.0]).unwrap();
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.dims(), &[2, 2]);
        assert_eq!(s.index0(1), b);
    }

    #[test]
    fn bit_eq_sees_signed_zero() {
        let a = Tensor::scalar(0.0f64);
        let b = Tensor::scalar(-0.0f64);
        assert_eq!(a, b);
        assert!(!a.bit_eq(&b));
    }
}
