use std::fmt;

use super::Real;
use crate::{Error, Result};

/// `(n, c, h, w)` extent of a [`Tensor4`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one `h x w` plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one batch item.
    pub const fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense NCHW tensor with an optional gradient buffer of the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(shape: Shape4) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.len()],
            grad: None,
        }
    }

    pub fn full(shape: Shape4, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "tensor {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    /// Attaches a zeroed gradient buffer.
    pub fn with_grad(mut self) -> Self {
        self.grad = Some(vec![T::zero(); self.data.len()]);
        self
    }

    #[inline]
    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    #[inline]
    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    /// Split borrow of values and gradient.
    pub fn data_and_grad_mut(&mut self) -> (&mut [T], Option<&mut [T]>) {
        (&mut self.data, self.grad.as_deref_mut())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        let s = self.shape;
        self.data[((n * s.c + c) * s.h + y) * s.w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut T {
        let s = self.shape;
        &mut self.data[((n * s.c + c) * s.h + y) * s.w + x]
    }

    /// Contiguous data of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let len = self.shape.item();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
            && self.grad.as_ref().is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }

    pub fn ensure_shape(&self, want: Shape4, what: &str) -> Result<()> {
        if self.shape != want {
            return Err(Error::shape(format!(
                "{what}: expected {want}, got {}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Converts precision, dropping the gradient buffer.
    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            grad: None,
        }
    }

    /// Inner product of the value buffers.
    pub fn dot(&self, other: &Self) -> Result<T> {
        other.ensure_shape(self.shape, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }
}
