//! Dense real arrays and the handful of vector/matrix kernels the rest of
//! the crate needs. Matrices are rank-2 tensors in row-major order.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest signal the dense oracles accept.
pub const DIM_CAP: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidShape(shape));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                actual: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    /// Rank-1 tensor.
    pub fn from_vec(data: Vec<S>) -> Self {
        assert!(!data.is_empty(), "empty tensor");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| S::of(v)).collect())
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        assert!(!shape.is_empty() && !shape.contains(&0), "invalid shape {shape:?}");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    /// Row-major `rows x cols` matrix.
    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(&[n, n]);
        for i in 0..n {
            m.data[i * n + i] = S::one();
        }
        m
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

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64_lossy()).collect()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    /// Same data viewed as a rank-1 vector.
    pub fn flatten(self) -> Self {
        let n = self.data.len();
        Self {
            shape: vec![n],
            data: self.data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                actual: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn ensure_same_len(&self, other: &Self) -> Result<()> {
        if self.data.len() != other.data.len() {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                actual: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        self.ensure_same_len(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, alpha: S) -> Self {
        self.map(|v| alpha * v)
    }

    /// In-place `self += alpha * x`.
    pub fn add_scaled(&mut self, alpha: S, x: &Self) -> Result<()> {
        self.ensure_same_len(x)?;
        for (a, &b) in self.data.iter_mut().zip(&x.data) {
            *a = *a + alpha * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> S {
        self.sum() / S::of(self.data.len() as f64)
    }

    pub fn norm_inf(&self) -> S {
        self.data
            .iter()
            .fold(S::zero(), |m, v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<S> {
        Ok(self.sub(other)?.norm_inf())
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    /// Matrix entry `(i, j)`; panics on non-matrix tensors.
    pub fn at(&self, i: usize, j: usize) -> S {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn transpose(&self) -> Result<Self> {
        if self.shape.len() != 2 {
            return Err(Error::InvalidShape(self.shape.clone()));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::matrix(c, r, out)
    }

    /// Frobenius norm of `M - Mᵀ` divided by that of `M`.
    pub fn asymmetry_score(&self) -> Result<S> {
        let t = self.transpose()?;
        let diff = norm(&self.sub(&t)?);
        let n = norm(self);
        if n == S::zero() {
            return Ok(S::zero());
        }
        Ok(diff / n)
    }
}

pub fn dot<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<S> {
    a.ensure_same_len(b)?;
    Ok(a.data.iter().zip(&b.data).map(|(&x, &y)| x * y).sum())
}

/// Euclidean norm over all entries.
pub fn norm<S: Scalar>(a: &Tensor<S>) -> S {
    a.data.iter().map(|&x| x * x).sum::<S>().sqrt()
}

/// `alpha * x + y`.
pub fn axpy<S: Scalar>(alpha: S, x: &Tensor<S>, y: &Tensor<S>) -> Result<Tensor<S>> {
    let mut out = y.clone();
    out.add_scaled(alpha, x)?;
    Ok(out)
}

/// Matrix-vector product. `v` may have any shape with `cols(m)` entries;
/// the result is rank-1 of length `rows(m)`.
pub fn matvec<S: Scalar>(m: &Tensor<S>, v: &Tensor<S>) -> Result<Tensor<S>> {
    if m.shape.len() != 2 {
        return Err(Error::InvalidShape(m.shape.clone()));
    }
    let (r, c) = (m.shape[0], m.shape[1]);
    if v.len() != c {
        return Err(Error::ShapeMismatch {
            expected: vec![c],
            actual: v.shape.clone(),
        });
    }
    let data = m
        .data
        .chunks_exact(c)
        .map(|row| row.iter().zip(&v.data).map(|(&a, &b)| a * b).sum())
        .collect();
    Tensor::new(vec![r], data)
}

/// `mᵀ v` without materialising the transpose.
pub fn matvec_transposed<S: Scalar>(m: &Tensor<S>, v: &Tensor<S>) -> Result<Tensor<S>> {
    if m.shape.len() != 2 {
        return Err(Error::InvalidShape(m.shape.clone()));
    }
    let (r, c) = (m.shape[0], m.shape[1]);
    if v.len() != r {
        return Err(Error::ShapeMismatch {
            expected: vec![r],
            actual: v.shape.clone(),
        });
    }
    let mut out = vec![S::zero(); c];
    for (row, &vi) in m.data.chunks_exact(c).zip(&v.data) {
        for (o, &a) in out.iter_mut().zip(row) {
            *o = *o + a * vi;
        }
    }
    Tensor::new(vec![c], out)
}

/// Cosine similarity; errors when either input is the zero vector.
pub fn cosine<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<S> {
    let (na, nb) = (norm(a), norm(b));
    if na == S::zero() || nb == S::zero() {
        return Err(Error::InvalidArgument("cosine of a zero vector".into()));
    }
    Ok(dot(a, b)? / (na * nb))
}
