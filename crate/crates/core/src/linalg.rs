//! Symmetric positive-definite matrices and Cholesky solves.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Symmetric matrix stored as its packed lower triangle, row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMatrix<S> {
    dim: usize,
    lower: Vec<S>,
}

#[inline]
fn tri(i: usize, j: usize) -> usize {
    debug_assert!(j <= i);
    i * (i + 1) / 2 + j
}

impl<S: Scalar> SpdMatrix<S> {
    /// Build from a full row-major matrix. Rejects asymmetric input and
    /// anything Cholesky cannot factor.
    pub fn from_full(dim: usize, entries: &[S]) -> Result<Self> {
        if entries.len() != dim * dim || dim == 0 {
            return Err(Error::ShapeMismatch {
                expected: vec![dim, dim],
                actual: vec![entries.len()],
            });
        }
        let mut lower = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in 0..=i {
                let (a, b) = (entries[i * dim + j], entries[j * dim + i]);
                let tol = S::of(1e-12) * (S::one() + a.abs().max(b.abs()));
                if (a - b).abs() > tol {
                    return Err(Error::InvalidArgument(format!("matrix not symmetric at ({i}, {j})")));
                }
                lower.push(a);
            }
        }
        let m = Self { dim, lower };
        m.cholesky()?;
        Ok(m)
    }

    pub fn from_tensor(m: &Tensor<S>) -> Result<Self> {
        if m.shape().len() != 2 || m.shape()[0] != m.shape()[1] {
            return Err(Error::InvalidShape(m.shape().to_vec()));
        }
        Self::from_full(m.shape()[0], m.as_slice())
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![S::one(); dim]).expect("identity is SPD")
    }

    pub fn diagonal(diag: &[S]) -> Result<Self> {
        let dim = diag.len();
        let mut lower = vec![S::zero(); dim * (dim + 1) / 2];
        for (i, &d) in diag.iter().enumerate() {
            lower[tri(i, i)] = d;
        }
        let m = Self { dim, lower };
        m.cholesky()?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        if j <= i {
            self.lower[tri(i, j)]
        } else {
            self.lower[tri(j, i)]
        }
    }

    pub fn to_tensor(&self) -> Tensor<S> {
        let n = self.dim;
        let data = (0..n * n).map(|k| self.get(k / n, k % n)).collect();
        Tensor::matrix(n, n, data).expect("square")
    }

    /// `a * self + c * I`. Stays SPD for `a >= 0`, `c > 0`.
    pub fn scaled_plus_identity(&self, a: S, c: S) -> Self {
        let mut lower: Vec<S> = self.lower.iter().map(|&v| a * v).collect();
        for i in 0..self.dim {
            lower[tri(i, i)] = lower[tri(i, i)] + c;
        }
        Self { dim: self.dim, lower }
    }

    pub fn matvec(&self, v: &[S]) -> Vec<S> {
        let n = self.dim;
        let mut out = vec![S::zero(); n];
        for i in 0..n {
            for j in 0..=i {
                let a = self.lower[tri(i, j)];
                out[i] = out[i] + a * v[j];
                if i != j {
                    out[j] = out[j] + a * v[i];
                }
            }
        }
        out
    }

    pub fn cholesky(&self) -> Result<Cholesky<S>> {
        let n = self.dim;
        let mut l = vec![S::zero(); n * (n + 1) / 2];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = self.lower[tri(i, j)];
                for k in 0..j {
                    sum = sum - l[tri(i, k)] * l[tri(j, k)];
                }
                if i == j {
                    if !(sum > S::zero()) || !sum.is_finite() {
                        return Err(Error::NotPositiveDefinite {
                            pivot: i,
                            value: sum.to_f64_lossy(),
                        });
                    }
                    l[tri(i, i)] = sum.sqrt();
                } else {
                    l[tri(i, j)] = sum / l[tri(j, j)];
                }
            }
        }
        Ok(Cholesky { dim: n, l })
    }
}

/// Lower-triangular factor `L` with `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky<S> {
    dim: usize,
    l: Vec<S>,
}

impl<S: Scalar> Cholesky<S> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solves `L z = b` in place.
    pub fn forward_substitute(&self, b: &mut [S]) {
        for i in 0..self.dim {
            let mut s = b[i];
            for k in 0..i {
                s = s - self.l[tri(i, k)] * b[k];
            }
            b[i] = s / self.l[tri(i, i)];
        }
    }

    /// Solves `Lᵀ x = z` in place.
    pub fn back_substitute(&self, b: &mut [S]) {
        for i in (0..self.dim).rev() {
            let mut s = b[i];
            for k in i + 1..self.dim {
                s = s - self.l[tri(k, i)] * b[k];
            }
            b[i] = s / self.l[tri(i, i)];
        }
    }

    pub fn solve(&self, b: &[S]) -> Vec<S> {
        let mut x = b.to_vec();
        self.forward_substitute(&mut x);
        self.back_substitute(&mut x);
        x
    }

    /// `L z`.
    pub fn lower_times(&self, z: &[S]) -> Vec<S> {
        (0..self.dim)
            .map(|i| (0..=i).map(|k| self.l[tri(i, k)] * z[k]).sum())
            .collect()
    }

    pub fn log_det(&self) -> S {
        (0..self.dim).map(|i| self.l[tri(i, i)].ln()).sum::<S>() * S::of(2.0)
    }

    /// Dense inverse, row-major.
    pub fn inverse(&self) -> Vec<S> {
        let n = self.dim;
        let mut inv = vec![S::zero(); n * n];
        let mut col = vec![S::zero(); n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = S::zero());
            col[j] = S::one();
            let x = self.solve(&col);
            for i in 0..n {
                inv[i * n + j] = x[i];
            }
        }
        // exact symmetry
        for i in 0..n {
            for j in 0..i {
                let avg = (inv[i * n + j] + inv[j * n + i]) * S::of(0.5);
                inv[i * n + j] = avg;
                inv[j * n + i] = avg;
            }
        }
        inv
    }
}

/// Solve `A x = b` for SPD `A`.
pub fn cholesky_solve<S: Scalar>(a: &SpdMatrix<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if b.len() != a.dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.dim()],
            actual: b.shape().to_vec(),
        });
    }
    let x = a.cholesky()?.solve(b.as_slice());
    Tensor::new(b.shape().to_vec(), x)
}
