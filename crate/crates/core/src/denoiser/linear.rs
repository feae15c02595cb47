use super::{check_input, Denoiser};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matvec, Tensor};

/// `x̂₀ = M x_t + b`, independent of `t`. Its Jacobian is `M`, symmetric or not.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDenoiser<S> {
    m: Tensor<S>,
    b: Tensor<S>,
}

impl<S: Scalar> LinearDenoiser<S> {
    pub fn new(m: Tensor<S>, b: Option<Tensor<S>>) -> Result<Self> {
        if m.shape().len() != 2 || m.shape()[0] != m.shape()[1] {
            return Err(Error::InvalidShape(m.shape().to_vec()));
        }
        let d = m.shape()[0];
        let b = b.unwrap_or_else(|| Tensor::zeros(&[d]));
        if b.len() != d {
            return Err(Error::ShapeMismatch {
                expected: vec![d],
                actual: b.shape().to_vec(),
            });
        }
        Ok(Self { m, b: b.flatten() })
    }

    pub fn matrix(&self) -> &Tensor<S> {
        &self.m
    }

    pub fn bias(&self) -> &Tensor<S> {
        &self.b
    }
}

impl<S: Scalar> Denoiser<S> for LinearDenoiser<S> {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn denoise(&self, x_t: &Tensor<S>, _t: usize) -> Result<Tensor<S>> {
        check_input(x_t, self.dim())?;
        matvec(&self.m, x_t)?.add(&self.b)?.reshape(x_t.shape())
    }

    fn jacobian(&self, x_t: &Tensor<S>, _t: usize) -> Result<Tensor<S>> {
        check_input(x_t, self.dim())?;
        Ok(self.m.clone())
    }
}
