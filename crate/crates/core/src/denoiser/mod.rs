//! Denoiser contract `x̂₀(x_t, t)` and its exact-Jacobian oracles.
//!
//! Three implementations live here: [`GmmDenoiser`] (analytic posterior
//! mean of a Gaussian mixture, exactly symmetric Jacobian), [`LinearDenoiser`]
//! (`M x + b`, any `M`) and [`MlpDenoiser`] (a small trained network).

mod format;
mod gmm;
mod linear;
mod mlp;

pub use gmm::{gmm_log_density, gmm_posterior_mean, gmm_responsibilities, gmm_score, GmmDenoiser, GmmPrior};
pub use linear::LinearDenoiser;
pub use mlp::{train_mlp_denoiser, Activation, MlpDenoiser, TrainConfig, TrainReport};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matvec, matvec_transposed, Tensor, DIM_CAP};

pub trait Denoiser<S: Scalar> {
    /// Flattened signal dimension.
    fn dim(&self) -> usize;

    /// Posterior-mean estimate of the clean signal. Output has the shape of
    /// `x_t`. Must be deterministic.
    fn denoise(&self, x_t: &Tensor<S>, t: usize) -> Result<Tensor<S>>;

    /// Dense `d x d` Jacobian `∂x̂₀/∂x_t`. Central differences unless the
    /// implementation knows it analytically.
    fn jacobian(&self, x_t: &Tensor<S>, t: usize) -> Result<Tensor<S>> {
        central_difference_jacobian(self, x_t, t)
    }

    /// `J v` through the dense Jacobian (oracle grade).
    fn jvp(&self, x_t: &Tensor<S>, t: usize, v: &Tensor<S>) -> Result<Tensor<S>> {
        x_t.ensure_same_shape(v)?;
        let j = self.jacobian(x_t, t)?;
        matvec(&j, v)?.reshape(x_t.shape())
    }

    /// `Jᵀ v`, the quantity backpropagation would deliver.
    fn vjp(&self, x_t: &Tensor<S>, t: usize, v: &Tensor<S>) -> Result<Tensor<S>> {
        x_t.ensure_same_shape(v)?;
        let j = self.jacobian(x_t, t)?;
        matvec_transposed(&j, v)?.reshape(x_t.shape())
    }
}

impl<S: Scalar, D: Denoiser<S> + ?Sized> Denoiser<S> for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn denoise(&self, x_t: &Tensor<S>, t: usize) -> Result<Tensor<S>> {
        (**self).denoise(x_t, t)
    }
    fn jacobian(&self, x_t: &Tensor<S>, t: usize) -> Result<Tensor<S>> {
        (**self).jacobian(x_t, t)
    }
    fn jvp(&self, x_t: &Tensor<S>, t: usize, v: &Tensor<S>) -> Result<Tensor<S>> {
        (**self).jvp(x_t, t, v)
    }
    fn vjp(&self, x_t: &Tensor<S>, t: usize, v: &Tensor<S>) -> Result<Tensor<S>> {
        (**self).vjp(x_t, t, v)
    }
}

pub(crate) fn check_input<S: Scalar>(x_t: &Tensor<S>, dim: usize) -> Result<()> {
    if x_t.len() != dim {
        return Err(Error::ShapeMismatch {
            expected: vec![dim],
            actual: x_t.shape().to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn check_dim_cap(dim: usize) -> Result<()> {
    if dim > DIM_CAP {
        return Err(Error::DimensionCap { dim, cap: DIM_CAP });
    }
    Ok(())
}

/// Step used for the dense central-difference Jacobian.
pub fn jacobian_fd_step<S: Scalar>(x_t: &Tensor<S>) -> S {
    S::of(1e-5) * x_t.norm_inf().max(S::one())
}

/// Column `j` is `[x̂₀(x + δ e_j) - x̂₀(x - δ e_j)] / 2δ` with
/// `δ = 1e-5 max(1, |x|_inf)`.
pub fn central_difference_jacobian<S, D>(den: &D, x_t: &Tensor<S>, t: usize) -> Result<Tensor<S>>
where
    S: Scalar,
    D: Denoiser<S> + ?Sized,
{
    let d = x_t.len();
    check_dim_cap(d)?;
    let step = jacobian_fd_step(x_t);
    let mut jac = vec![S::zero(); d * d];
    let mut probe = x_t.clone();
    for j in 0..d {
        let orig = probe.as_slice()[j];
        probe.as_mut_slice()[j] = orig + step;
        let plus = den.denoise(&probe, t)?;
        probe.as_mut_slice()[j] = orig - step;
        let minus = den.denoise(&probe, t)?;
        probe.as_mut_slice()[j] = orig;
        for (i, (&p, &m)) in plus.as_slice().iter().zip(minus.as_slice()).enumerate() {
            jac[i * d + j] = (p - m) / (step + step);
        }
    }
    let jac = Tensor::matrix(d, d, jac)?;
    if !jac.is_finite() {
        return Err(Error::NonFinite(format!("Jacobian at t={t}")));
    }
    Ok(jac)
}

pub fn exact_jacobian<S: Scalar, D: Denoiser<S> + ?Sized>(den: &D, x_t: &Tensor<S>, t: usize) -> Result<Tensor<S>> {
    check_dim_cap(x_t.len())?;
    den.jacobian(x_t, t)
}

pub fn jvp_exact<S: Scalar, D: Denoiser<S> + ?Sized>(
    den: &D,
    x_t: &Tensor<S>,
    t: usize,
    v: &Tensor<S>,
) -> Result<Tensor<S>> {
    check_dim_cap(x_t.len())?;
    den.jvp(x_t, t, v)
}

pub fn vjp_exact<S: Scalar, D: Denoiser<S> + ?Sized>(
    den: &D,
    x_t: &Tensor<S>,
    t: usize,
    v: &Tensor<S>,
) -> Result<Tensor<S>> {
    check_dim_cap(x_t.len())?;
    den.vjp(x_t, t, v)
}

/// Forward-difference `[x̂₀(x + δv) - x̂₀(x)] / δ`, the two-call JVP estimate.
pub fn jvp_forward_difference<S: Scalar, D: Denoiser<S> + ?Sized>(
    den: &D,
    x_t: &Tensor<S>,
    t: usize,
    v: &Tensor<S>,
    delta: S,
) -> Result<Tensor<S>> {
    let base = den.denoise(x_t, t)?;
    let mut probe = x_t.clone();
    probe.add_scaled(delta, v)?;
    let moved = den.denoise(&probe, t)?;
    Ok(moved.sub(&base)?.scale(S::one() / delta))
}
