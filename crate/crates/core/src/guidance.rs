//! Update directions on `x_t`.
//!
//! The Newton direction `h ≈ -J e` is a forward difference of the denoiser
//! along `-e`: two forward passes, nothing else. The backprop direction
//! `h = -Jᵀ e` is what gradient descent on `|A x̂₀(x_t) - y|²` uses; here it
//! comes from the dense Jacobian oracle and serves as the baseline.
//!
//! Sign: `h = [x̂₀(x_t - δe) - x̂₀(x_t)] / δ` and the caller adds `λ h`.

use std::cell::Cell;

use crate::denoiser::{jvp_exact, vjp_exact, Denoiser};
use crate::error::{Error, Result};
use crate::operators::MeasurementOp;
use crate::scalar::Scalar;
use crate::tensor::{cosine, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DirectionKind {
    NewtonFd,
    NewtonExact,
    BackpropExact,
}

impl DirectionKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::NewtonFd => "newton-fd",
            Self::NewtonExact => "newton-exact",
            Self::BackpropExact => "backprop-exact",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::NewtonFd, Self::NewtonExact, Self::BackpropExact]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceConfig {
    /// Forward-difference step. `None` picks [`default_delta`] per call.
    pub delta: Option<f64>,
    /// Multiplies `h`. Left at 1; the sampler's `λ` does the scaling.
    pub epsilon_scale: f64,
    pub direction_kind: DirectionKind,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            delta: None,
            epsilon_scale: 1.0,
            direction_kind: DirectionKind::NewtonFd,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidArgument(format!("delta must be > 0, got {d}")));
            }
        }
        if !self.epsilon_scale.is_finite() {
            return Err(Error::InvalidArgument("epsilon_scale must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectionResult<S> {
    pub h: Tensor<S>,
    pub e: Tensor<S>,
    /// Denoiser forward passes made by this call.
    pub forward_calls: usize,
    pub vjp_calls: usize,
    pub jvp_calls: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallCounts {
    pub forwards: usize,
    pub vjps: usize,
    pub jvps: usize,
}

impl std::ops::Sub for CallCounts {
    type Output = CallCounts;
    fn sub(self, rhs: Self) -> Self {
        CallCounts {
            forwards: self.forwards - rhs.forwards,
            vjps: self.vjps - rhs.vjps,
            jvps: self.jvps - rhs.jvps,
        }
    }
}

/// Counts what the sampler asks of a denoiser. Oracle products are
/// delegated to the wrapped model, so any forward passes they make
/// internally are not counted as forwards.
pub struct Metered<'a, D: ?Sized> {
    inner: &'a D,
    counts: Cell<CallCounts>,
}

impl<'a, D: ?Sized> Metered<'a, D> {
    pub fn new(inner: &'a D) -> Self {
        Self {
            inner,
            counts: Cell::new(CallCounts::default()),
        }
    }

    pub fn counts(&self) -> CallCounts {
        self.counts.get()
    }

    fn bump(&self, f: impl FnOnce(&mut CallCounts)) {
        let mut c = self.counts.get();
        f(&mut c);
        self.counts.set(c);
    }
}

impl<S: Scalar, D: Denoiser<S> + ?Sized> Denoiser<S> for Metered<'_, D> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn denoise(&self, x_t: &Tensor<S>, t: usize) -> Result<Tensor<S>> {
        self.bump(|c| c.forwards += 1);
        self.inner.denoise(x_t, t)
    }

    fn jacobian(&self, x_t: &Tensor<S>, t: usize) -> Result<Tensor<S>> {
        self.inner.jacobian(x_t, t)
    }

    fn jvp(&self, x_t: &Tensor<S>, t: usize, v: &Tensor<S>) -> Result<Tensor<S>> {
        self.bump(|c| c.jvps += 1);
        self.inner.jvp(x_t, t, v)
    }

    fn vjp(&self, x_t: &Tensor<S>, t: usize, v: &Tensor<S>) -> Result<Tensor<S>> {
        self.bump(|c| c.vjps += 1);
        self.inner.vjp(x_t, t, v)
    }
}

/// `Aᵀ(A x̂₀ - y)`, shaped like `x0_hat`.
pub fn error_vector<S: Scalar>(op: &MeasurementOp, x0_hat: &Tensor<S>, y: &Tensor<S>) -> Result<Tensor<S>> {
    let ax = op.apply(x0_hat)?;
    if ax.len() != y.len() {
        return Err(Error::ShapeMismatch {
            expected: op.output_shape().to_vec(),
            actual: y.shape().to_vec(),
        });
    }
    let r = ax.zip_map(&y.clone().reshape(ax.shape())?, |a, b| a - b)?;
    op.adjoint(&r)?.reshape(x0_hat.shape())
}

/// `1e-3 (1 + |x_t|∞) / (1 + |e|∞)`, clamped to `[1e-6, 1e-1]`.
pub fn default_delta<S: Scalar>(x_t: &Tensor<S>, e: &Tensor<S>) -> S {
    let d = 1e-3 * (1.0 + x_t.norm_inf().to_f64_lossy()) / (1.0 + e.norm_inf().to_f64_lossy());
    S::of(d.clamp(1e-6, 1e-1))
}

fn is_zero<S: Scalar>(e: &Tensor<S>) -> bool {
    e.as_slice().iter().all(|v| *v == S::zero())
}

/// Newton direction from two forward passes.
pub fn newton_direction_fd<S: Scalar, D: Denoiser<S> + ?Sized>(
    den: &D,
    x_t: &Tensor<S>,
    t: usize,
    e: &Tensor<S>,
    delta: Option<S>,
) -> Result<DirectionResult<S>> {
    let base = den.denoise(x_t, t)?;
    let mut r = newton_direction_fd_from(den, x_t, t, &base, e, delta)?;
    r.forward_calls += 1;
    Ok(r)
}

/// As [`newton_direction_fd`] with `x̂₀(x_t)` already evaluated; makes one
/// forward pass (none when `e = 0`).
pub fn newton_direction_fd_from<S: Scalar, D: Denoiser<S> + ?Sized>(
    den: &D,
    x_t: &Tensor<S>,
    t: usize,
    x0_hat: &Tensor<S>,
    e: &Tensor<S>,
    delta: Option<S>,
) -> Result<DirectionResult<S>> {
    x_t.ensure_same_shape(e)?;
    if is_zero(e) {
        return Ok(DirectionResult {
            h: x_t.zeros_like(),
            e: e.clone(),
            forward_calls: 0,
            vjp_calls: 0,
            jvp_calls: 0,
        });
    }
    let delta = delta.unwrap_or_else(|| default_delta(x_t, e));
    if !(delta > S::zero()) {
        return Err(Error::InvalidArgument(format!("delta must be > 0, got {delta}")));
    }
    let mut probe = x_t.clone();
    probe.add_scaled(-delta, e)?;
    let moved = den.denoise(&probe, t)?;
    let inv = S::one() / delta;
    let h = moved.zip_map(x0_hat, |m, b| (m - b) * inv)?;
    if !h.is_finite() {
        return Err(Error::NonFinite(format!(
            "Newton direction at t={t} (delta={:e}, |e|={:e})",
            delta.to_f64_lossy(),
            crate::tensor::norm(e).to_f64_lossy()
        )));
    }
    Ok(DirectionResult {
        h,
        e: e.clone(),
        forward_calls: 1,
        vjp_calls: 0,
        jvp_calls: 0,
    })
}

/// `-J e` through the exact JVP oracle.
pub fn newton_direction_exact<S: Scalar, D: Denoiser<S> + ?Sized>(
    den: &D,
    x_t: &Tensor<S>,
    t: usize,
    e: &Tensor<S>,
) -> Result<DirectionResult<S>> {
    let h = jvp_exact(den, x_t, t, e)?.scale(-S::one());
    Ok(DirectionResult {
        h,
        e: e.clone(),
        forward_calls: 0,
        vjp_calls: 0,
        jvp_calls: 1,
    })
}

/// `-Jᵀ e` through the exact VJP oracle.
pub fn backprop_direction<S: Scalar, D: Denoiser<S> + ?Sized>(
    den: &D,
    x_t: &Tensor<S>,
    t: usize,
    e: &Tensor<S>,
) -> Result<DirectionResult<S>> {
    let h = vjp_exact(den, x_t, t, e)?.scale(-S::one());
    Ok(DirectionResult {
        h,
        e: e.clone(),
        forward_calls: 0,
        vjp_calls: 1,
        jvp_calls: 0,
    })
}

/// Direction of the configured kind given `x̂₀(x_t)` and `e`, scaled by
/// `epsilon_scale`.
pub fn direction<S: Scalar, D: Denoiser<S> + ?Sized>(
    den: &D,
    x_t: &Tensor<S>,
    t: usize,
    x0_hat: &Tensor<S>,
    e: &Tensor<S>,
    cfg: &GuidanceConfig,
) -> Result<DirectionResult<S>> {
    let mut r = match cfg.direction_kind {
        DirectionKind::NewtonFd => newton_direction_fd_from(den, x_t, t, x0_hat, e, cfg.delta.map(S::of))?,
        DirectionKind::NewtonExact => newton_direction_exact(den, x_t, t, e)?,
        DirectionKind::BackpropExact => backprop_direction(den, x_t, t, e)?,
    };
    if cfg.epsilon_scale != 1.0 {
        r.h = r.h.scale(S::of(cfg.epsilon_scale));
    }
    Ok(r)
}

/// Cosine similarity of two directions.
pub fn direction_divergence<S: Scalar>(h_newton: &Tensor<S>, h_backprop: &Tensor<S>) -> Result<S> {
    cosine(h_newton, h_backprop)
}
