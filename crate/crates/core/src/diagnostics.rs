//! Jacobian symmetry probe, Newton-vs-backprop direction comparison and
//! image metrics.

use crate::datasets::{box_blur, grid_image, rescale_unit, GridTexture, THIN_GRID};
use crate::denoiser::{exact_jacobian, jacobian_fd_step, Denoiser};
use crate::error::{Error, Result};
use crate::guidance::{backprop_direction, direction_divergence, error_vector, newton_direction_fd};
use crate::operators::MeasurementOp;
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;
use crate::tensor::{dot, norm, Tensor};

pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Clone, Debug, PartialEq)]
pub struct JacobianPair {
    pub a: usize,
    pub b: usize,
    /// `∂x̂₀[a] / ∂x_t[b]`
    pub j_ab: f64,
    /// `∂x̂₀[b] / ∂x_t[a]`
    pub j_ba: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymmetryProbeResult {
    pub t: usize,
    pub pairs: Vec<JacobianPair>,
    /// `|J - Jᵀ|_F / |J|_F` of the dense Jacobian at the probe point.
    pub asymmetry_score: f64,
}

impl SymmetryProbeResult {
    pub fn max_pair_gap(&self) -> f64 {
        self.pairs.iter().map(|p| (p.j_ab - p.j_ba).abs()).fold(0.0, f64::max)
    }
}

/// Column `b` of the Jacobian by central differences along `e_b`.
fn fd_column<S: Scalar, D: Denoiser<S> + ?Sized>(den: &D, x_t: &Tensor<S>, t: usize, b: usize) -> Result<Vec<f64>> {
    let step = jacobian_fd_step(x_t);
    let mut probe = x_t.clone();
    probe.as_mut_slice()[b] = x_t.as_slice()[b] + step;
    let plus = den.denoise(&probe, t)?;
    probe.as_mut_slice()[b] = x_t.as_slice()[b] - step;
    let minus = den.denoise(&probe, t)?;
    let inv = (step + step).recip();
    Ok(plus
        .as_slice()
        .iter()
        .zip(minus.as_slice())
        .map(|(&p, &m)| ((p - m) * inv).to_f64_lossy())
        .collect())
}

/// Samples `n_pairs` coordinate pairs `a != b` and estimates `J[a,b]` and
/// `J[b,a]` by directional central differences.
pub fn jacobian_symmetry_probe<S: Scalar, D: Denoiser<S> + ?Sized>(
    den: &D,
    x_t: &Tensor<S>,
    t: usize,
    n_pairs: usize,
    rng: &mut RngState,
) -> Result<SymmetryProbeResult> {
    let d = x_t.len();
    if n_pairs == 0 {
        return Err(Error::InvalidArgument("n_pairs must be >= 1".into()));
    }
    if d < 2 {
        return Err(Error::InvalidArgument("need at least two coordinates".into()));
    }
    let jac = exact_jacobian(den, x_t, t)?;
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let a = rng.below(0, d);
        let mut b = rng.below(0, d - 1);
        if b >= a {
            b += 1;
        }
        let col_b = fd_column(den, x_t, t, b)?;
        let col_a = fd_column(den, x_t, t, a)?;
        pairs.push(JacobianPair {
            a,
            b,
            j_ab: col_b[a],
            j_ba: col_a[b],
        });
    }
    Ok(SymmetryProbeResult {
        t,
        pairs,
        asymmetry_score: jac.asymmetry_score()?.to_f64_lossy(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareConfig {
    pub height: usize,
    pub width: usize,
    pub texture: GridTexture,
    pub t: usize,
    pub updates: usize,
    pub lambda: f64,
    pub blur: usize,
    /// Side of the square constraint patch at the image centre.
    pub patch: usize,
    /// Gray level the patch is constrained to; not a value grid images take.
    pub patch_value: f64,
    pub delta: Option<f64>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            texture: THIN_GRID,
            t: 800,
            updates: 5,
            lambda: 1.0,
            blur: 3,
            patch: 4,
            patch_value: 0.0,
            delta: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectionCompareResult<S> {
    /// Blurred, rescaled grid image the start point is noised from.
    pub initial: Tensor<S>,
    pub patch: Vec<usize>,
    pub x_t: Tensor<S>,
    /// Cost `|A x̂₀ - y|²` before each update and after the last one.
    pub cost_newton: Vec<f64>,
    pub cost_backprop: Vec<f64>,
    /// Cosine between the Newton and backprop directions at each step of the
    /// Newton branch.
    pub cosine: Vec<f64>,
    pub final_newton: Tensor<S>,
    pub final_backprop: Tensor<S>,
}

fn cost<S: Scalar>(op: &MeasurementOp, x0: &Tensor<S>, y: &Tensor<S>) -> Result<f64> {
    let r = op.apply(x0)?.sub(y)?;
    Ok(dot(&r, &r)?.to_f64_lossy())
}

/// Runs `updates` steps `x_t += λ h` from the same noised start under the
/// Newton (forward-difference) and backprop directions, constraining the
/// centre patch of `x̂₀` to `patch_value`.
pub fn direction_compare_experiment<S: Scalar, D: Denoiser<S> + ?Sized>(
    den: &D,
    sched: &NoiseSchedule<S>,
    cfg: &CompareConfig,
    rng: &mut RngState,
) -> Result<DirectionCompareResult<S>> {
    let (h, w) = (cfg.height, cfg.width);
    if cfg.patch == 0 || cfg.patch > h.min(w) {
        return Err(Error::InvalidArgument(format!(
            "patch {} does not fit {h}x{w}",
            cfg.patch
        )));
    }
    let initial = rescale_unit(&box_blur(&grid_image::<S>(h, w, cfg.texture, (0, 0), 1.0), cfg.blur));
    let (r0, c0) = ((h - cfg.patch) / 2, (w - cfg.patch) / 2);
    let patch: Vec<usize> = (0..cfg.patch * cfg.patch)
        .map(|k| (r0 + k / cfg.patch) * w + c0 + k % cfg.patch)
        .collect();
    let op = MeasurementOp::mask(&[h, w], &patch)?;
    let y = Tensor::full(&[patch.len()], S::of(cfg.patch_value));
    let x_t = sched.forward_noise(&initial, cfg.t, rng)?;
    let lambda = S::of(cfg.lambda);
    let delta = cfg.delta.map(S::of);

    let mut cosine = Vec::with_capacity(cfg.updates);
    let mut cost_newton = Vec::with_capacity(cfg.updates + 1);
    let mut x = x_t.clone();
    for _ in 0..cfg.updates {
        let x0 = den.denoise(&x, cfg.t)?;
        cost_newton.push(cost(&op, &x0, &y)?);
        let e = error_vector(&op, &x0, &y)?;
        let hn = newton_direction_fd(den, &x, cfg.t, &e, delta)?.h;
        let hb = backprop_direction(den, &x, cfg.t, &e)?.h;
        cosine.push(direction_divergence(&hn, &hb)?.to_f64_lossy());
        x.add_scaled(lambda, &hn)?;
    }
    let final_newton = den.denoise(&x, cfg.t)?;
    cost_newton.push(cost(&op, &final_newton, &y)?);

    let mut cost_backprop = Vec::with_capacity(cfg.updates + 1);
    let mut x = x_t.clone();
    for _ in 0..cfg.updates {
        let x0 = den.denoise(&x, cfg.t)?;
        cost_backprop.push(cost(&op, &x0, &y)?);
        let e = error_vector(&op, &x0, &y)?;
        x.add_scaled(lambda, &backprop_direction(den, &x, cfg.t, &e)?.h)?;
    }
    let final_backprop = den.denoise(&x, cfg.t)?;
    cost_backprop.push(cost(&op, &final_backprop, &y)?);

    Ok(DirectionCompareResult {
        initial,
        patch,
        x_t,
        cost_newton,
        cost_backprop,
        cosine,
        final_newton,
        final_backprop,
    })
}

pub fn mse<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let d = a.sub(b)?;
    Ok(d.as_slice().iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>() / d.len() as f64)
}

/// `10 log₁₀(peak² / mse)`, capped at [`PSNR_CAP_DB`].
pub fn psnr<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("peak must be > 0, got {peak}")));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB))
}

/// `|A x - y|₂`.
pub fn constraint_residual<S: Scalar>(op: &MeasurementOp, x: &Tensor<S>, y: &Tensor<S>) -> Result<f64> {
    let ax = op.apply(x)?;
    if ax.len() != y.len() {
        return Err(Error::ShapeMismatch {
            expected: op.output_shape().to_vec(),
            actual: y.shape().to_vec(),
        });
    }
    Ok(norm(&ax.sub(&y.clone().reshape(ax.shape())?)?).to_f64_lossy())
}
