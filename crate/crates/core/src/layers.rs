//! Two-layer decomposition `x₀ = m x₀¹ + (1 - m) x₀²`.
//!
//! Each round samples a hard mask from `m`, asks each layer's denoiser to
//! inpaint its unowned pixels several times, fits a per-pixel Gaussian to
//! each layer's samples and sets `m` to the posterior probability that the
//! input pixel came from layer 1.

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::operators::{Measurement, MeasurementOp};
use crate::rng::{gaussian_sample, RngState};
use crate::sampler::{sample_from, SamplerConfig};
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

pub const MASK_FLOOR: f64 = 0.01;
pub const MASK_CEIL: f64 = 0.99;
pub const VARIANCE_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerConfig {
    pub iterations: usize,
    /// Inpainted samples per layer per round.
    pub samples_per_layer: usize,
    /// `None` means `round(0.5 T)`.
    pub t_probe: Option<usize>,
    /// Scale of the extra noise put on unobserved pixels of `x_t`.
    pub perturb_sigma: f64,
    /// The short constrained run from `t_probe`.
    pub sampler: SamplerConfig,
}

impl Default for LayerConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            samples_per_layer: 5,
            t_probe: None,
            perturb_sigma: 0.1,
            sampler: SamplerConfig {
                steps: 20,
                k: 3,
                lambda: 1.0,
                restarts: 0,
                eta: 0.0,
                ..SamplerConfig::default()
            },
        }
    }
}

impl LayerConfig {
    pub fn t_probe(&self, t_max: usize) -> usize {
        self.t_probe.unwrap_or_else(|| (0.5 * t_max as f64).round() as usize)
    }

    pub fn validate(&self, t_max: usize) -> Result<()> {
        if self.iterations == 0 || self.samples_per_layer == 0 {
            return Err(Error::InvalidArgument(
                "iterations and samples_per_layer must be >= 1".into(),
            ));
        }
        let tp = self.t_probe(t_max);
        if tp == 0 || tp > t_max {
            return Err(Error::InvalidArgument(format!(
                "t_probe must be in 1..={t_max}, got {tp}"
            )));
        }
        if !(self.perturb_sigma >= 0.0 && self.perturb_sigma.is_finite()) {
            return Err(Error::InvalidArgument("perturb_sigma must be >= 0".into()));
        }
        self.sampler.validate(t_max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerRound {
    pub iteration: usize,
    /// RMS of `x - (m μ¹ + (1 - m) μ²)` after this round's mask update.
    pub blend_rms: f64,
    pub mask_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerResult<S> {
    pub layer1: Tensor<S>,
    pub layer2: Tensor<S>,
    pub mask: Tensor<S>,
    pub rounds: Vec<LayerRound>,
    /// RMS of `x - (m x₀¹ + (1 - m) x₀²)` for the returned layers.
    pub blend_rms: f64,
}

impl<S: Scalar> LayerResult<S> {
    pub fn reconstruction(&self) -> Result<Tensor<S>> {
        blend(&self.mask, &self.layer1, &self.layer2)
    }
}

/// `m a + (1 - m) b`.
pub fn blend<S: Scalar>(m: &Tensor<S>, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    m.ensure_same_shape(a)?;
    m.ensure_same_shape(b)?;
    let data = m
        .as_slice()
        .iter()
        .zip(a.as_slice().iter().zip(b.as_slice()))
        .map(|(&w, (&x, &y))| w * x + (S::one() - w) * y)
        .collect();
    Tensor::new(m.shape().to_vec(), data)
}

pub fn rms_difference<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    let d = a.sub(b)?;
    Ok((d.as_slice().iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>() / d.len() as f64).sqrt())
}

/// Independent `Bernoulli(m_i)` per pixel, as 0/1 values.
pub fn sample_binary_mask<S: Scalar>(m: &Tensor<S>, rng: &mut RngState) -> Tensor<S> {
    let mut out = m.zeros_like();
    for (o, p) in out.as_mut_slice().iter_mut().zip(m.as_slice()) {
        if rng.bernoulli(p.to_f64_lossy()) {
            *o = S::one();
        }
    }
    out
}

/// `K` inpainted versions of `x0_input` from one layer's denoiser: pixels
/// where `binary_mask` is 1 are observed, the rest are filled in.
///
/// All `K` runs share one forward-noised `x_t` at `t_probe`; run `k` adds
/// `perturb_sigma` noise on the unobserved pixels and then runs the
/// constrained sampler from `t_probe` to 0.
pub fn layer_inpaint_estimates<S: Scalar, D: Denoiser<S> + ?Sized>(
    den: &D,
    sched: &NoiseSchedule<S>,
    x0_input: &Tensor<S>,
    binary_mask: &Tensor<S>,
    cfg: &LayerConfig,
    rng: &mut RngState,
) -> Result<Vec<Tensor<S>>> {
    x0_input.ensure_same_shape(binary_mask)?;
    cfg.validate(sched.t_max())?;
    let t_probe = cfg.t_probe(sched.t_max());
    let observed: Vec<usize> = (0..binary_mask.len())
        .filter(|&i| binary_mask.as_slice()[i] > S::of(0.5))
        .collect();
    let (meas, sampler_cfg) = if observed.is_empty() {
        // nothing to honour: plain DDIM from t_probe
        let op = MeasurementOp::identity(x0_input.shape())?;
        let cfg = SamplerConfig {
            k: 0,
            ..cfg.sampler.clone()
        };
        (Measurement::new(op, x0_input.clone(), 0.0)?, cfg)
    } else {
        let op = MeasurementOp::mask(x0_input.shape(), &observed)?;
        let y = op.apply(x0_input)?;
        (Measurement::new(op, y, 0.0)?, cfg.sampler.clone())
    };
    let x_t = sched.forward_noise(x0_input, t_probe, rng)?;
    let mut out = Vec::with_capacity(cfg.samples_per_layer);
    for _ in 0..cfg.samples_per_layer {
        let mut run_rng = rng.fork();
        let mut start = x_t.clone();
        if cfg.perturb_sigma > 0.0 {
            let z = gaussian_sample::<S>(&mut run_rng, x_t.shape());
            let sigma = S::of(cfg.perturb_sigma);
            for ((s, &z), &b) in start
                .as_mut_slice()
                .iter_mut()
                .zip(z.as_slice())
                .zip(binary_mask.as_slice())
            {
                if b <= S::of(0.5) {
                    *s = *s + sigma * z;
                }
            }
        }
        let (x0, _) = sample_from(den, sched, &meas, &sampler_cfg, start, t_probe, &mut run_rng)?;
        out.push(x0);
    }
    Ok(out)
}

/// Per-pixel sample mean and unbiased variance, floored at
/// [`VARIANCE_FLOOR`]. With one estimate the variance is the floor.
pub fn fit_pixel_gaussians<S: Scalar>(estimates: &[Tensor<S>]) -> Result<(Tensor<S>, Tensor<S>)> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::InvalidArgument("no estimates to fit".into()))?;
    for e in estimates {
        first.ensure_same_shape(e)?;
    }
    let k = estimates.len();
    let n = first.len();
    let floor = S::of(VARIANCE_FLOOR);
    let mut mean = vec![S::zero(); n];
    let mut var = vec![floor; n];
    for i in 0..n {
        let m = estimates.iter().map(|e| e.as_slice()[i]).sum::<S>() / S::of(k as f64);
        mean[i] = m;
        if k >= 2 {
            let ss = estimates.iter().map(|e| (e.as_slice()[i] - m).powi(2)).sum::<S>();
            var[i] = (ss / S::of((k - 1) as f64)).max(floor);
        }
    }
    Ok((
        Tensor::new(first.shape().to_vec(), mean)?,
        Tensor::new(first.shape().to_vec(), var)?,
    ))
}

/// Posterior probability that each input pixel belongs to layer 1 under the
/// two per-pixel Gaussians with equal prior odds, clamped to
/// `[MASK_FLOOR, MASK_CEIL]`.
pub fn update_mask<S: Scalar>(
    x0_input: &Tensor<S>,
    mu1: &Tensor<S>,
    v1: &Tensor<S>,
    mu2: &Tensor<S>,
    v2: &Tensor<S>,
) -> Result<Tensor<S>> {
    for t in [mu1, v1, mu2, v2] {
        x0_input.ensure_same_shape(t)?;
    }
    let log_n = |x: f64, mu: f64, v: f64| -0.5 * ((x - mu).powi(2) / v + v.ln());
    let data = (0..x0_input.len())
        .map(|i| {
            let x = x0_input.as_slice()[i].to_f64_lossy();
            let l1 = log_n(x, mu1.as_slice()[i].to_f64_lossy(), v1.as_slice()[i].to_f64_lossy());
            let l2 = log_n(x, mu2.as_slice()[i].to_f64_lossy(), v2.as_slice()[i].to_f64_lossy());
            // 1 / (1 + exp(l2 - l1)) without overflow
            let r = if l1 >= l2 {
                1.0 / (1.0 + (l2 - l1).exp())
            } else {
                let q = (l1 - l2).exp();
                q / (1.0 + q)
            };
            S::of(r.clamp(MASK_FLOOR, MASK_CEIL))
        })
        .collect();
    Tensor::new(x0_input.shape().to_vec(), data)
}

/// Full decomposition. `m` starts uniform in `(0, 1)`; after the last round
/// each layer is its per-pixel mean with the input copied onto the pixels it
/// owns under the hard mask `m >= 0.5`.
pub fn infer_layers<S: Scalar, D1, D2>(
    den1: &D1,
    den2: &D2,
    sched: &NoiseSchedule<S>,
    x0_input: &Tensor<S>,
    cfg: &LayerConfig,
    rng: &mut RngState,
) -> Result<LayerResult<S>>
where
    D1: Denoiser<S> + ?Sized,
    D2: Denoiser<S> + ?Sized,
{
    cfg.validate(sched.t_max())?;
    let mut m = x0_input.zeros_like();
    for v in m.as_mut_slice() {
        *v = S::of(rng.uniform().clamp(MASK_FLOOR, MASK_CEIL));
    }
    let mut rounds = Vec::with_capacity(cfg.iterations);
    let mut mu1 = x0_input.clone();
    let mut mu2 = x0_input.clone();
    for iteration in 0..cfg.iterations {
        let hard = sample_binary_mask(&m, rng);
        let complement = hard.map(|b| S::one() - b);
        let est1 = layer_inpaint_estimates(den1, sched, x0_input, &hard, cfg, rng)?;
        let est2 = layer_inpaint_estimates(den2, sched, x0_input, &complement, cfg, rng)?;
        let (m1, v1) = fit_pixel_gaussians(&est1)?;
        let (m2, v2) = fit_pixel_gaussians(&est2)?;
        m = update_mask(x0_input, &m1, &v1, &m2, &v2)?;
        mu1 = m1;
        mu2 = m2;
        let blend_rms = rms_difference(x0_input, &blend(&m, &mu1, &mu2)?)?;
        let mask_mean = m.mean().to_f64_lossy();
        log::debug!("layers round {iteration}: blend rms {blend_rms:.4}, mean(m) {mask_mean:.3}");
        rounds.push(LayerRound {
            iteration,
            blend_rms,
            mask_mean,
        });
    }
    let half = S::of(0.5);
    let mut layer1 = mu1;
    let mut layer2 = mu2;
    for i in 0..m.len() {
        let x = x0_input.as_slice()[i];
        if m.as_slice()[i] >= half {
            layer1.as_mut_slice()[i] = x;
        } else {
            layer2.as_mut_slice()[i] = x;
        }
    }
    let blend_rms = rms_difference(x0_input, &blend(&m, &layer1, &layer2)?)?;
    Ok(LayerResult {
        layer1,
        layer2,
        mask: m,
        rounds,
        blend_rms,
    })
}
