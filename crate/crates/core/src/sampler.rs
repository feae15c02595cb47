//! Constrained DDIM sampling.
//!
//! At every timestep of the stride grid the sampler makes `K` inner moves
//! `x_t += λ h`, where `h` is the configured guidance direction computed from
//! `e = Aᵀ(A x̂₀(x_t) - y)`, then takes one DDIM step with the `x̂₀` of the
//! updated `x_t`.

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::guidance::{direction, error_vector, CallCounts, DirectionKind, GuidanceConfig, Metered};
use crate::operators::Measurement;
use crate::rng::{gaussian_sample, RngState};
use crate::scalar::Scalar;
use crate::schedule::{ddim_step, NoiseSchedule};
use crate::tensor::{dot, Tensor};

/// Where the random perturbation of scale `rho` enters an inner iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PerturbTarget {
    /// `e + rho z`
    Error,
    /// `e` computed from `x̂₀ + rho z`
    X0,
    /// `x_t + rho z` before evaluating the denoiser
    Xt,
}

impl PerturbTarget {
    pub fn name(self) -> &'static str {
        match self {
            Self::Error => "error",
            Self::X0 => "x0",
            Self::Xt => "xt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Error, Self::X0, Self::Xt].into_iter().find(|p| p.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    /// DDIM steps over `T..0`.
    pub steps: usize,
    /// Inner direction steps per timestep.
    pub k: usize,
    pub lambda: f64,
    pub guidance: GuidanceConfig,
    pub restarts: usize,
    /// Re-noising timestep for warm restarts; `None` means `round(0.6 T)`.
    pub restart_t: Option<usize>,
    pub perturb_rho: f64,
    pub perturb_target: PerturbTarget,
    pub eta: f64,
    /// Timesteps at which `x̂₀` is kept in the trace.
    pub snapshot_ts: Vec<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            k: 3,
            lambda: 1.0,
            guidance: GuidanceConfig::default(),
            restarts: 1,
            restart_t: None,
            perturb_rho: 0.0,
            perturb_target: PerturbTarget::Error,
            eta: 1.0,
            snapshot_ts: Vec::new(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, t_max: usize) -> Result<()> {
        self.guidance.validate()?;
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if self.k > 0 && !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be > 0 when K > 0, got {}",
                self.lambda
            )));
        }
        if !(self.perturb_rho >= 0.0 && self.perturb_rho.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "perturb_rho must be >= 0, got {}",
                self.perturb_rho
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidArgument(format!(
                "eta must be in [0, 1], got {}",
                self.eta
            )));
        }
        if self.restarts > 0 {
            let rt = self.restart_t(t_max);
            if rt == 0 || rt > t_max {
                return Err(Error::InvalidArgument(format!(
                    "restart_t must be in 1..={t_max}, got {rt}"
                )));
            }
        }
        Ok(())
    }

    pub fn restart_t(&self, t_max: usize) -> usize {
        self.restart_t.unwrap_or_else(|| (0.6 * t_max as f64).round() as usize)
    }
}

/// One inner iteration (`inner_iter < K`) or the DDIM step that follows
/// them (`inner_iter == K`).
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    pub t: usize,
    pub inner_iter: usize,
    /// `|A x̂₀ - y|²` at the `x̂₀` this row evaluated.
    pub cost: f64,
    pub err_norm: f64,
    pub forwards: usize,
    pub vjps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub k: usize,
    pub direction_kind: DirectionKind,
    pub rows: Vec<TraceRow>,
    /// `(round, t, x̂₀)` at the configured snapshot timesteps.
    pub snapshots: Vec<(usize, usize, Vec<f64>)>,
    pub totals: CallCounts,
    /// `|A x₀ - y|²` at the end of each round (one entry without restarts).
    pub round_costs: Vec<f64>,
}

impl RunTrace {
    fn new(k: usize, direction_kind: DirectionKind) -> Self {
        Self {
            k,
            direction_kind,
            rows: Vec::new(),
            snapshots: Vec::new(),
            totals: CallCounts::default(),
            round_costs: Vec::new(),
        }
    }

    pub fn final_cost(&self) -> Option<f64> {
        self.round_costs.last().copied()
    }

    /// Checks the per-row cost contract: Newton-FD inner iterations make two
    /// forward passes and no VJP (one forward when `e` vanished), exact
    /// backprop iterations at least one VJP, every DDIM step row one forward.
    /// Row counts must add up to the totals.
    pub fn verify_call_accounting(&self) -> Result<()> {
        let mut sum = CallCounts::default();
        for r in &self.rows {
            sum.forwards += r.forwards;
            sum.vjps += r.vjps;
            let ok = if r.inner_iter == self.k {
                r.forwards == 1 && r.vjps == 0
            } else {
                match self.direction_kind {
                    DirectionKind::NewtonFd => {
                        r.vjps == 0 && (r.forwards == 2 || (r.forwards == 1 && r.err_norm == 0.0))
                    }
                    DirectionKind::NewtonExact => r.vjps == 0 && r.forwards == 1,
                    DirectionKind::BackpropExact => r.vjps >= 1,
                }
            };
            if !ok {
                return Err(Error::Invariant(format!(
                    "{} row t={} iter={} made {} forwards / {} VJPs",
                    self.direction_kind.name(),
                    r.t,
                    r.inner_iter,
                    r.forwards,
                    r.vjps
                )));
            }
        }
        if sum.forwards != self.totals.forwards || sum.vjps != self.totals.vjps {
            return Err(Error::Invariant(format!(
                "row sums {sum:?} differ from totals {:?}",
                self.totals
            )));
        }
        Ok(())
    }
}

fn cost_of<S: Scalar>(meas: &Measurement<S>, x0: &Tensor<S>) -> Result<f64> {
    let r = meas.op.apply(x0)?.sub(&meas.y)?;
    Ok(dot(&r, &r)?.to_f64_lossy())
}

fn perturb<S: Scalar>(v: &Tensor<S>, rho: f64, rng: &mut RngState) -> Result<Tensor<S>> {
    let z = gaussian_sample::<S>(rng, v.shape());
    let mut out = v.clone();
    out.add_scaled(S::of(rho), &z)?;
    Ok(out)
}

/// `e + rho z` with `z` standard normal; `rho = 0` returns `e` untouched and
/// draws nothing.
pub fn perturb_error<S: Scalar>(e: &Tensor<S>, rho: f64, rng: &mut RngState) -> Result<Tensor<S>> {
    if !(rho >= 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be >= 0, got {rho}")));
    }
    if rho == 0.0 {
        return Ok(e.clone());
    }
    perturb(e, rho, rng)
}

fn non_finite(t: usize, what: &str, trace: &RunTrace) -> Error {
    Error::NonFinite(format!("{what} at t={t} after {} trace rows", trace.rows.len()))
}

/// Runs the guided chain from `x_start` at `t_start` down to 0, appending to
/// `trace`. Without a measurement the inner loop is skipped (plain DDIM).
#[allow(clippy::too_many_arguments)]
fn run_chain<S: Scalar, D: Denoiser<S> + ?Sized>(
    den: &Metered<'_, D>,
    sched: &NoiseSchedule<S>,
    meas: Option<&Measurement<S>>,
    cfg: &SamplerConfig,
    x_start: Tensor<S>,
    t_start: usize,
    round: usize,
    trace: &mut RunTrace,
    rng: &mut RngState,
) -> Result<Tensor<S>> {
    let grid = sched.grid_from(t_start, cfg.steps)?;
    let lambda = S::of(cfg.lambda);
    let mut x = x_start;
    let k = if meas.is_some() { cfg.k } else { 0 };
    for w in grid.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        if let Some(meas) = meas {
            for i in 0..k {
                let before = den.counts();
                if cfg.perturb_rho > 0.0 && cfg.perturb_target == PerturbTarget::Xt {
                    x = perturb(&x, cfg.perturb_rho, rng)?;
                }
                let x0_hat = den.denoise(&x, t)?;
                let cost = cost_of(meas, &x0_hat)?;
                let e = match cfg.perturb_target {
                    PerturbTarget::X0 if cfg.perturb_rho > 0.0 => {
                        error_vector(&meas.op, &perturb(&x0_hat, cfg.perturb_rho, rng)?, &meas.y)?
                    }
                    PerturbTarget::Error => {
                        perturb_error(&error_vector(&meas.op, &x0_hat, &meas.y)?, cfg.perturb_rho, rng)?
                    }
                    _ => error_vector(&meas.op, &x0_hat, &meas.y)?,
                };
                let dir = direction(den, &x, t, &x0_hat, &e, &cfg.guidance)?;
                x.add_scaled(lambda, &dir.h)?;
                if !x.is_finite() {
                    return Err(non_finite(t, "x_t after inner update", trace));
                }
                let used = den.counts() - before;
                trace.rows.push(TraceRow {
                    round,
                    t,
                    inner_iter: i,
                    cost,
                    err_norm: crate::tensor::norm(&e).to_f64_lossy(),
                    forwards: used.forwards,
                    vjps: used.vjps,
                });
            }
        }
        let before = den.counts();
        let x0 = den.denoise(&x, t)?;
        let (cost, err_norm) = match meas {
            Some(m) => (
                cost_of(m, &x0)?,
                crate::tensor::norm(&error_vector(&m.op, &x0, &m.y)?).to_f64_lossy(),
            ),
            None => (f64::NAN, f64::NAN),
        };
        let used = den.counts() - before;
        trace.rows.push(TraceRow {
            round,
            t,
            inner_iter: k,
            cost,
            err_norm,
            forwards: used.forwards,
            vjps: used.vjps,
        });
        if cfg.snapshot_ts.contains(&t) {
            trace.snapshots.push((round, t, x0.to_f64_vec()));
        }
        let coeffs = sched.ddim_coefficients(t, t - t_next)?;
        x = ddim_step(&x, &x0, &coeffs, rng)?;
        if !x.is_finite() {
            return Err(non_finite(t, "x_t after DDIM step", trace));
        }
    }
    // the last step lands on ᾱ_0 = 1, where it returns x̂₀ exactly
    Ok(x)
}

fn prepare<S: Scalar, D: Denoiser<S> + ?Sized>(
    den: &D,
    sched: &NoiseSchedule<S>,
    meas: &Measurement<S>,
    cfg: &SamplerConfig,
) -> Result<NoiseSchedule<S>> {
    cfg.validate(sched.t_max())?;
    if den.dim() != meas.op.input_len() {
        return Err(Error::ShapeMismatch {
            expected: vec![den.dim()],
            actual: meas.op.input_shape().to_vec(),
        });
    }
    sched.with_eta(cfg.eta)
}

/// Guided sampling from `x_T ~ N(0, I)`.
pub fn constrained_sample<S: Scalar, D: Denoiser<S> + ?Sized>(
    den: &D,
    sched: &NoiseSchedule<S>,
    meas: &Measurement<S>,
    cfg: &SamplerConfig,
    rng: &mut RngState,
) -> Result<(Tensor<S>, RunTrace)> {
    let sched = prepare(den, sched, meas, cfg)?;
    let x_t = gaussian_sample::<S>(rng, meas.op.input_shape());
    let metered = Metered::new(den);
    let mut trace = RunTrace::new(cfg.k, cfg.guidance.direction_kind);
    let x0 = run_chain(
        &metered,
        &sched,
        Some(meas),
        cfg,
        x_t,
        sched.t_max(),
        0,
        &mut trace,
        rng,
    )?;
    trace.round_costs.push(cost_of(meas, &x0)?);
    trace.totals = metered.counts();
    Ok((x0, trace))
}

/// Guided sampling resumed from `x_start` at `t_start`.
pub fn sample_from<S: Scalar, D: Denoiser<S> + ?Sized>(
    den: &D,
    sched: &NoiseSchedule<S>,
    meas: &Measurement<S>,
    cfg: &SamplerConfig,
    x_start: Tensor<S>,
    t_start: usize,
    rng: &mut RngState,
) -> Result<(Tensor<S>, RunTrace)> {
    let sched = prepare(den, sched, meas, cfg)?;
    let metered = Metered::new(den);
    let mut trace = RunTrace::new(cfg.k, cfg.guidance.direction_kind);
    let x_start = x_start.reshape(meas.op.input_shape())?;
    let x0 = run_chain(&metered, &sched, Some(meas), cfg, x_start, t_start, 0, &mut trace, rng)?;
    trace.round_costs.push(cost_of(meas, &x0)?);
    trace.totals = metered.counts();
    Ok((x0, trace))
}

/// [`constrained_sample`], then `cfg.restarts` rounds of re-noising the
/// result to `restart_t` and resuming the chain from there. Returns the last
/// round's sample.
pub fn warm_restart_sample<S: Scalar, D: Denoiser<S> + ?Sized>(
    den: &D,
    sched: &NoiseSchedule<S>,
    meas: &Measurement<S>,
    cfg: &SamplerConfig,
    rng: &mut RngState,
) -> Result<(Tensor<S>, RunTrace)> {
    let sched = prepare(den, sched, meas, cfg)?;
    let metered = Metered::new(den);
    let mut trace = RunTrace::new(cfg.k, cfg.guidance.direction_kind);
    let x_t = gaussian_sample::<S>(rng, meas.op.input_shape());
    let mut x0 = run_chain(
        &metered,
        &sched,
        Some(meas),
        cfg,
        x_t,
        sched.t_max(),
        0,
        &mut trace,
        rng,
    )?;
    trace.round_costs.push(cost_of(meas, &x0)?);
    let restart_t = cfg.restart_t(sched.t_max());
    for round in 1..=cfg.restarts {
        let x_t = sched.forward_noise(&x0, restart_t, rng)?;
        x0 = run_chain(
            &metered,
            &sched,
            Some(meas),
            cfg,
            x_t,
            restart_t,
            round,
            &mut trace,
            rng,
        )?;
        let cost = cost_of(meas, &x0)?;
        let prev = trace.round_costs[round - 1];
        if cost > 1.1 * prev {
            log::warn!("warm restart {round} raised the final cost from {prev:.6e} to {cost:.6e}");
        }
        trace.round_costs.push(cost);
    }
    trace.totals = metered.counts();
    Ok((x0, trace))
}

/// Same loop as [`constrained_sample`] with the exact backprop direction.
pub fn dps_baseline_sample<S: Scalar, D: Denoiser<S> + ?Sized>(
    den: &D,
    sched: &NoiseSchedule<S>,
    meas: &Measurement<S>,
    cfg: &SamplerConfig,
    rng: &mut RngState,
) -> Result<(Tensor<S>, RunTrace)> {
    let mut cfg = cfg.clone();
    cfg.guidance.direction_kind = DirectionKind::BackpropExact;
    constrained_sample(den, sched, meas, &cfg, rng)
}

/// Unconstrained DDIM sampling of a signal with the given shape.
pub fn ddim_sample<S: Scalar, D: Denoiser<S> + ?Sized>(
    den: &D,
    sched: &NoiseSchedule<S>,
    shape: &[usize],
    steps: usize,
    eta: f64,
    rng: &mut RngState,
) -> Result<Tensor<S>> {
    let cfg = SamplerConfig {
        steps,
        k: 0,
        eta,
        restarts: 0,
        ..SamplerConfig::default()
    };
    cfg.validate(sched.t_max())?;
    let n: usize = shape.iter().product();
    if den.dim() != n {
        return Err(Error::ShapeMismatch {
            expected: vec![den.dim()],
            actual: shape.to_vec(),
        });
    }
    let sched = sched.with_eta(eta)?;
    let metered = Metered::new(den);
    let mut trace = RunTrace::new(0, cfg.guidance.direction_kind);
    let x_t = gaussian_sample::<S>(rng, shape);
    run_chain(&metered, &sched, None, &cfg, x_t, sched.t_max(), 0, &mut trace, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{GmmDenoiser, GmmPrior, LinearDenoiser};
    use crate::linalg::SpdMatrix;
    use crate::operators::MeasurementOp;

    fn sched() -> NoiseSchedule<f64> {
        NoiseSchedule::linear(1000, 1e-4, 0.02, 1.0).unwrap()
    }

    fn observe_first(y0: f64) -> Measurement<f64> {
        Measurement::new(
            MeasurementOp::mask(&[2], &[0]).unwrap(),
            Tensor::from_vec(vec![y0]),
            0.0,
        )
        .unwrap()
    }

    fn mean_std(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, var.sqrt())
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    #[test]
    fn config_validation() {
        let ok = SamplerConfig::default();
        assert!(ok.validate(1000).is_ok());
        assert_eq!(ok.restart_t(1000), 600);
        assert!(SamplerConfig {
            lambda: 0.0,
            ..ok.clone()
        }
        .validate(1000)
        .is_err());
        assert!(SamplerConfig {
            lambda: 0.0,
            k: 0,
            ..ok.clone()
        }
        .validate(1000)
        .is_ok());
        assert!(SamplerConfig {
            restart_t: Some(0),
            ..ok.clone()
        }
        .validate(1000)
        .is_err());
        assert!(SamplerConfig {
            restart_t: Some(0),
            restarts: 0,
            ..ok.clone()
        }
        .validate(1000)
        .is_ok());
        assert!(SamplerConfig {
            perturb_rho: -1.0,
            ..ok
        }
        .validate(1000)
        .is_err());
    }

    #[test]
    fn perturb_error_cases() {
        let e = Tensor::from_vec(vec![1.0, 2.0]);
        let mut rng = RngState::new(0);
        let pos = rng.word_pos();
        assert_eq!(perturb_error(&e, 0.0, &mut rng).unwrap(), e);
        assert_eq!(rng.word_pos(), pos);
        let z = Tensor::<f64>::zeros(&[20000]);
        let p = perturb_error(&z, 0.1, &mut rng).unwrap();
        let (m, s) = mean_std(p.as_slice());
        assert!(m.abs() < 0.005 && (s - 0.1).abs() < 0.003, "{m} {s}");
        assert!(perturb_error(&e, -0.1, &mut rng).is_err());
    }

    #[test]
    fn independent_coordinates_posterior() {
        let s = sched();
        let den = GmmDenoiser::new(GmmPrior::<f64>::standard_normal(2), &s);
        let meas = observe_first(2.0);
        let cfg = SamplerConfig::default();
        let mut c0 = Vec::new();
        let mut c1 = Vec::new();
        for run in 0..1000 {
            let mut rng = RngState::substream(17, run);
            let (x, trace) = constrained_sample(&den, &s, &meas, &cfg, &mut rng).unwrap();
            trace.verify_call_accounting().unwrap();
            c0.push(x.as_slice()[0]);
            c1.push(x.as_slice()[1]);
        }
        assert!(c0.iter().all(|v| (v - 2.0).abs() <= 0.1), "coordinate 0 off target");
        let (m, sd) = mean_std(&c1);
        assert!(m.abs() <= 0.1 && (sd - 1.0).abs() <= 0.15, "mean {m} std {sd}");
    }

    #[test]
    fn correlated_prior_hits_observed_coordinate() {
        let s = sched();
        let cov = SpdMatrix::from_full(2, &[1.0, 0.9, 0.9, 1.0]).unwrap();
        let den = GmmDenoiser::new(GmmPrior::gaussian(vec![0.0, 0.0], cov).unwrap(), &s);
        let meas = observe_first(2.0);
        let cfg = SamplerConfig::default();
        for run in 0..50 {
            let mut rng = RngState::substream(3, run);
            let (x, _) = constrained_sample(&den, &s, &meas, &cfg, &mut rng).unwrap();
            assert!((x.as_slice()[0] - 2.0).abs() <= 0.1);
        }
    }

    #[test]
    fn identity_constraint_recovers_y() {
        let s = sched();
        let mut prng = RngState::new(40);
        let den = GmmDenoiser::new(GmmPrior::<f64>::random(&mut prng, 4, 3).unwrap(), &s);
        let y = Tensor::from_vec(vec![0.8, -1.2, 0.4, 1.5]);
        let meas = Measurement::new(MeasurementOp::identity(&[4]).unwrap(), y.clone(), 0.0).unwrap();
        let mut rng = RngState::new(1);
        let (x, trace) = constrained_sample(&den, &s, &meas, &SamplerConfig::default(), &mut rng).unwrap();
        trace.verify_call_accounting().unwrap();
        let r = crate::tensor::norm(&x.sub(&y).unwrap()) / crate::tensor::norm(&y);
        assert!(r <= 0.05, "relative error {r}");
    }

    #[test]
    fn k3_beats_k0_on_residual() {
        let s = sched();
        let mut prng = RngState::new(2);
        let gmm = GmmPrior::<f64>::random(&mut prng, 3, 2).unwrap();
        let cov = SpdMatrix::from_full(3, &[1.0, 0.5, 0.2, 0.5, 1.0, 0.5, 0.2, 0.5, 1.0]).unwrap();
        let gauss = GmmPrior::gaussian(vec![0.0; 3], cov).unwrap();
        for prior in [gauss, gmm] {
            let den = GmmDenoiser::new(prior, &s);
            let meas = Measurement::new(
                MeasurementOp::mask(&[3], &[0, 2]).unwrap(),
                Tensor::from_vec(vec![1.0, -0.5]),
                0.0,
            )
            .unwrap();
            let resid = |k: usize| {
                let cfg = SamplerConfig {
                    k,
                    ..SamplerConfig::default()
                };
                median(
                    (0..100)
                        .map(|run| {
                            let mut rng = RngState::substream(5, run);
                            let (x, _) = constrained_sample(&den, &s, &meas, &cfg, &mut rng).unwrap();
                            meas.residual(&x).unwrap()
                        })
                        .collect(),
                )
            };
            assert!(resid(3) < resid(0));
        }
    }

    #[test]
    fn determinism_and_restart_zero() {
        let s = sched();
        let den = GmmDenoiser::new(GmmPrior::<f64>::standard_normal(2), &s);
        let meas = observe_first(1.0);
        let cfg = SamplerConfig {
            restarts: 0,
            ..SamplerConfig::default()
        };
        let a = constrained_sample(&den, &s, &meas, &cfg, &mut RngState::new(9)).unwrap();
        let b = constrained_sample(&den, &s, &meas, &cfg, &mut RngState::new(9)).unwrap();
        let c = warm_restart_sample(&den, &s, &meas, &cfg, &mut RngState::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn restarts_do_not_hurt_correlated_problem() {
        let s = sched();
        let cov = SpdMatrix::from_full(2, &[1.0, 0.9, 0.9, 1.0]).unwrap();
        let den = GmmDenoiser::new(GmmPrior::gaussian(vec![0.0, 0.0], cov).unwrap(), &s);
        let meas = observe_first(2.0);
        let run = |restarts: usize| {
            let cfg = SamplerConfig {
                restarts,
                ..SamplerConfig::default()
            };
            median(
                (0..100)
                    .map(|run| {
                        let mut rng = RngState::substream(6, run);
                        let (x, trace) = warm_restart_sample(&den, &s, &meas, &cfg, &mut rng).unwrap();
                        trace.verify_call_accounting().unwrap();
                        assert_eq!(trace.round_costs.len(), restarts + 1);
                        meas.residual(&x).unwrap()
                    })
                    .collect(),
            )
        };
        assert!(run(2) <= run(0));
    }

    #[test]
    fn symmetric_exact_newton_equals_backprop_trajectory() {
        let s = sched();
        let mut prng = RngState::new(12);
        let den = GmmDenoiser::new(GmmPrior::<f64>::random(&mut prng, 3, 2).unwrap(), &s);
        let meas = Measurement::new(
            MeasurementOp::mask(&[3], &[1]).unwrap(),
            Tensor::from_vec(vec![0.7]),
            0.0,
        )
        .unwrap();
        let mut cfg = SamplerConfig {
            steps: 20,
            ..SamplerConfig::default()
        };
        cfg.guidance.direction_kind = DirectionKind::NewtonExact;
        let (xn, tn) = constrained_sample(&den, &s, &meas, &cfg, &mut RngState::new(4)).unwrap();
        let (xb, tb) = dps_baseline_sample(&den, &s, &meas, &cfg, &mut RngState::new(4)).unwrap();
        assert!(xn.max_abs_diff(&xb).unwrap() <= 1e-8);
        for (a, b) in tn.rows.iter().zip(&tb.rows) {
            assert!((a.cost - b.cost).abs() <= 1e-8 * (1.0 + a.cost));
        }
        tn.verify_call_accounting().unwrap();
        tb.verify_call_accounting().unwrap();
    }

    #[test]
    fn asymmetric_linear_trajectories_diverge() {
        let s = sched();
        let m = Tensor::matrix(2, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap().scale(0.5);
        let den = LinearDenoiser::new(m, None).unwrap();
        let meas = observe_first(1.0);
        let cfg = SamplerConfig {
            steps: 10,
            k: 1,
            lambda: 0.5,
            ..SamplerConfig::default()
        };
        let (xn, tn) = constrained_sample(&den, &s, &meas, &cfg, &mut RngState::new(4)).unwrap();
        let (xb, tb) = dps_baseline_sample(&den, &s, &meas, &cfg, &mut RngState::new(4)).unwrap();
        assert!(xn.max_abs_diff(&xb).unwrap() > 1e-3);
        tn.verify_call_accounting().unwrap();
        tb.verify_call_accounting().unwrap();
        // per-timestep call contract
        for r in tn.rows.iter().filter(|r| r.inner_iter < 1) {
            assert_eq!((r.forwards, r.vjps), (2, 0));
        }
        for r in tb.rows.iter().filter(|r| r.inner_iter < 1) {
            assert_eq!(r.vjps, 1);
        }
        assert_eq!(tn.totals.vjps, 0);
        assert_eq!(tb.totals.vjps, 10);
    }

    #[test]
    fn accounting_detects_violations() {
        let mut t = RunTrace::new(1, DirectionKind::NewtonFd);
        t.rows.push(TraceRow {
            round: 0,
            t: 10,
            inner_iter: 0,
            cost: 1.0,
            err_norm: 1.0,
            forwards: 3,
            vjps: 0,
        });
        t.totals.forwards = 3;
        assert!(t.verify_call_accounting().is_err());
        t.rows[0].forwards = 2;
        t.totals.forwards = 5;
        assert!(t.verify_call_accounting().is_err());
    }

    #[test]
    fn unconstrained_weights_1d_gmm() {
        let s = sched();
        let prior = GmmPrior::new(
            vec![0.3, 0.7],
            vec![vec![-1.0], vec![1.0]],
            vec![
                SpdMatrix::diagonal(&[0.05]).unwrap(),
                SpdMatrix::diagonal(&[0.05]).unwrap(),
            ],
        )
        .unwrap();
        let den = GmmDenoiser::new(prior, &s);
        let neg = (0..2000)
            .filter(|&run| {
                let mut rng = RngState::substream(31, run);
                ddim_sample(&den, &s, &[1], 50, 1.0, &mut rng).unwrap().as_slice()[0] < 0.0
            })
            .count();
        let w = neg as f64 / 2000.0;
        assert!((w - 0.3).abs() <= 0.05, "w1 = {w}");
    }

    #[test]
    fn snapshots_and_shape_errors() {
        let s = sched();
        let den = GmmDenoiser::new(GmmPrior::<f64>::standard_normal(2), &s);
        let meas = observe_first(1.0);
        let cfg = SamplerConfig {
            snapshot_ts: vec![1000, 500],
            ..SamplerConfig::default()
        };
        let (_, trace) = constrained_sample(&den, &s, &meas, &cfg, &mut RngState::new(0)).unwrap();
        let ts: Vec<usize> = trace.snapshots.iter().map(|s| s.1).collect();
        assert_eq!(ts, vec![1000, 500]);
        let bad = Measurement::new(
            MeasurementOp::mask(&[3], &[0]).unwrap(),
            Tensor::from_vec(vec![1.0]),
            0.0,
        )
        .unwrap();
        assert!(constrained_sample(&den, &s, &bad, &cfg, &mut RngState::new(0)).is_err());
    }
}
