//! Variance-preserving noise schedule and DDIM step coefficients.

use crate::error::{Error, Result};
use crate::rng::{gaussian_sample, RngState};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Cumulative signal retention `alpha_bar[t]` for `t = 0..=T`, plus the DDIM
/// stochasticity `eta`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule<S> {
    alpha_bar: Vec<S>,
    eta: S,
}

/// Coefficients of `x_{t-s} = zeta * x_t + kappa * x0_hat + beta * z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DdimCoeffs<S> {
    pub zeta: S,
    pub kappa: S,
    pub beta: S,
}

impl<S: Scalar> NoiseSchedule<S> {
    /// Linear betas from `beta_min` (t = 1) to `beta_max` (t = T), with
    /// `alpha_bar[t] = prod_{u <= t} (1 - beta_u)`.
    pub fn linear(t_max: usize, beta_min: f64, beta_max: f64, eta: f64) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::Schedule("T must be at least 1".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Schedule(format!(
                "need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
            )));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::Schedule(format!("eta must be in [0, 1], got {eta}")));
        }
        let mut alpha_bar = Vec::with_capacity(t_max + 1);
        let mut acc = 1.0f64;
        alpha_bar.push(S::one());
        for t in 1..=t_max {
            let frac = if t_max == 1 {
                0.0
            } else {
                (t - 1) as f64 / (t_max - 1) as f64
            };
            acc *= 1.0 - (beta_min + (beta_max - beta_min) * frac);
            alpha_bar.push(S::of(acc));
        }
        Self::from_alpha_bar(alpha_bar, S::of(eta))
    }

    pub fn from_alpha_bar(alpha_bar: Vec<S>, eta: S) -> Result<Self> {
        if alpha_bar.len() < 2 || alpha_bar[0] != S::one() {
            return Err(Error::Schedule("alpha_bar must start at 1 and have T >= 1".into()));
        }
        if alpha_bar.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Schedule("alpha_bar must be strictly decreasing".into()));
        }
        if !(*alpha_bar.last().unwrap() > S::zero()) {
            return Err(Error::Schedule("alpha_bar[T] must be positive".into()));
        }
        Ok(Self { alpha_bar, eta })
    }

    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::Schedule(format!("eta must be in [0, 1], got {eta}")));
        }
        Ok(Self {
            alpha_bar: self.alpha_bar.clone(),
            eta: S::of(eta),
        })
    }

    pub fn t_max(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn eta(&self) -> S {
        self.eta
    }

    pub fn alpha_bar(&self, t: usize) -> Result<S> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or(Error::TimestepOutOfRange { t, max: self.t_max() })
    }

    pub fn alpha_bars(&self) -> &[S] {
        &self.alpha_bar
    }

    /// Descending timesteps `T = g[0] > g[1] > ... > g[n] = 0` from a uniform
    /// subsampling into `steps` strides (rounded to integers).
    pub fn timestep_grid(&self, steps: usize) -> Vec<usize> {
        let t_max = self.t_max();
        let steps = steps.clamp(1, t_max);
        let mut grid: Vec<usize> = (0..=steps)
            .rev()
            .map(|i| ((t_max * i) as f64 / steps as f64).round() as usize)
            .collect();
        grid.dedup();
        grid
    }

    /// The grid of [`timestep_grid`](Self::timestep_grid) restricted below
    /// `t_start`, with `t_start` prepended.
    pub fn grid_from(&self, t_start: usize, steps: usize) -> Result<Vec<usize>> {
        if t_start > self.t_max() {
            return Err(Error::TimestepOutOfRange {
                t: t_start,
                max: self.t_max(),
            });
        }
        let mut grid = vec![t_start];
        grid.extend(self.timestep_grid(steps).into_iter().filter(|&t| t < t_start));
        Ok(grid)
    }

    pub fn forward_noise(&self, x0: &Tensor<S>, t: usize, rng: &mut RngState) -> Result<Tensor<S>> {
        let eps = gaussian_sample(rng, x0.shape());
        self.forward_noise_with(x0, t, &eps)
    }

    /// `sqrt(ab_t) x0 + sqrt(1 - ab_t) eps` with caller-supplied noise.
    pub fn forward_noise_with(&self, x0: &Tensor<S>, t: usize, eps: &Tensor<S>) -> Result<Tensor<S>> {
        let ab = self.alpha_bar(t)?;
        let (a, b) = (ab.sqrt(), (S::one() - ab).sqrt());
        x0.zip_map(eps, |x, e| a * x + b * e)
    }

    /// Coefficients for a stride-`s` step from `t` to `t - s`.
    pub fn ddim_coefficients(&self, t: usize, s: usize) -> Result<DdimCoeffs<S>> {
        if s == 0 || s > t {
            return Err(Error::Schedule(format!("need 0 < s <= t, got t={t}, s={s}")));
        }
        let ab_t = self.alpha_bar(t)?;
        let ab_prev = self.alpha_bar(t - s)?;
        let one = S::one();
        let beta = self.eta * ((one - ab_prev) / (one - ab_t)).sqrt() * (one - ab_t / ab_prev).sqrt();
        let mut rest = one - ab_prev - beta * beta;
        if rest < S::zero() {
            // rounding when ab_prev == 1
            if rest > -S::of(1e-14) {
                rest = S::zero();
            } else {
                return Err(Error::Schedule(format!(
                    "1 - ab_(t-s) - beta^2 = {rest} < 0 at t={t}, s={s}"
                )));
            }
        }
        let zeta = rest.sqrt() / (one - ab_t).sqrt();
        let kappa = ab_prev.sqrt() - zeta * ab_t.sqrt();
        Ok(DdimCoeffs { zeta, kappa, beta })
    }
}

pub fn ddim_step<S: Scalar>(
    x_t: &Tensor<S>,
    x0_hat: &Tensor<S>,
    coeffs: &DdimCoeffs<S>,
    rng: &mut RngState,
) -> Result<Tensor<S>> {
    // No draw when the step is deterministic, so eta = 0 runs do not
    // consume randomness.
    if coeffs.beta == S::zero() {
        return ddim_step_with(x_t, x0_hat, coeffs, &x_t.zeros_like());
    }
    let z = gaussian_sample(rng, x_t.shape());
    ddim_step_with(x_t, x0_hat, coeffs, &z)
}

pub fn ddim_step_with<S: Scalar>(
    x_t: &Tensor<S>,
    x0_hat: &Tensor<S>,
    coeffs: &DdimCoeffs<S>,
    z: &Tensor<S>,
) -> Result<Tensor<S>> {
    x_t.ensure_same_shape(x0_hat)?;
    x_t.ensure_same_shape(z)?;
    let DdimCoeffs { zeta, kappa, beta } = *coeffs;
    let data = x_t
        .as_slice()
        .iter()
        .zip(x0_hat.as_slice())
        .zip(z.as_slice())
        .map(|((&x, &x0), &z)| zeta * x + kappa * x0 + beta * z)
        .collect();
    Tensor::new(x_t.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn constant_beta_product() {
        let s = NoiseSchedule::<f64>::linear(10, 0.1, 0.1, 1.0).unwrap();
        assert!(close(s.alpha_bar(10).unwrap(), 0.9f64.powi(10), 1e-15));
        let one = NoiseSchedule::<f64>::linear(1, 0.3, 0.5, 1.0).unwrap();
        assert!(close(one.alpha_bar(1).unwrap(), 0.7, 1e-15));
    }

    #[test]
    fn default_schedule_oracle_values() {
        // 40-digit product computed offline
        let s = NoiseSchedule::<f64>::linear(1000, 1e-4, 0.02, 1.0).unwrap();
        assert!(close(s.alpha_bar(1000).unwrap(), 4.0358297653756833e-5, 1e-17));
        assert!(close(s.alpha_bar(100).unwrap(), 0.89701814567496036, 1e-13));
        assert!(close(s.alpha_bar(800).unwrap(), 1.5320895496479507e-3, 1e-15));
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn invalid_ranges() {
        assert!(NoiseSchedule::<f64>::linear(0, 0.1, 0.2, 1.0).is_err());
        assert!(NoiseSchedule::<f64>::linear(10, 0.0, 0.2, 1.0).is_err());
        assert!(NoiseSchedule::<f64>::linear(10, 0.3, 0.2, 1.0).is_err());
        assert!(NoiseSchedule::<f64>::linear(10, 0.1, 1.0, 1.0).is_err());
        assert!(NoiseSchedule::<f64>::linear(10, 0.1, 0.2, 1.5).is_err());
    }

    fn two_point(ab_t: f64, ab_prev: f64, eta: f64) -> NoiseSchedule<f64> {
        NoiseSchedule::from_alpha_bar(vec![1.0, ab_prev, ab_t], eta).unwrap()
    }

    #[test]
    fn forward_noise_cases() {
        let s = two_point(0.25, 0.5, 1.0);
        let x0 = Tensor::from_vec(vec![2.0, 0.0]);
        assert_eq!(
            s.forward_noise_with(&x0, 0, &Tensor::from_vec(vec![0.7, -0.2]))
                .unwrap(),
            x0
        );
        let y = s.forward_noise_with(&x0, 2, &x0.zeros_like()).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 0.0]);
        let y = s.forward_noise_with(&x0, 2, &Tensor::from_vec(vec![1.0, 1.0])).unwrap();
        assert!(close(y.as_slice()[0], 1.0 + 0.75f64.sqrt(), 1e-15));
        assert!(close(y.as_slice()[1], 0.75f64.sqrt(), 1e-15));
        let mut rng = RngState::new(0);
        assert!(matches!(
            s.forward_noise(&x0, 3, &mut rng),
            Err(Error::TimestepOutOfRange { t: 3, max: 2 })
        ));
    }

    #[test]
    fn coefficient_examples() {
        let s = two_point(0.25, 0.5, 0.0);
        let c = s.ddim_coefficients(2, 1).unwrap();
        assert_eq!(c.beta, 0.0);
        assert!(close(c.zeta, 0.81649658092772603, 1e-15));
        assert!(close(c.kappa, 0.29885849072268451, 1e-15));

        let last = s.ddim_coefficients(1, 1).unwrap();
        assert_eq!((last.zeta, last.kappa, last.beta), (0.0, 1.0, 0.0));
        let stoch = two_point(0.25, 0.5, 1.0).ddim_coefficients(1, 1).unwrap();
        assert_eq!((stoch.zeta, stoch.kappa, stoch.beta), (0.0, 1.0, 0.0));
        assert!(s.ddim_coefficients(1, 2).is_err());
        assert!(s.ddim_coefficients(1, 0).is_err());
    }

    #[test]
    fn coefficient_identities_on_default_schedule() {
        for eta in [0.0, 0.5, 1.0] {
            let s = NoiseSchedule::<f64>::linear(1000, 1e-4, 0.02, eta).unwrap();
            for t in (1..=1000).step_by(7) {
                for stride in [1, 3, 20, 50, t] {
                    if stride > t {
                        continue;
                    }
                    let c = s.ddim_coefficients(t, stride).unwrap();
                    let (a, ap) = (s.alpha_bar(t).unwrap(), s.alpha_bar(t - stride).unwrap());
                    assert!(close(c.kappa + c.zeta * a.sqrt(), ap.sqrt(), 1e-12));
                    assert!(close(c.zeta * c.zeta * (1.0 - a) + c.beta * c.beta, 1.0 - ap, 1e-12));
                }
            }
        }
    }

    #[test]
    fn step_cases() {
        let xt = Tensor::from_vec(vec![1.0, -2.0]);
        let x0 = Tensor::from_vec(vec![0.5, 0.25]);
        let z = Tensor::from_vec(vec![1.0, 1.0]);
        let pick = DdimCoeffs {
            zeta: 0.0,
            kappa: 1.0,
            beta: 0.0,
        };
        assert_eq!(ddim_step_with(&xt, &x0, &pick, &z).unwrap(), x0);
        let keep = DdimCoeffs {
            zeta: 1.0,
            kappa: 0.0,
            beta: 0.0,
        };
        assert_eq!(ddim_step_with(&xt, &x0, &keep, &xt.zeros_like()).unwrap(), xt);
        let generic = DdimCoeffs {
            zeta: 0.5,
            kappa: 2.0,
            beta: 0.1,
        };
        let out = ddim_step_with(&xt, &x0, &generic, &z).unwrap();
        assert!(close(out.as_slice()[0], 0.5 + 1.0 + 0.1, 1e-15));
        assert!(close(out.as_slice()[1], -1.0 + 0.5 + 0.1, 1e-15));
    }

    #[test]
    fn grid_shape() {
        let s = NoiseSchedule::<f64>::linear(1000, 1e-4, 0.02, 1.0).unwrap();
        let g = s.timestep_grid(50);
        assert_eq!(g.len(), 51);
        assert_eq!((g[0], g[1], g[50]), (1000, 980, 0));
        assert_eq!(s.grid_from(600, 50).unwrap()[..3], [600, 580, 560]);
        assert_eq!(s.grid_from(590, 50).unwrap()[..3], [590, 580, 560]);
        let small = NoiseSchedule::<f64>::linear(7, 0.01, 0.2, 1.0).unwrap();
        assert_eq!(small.timestep_grid(50), (0..=7).rev().collect::<Vec<_>>());
    }

    /// One stochastic step from the exact marginal at t lands on the exact
    /// marginal at t - s when the denoiser knows x0 (point-mass prior).
    #[test]
    fn marginal_consistency() {
        let s = NoiseSchedule::<f64>::linear(1000, 1e-4, 0.02, 1.0).unwrap();
        let (t, stride) = (600, 50);
        let x0 = Tensor::from_vec(vec![0.7, -1.3]);
        let c = s.ddim_coefficients(t, stride).unwrap();
        let mut rng = RngState::new(99);
        let n = 10_000;
        let mut sums = [0.0f64; 2];
        let mut sq = [0.0f64; 2];
        let mut cross = 0.0;
        for _ in 0..n {
            let xt = s.forward_noise(&x0, t, &mut rng).unwrap();
            let next = ddim_step(&xt, &x0, &c, &mut rng).unwrap();
            let v = next.as_slice();
            for k in 0..2 {
                sums[k] += v[k];
                sq[k] += v[k] * v[k];
            }
            cross += v[0] * v[1];
        }
        let ap = s.alpha_bar(t - stride).unwrap();
        let var_target = 1.0 - ap;
        for k in 0..2 {
            let mean = sums[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            let mean_target = ap.sqrt() * x0.as_slice()[k];
            let se_mean = (var_target / n as f64).sqrt();
            let se_var = var_target * (2.0 / n as f64).sqrt();
            assert!(
                (mean - mean_target).abs() <= 3.0 * se_mean,
                "mean {mean} vs {mean_target}"
            );
            assert!((var - var_target).abs() <= 3.0 * se_var, "var {var} vs {var_target}");
        }
        let m0 = sums[0] / n as f64;
        let m1 = sums[1] / n as f64;
        let cov = cross / n as f64 - m0 * m1;
        assert!(cov.abs() <= 3.0 * var_target / (n as f64).sqrt());
    }
}
