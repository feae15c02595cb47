//! Gaussian-mixture prior and its exact posterior-mean denoiser.
//!
//! Noising a mixture keeps it a mixture: component `i` of `p_t` is
//! `N(√ᾱ μ_i, C_i)` with `C_i = ᾱ Σ_i + (1 - ᾱ) I`. Everything below is
//! computed in closed form from the per-timestep Cholesky factors of `C_i`.

use std::sync::{Arc, OnceLock};

use super::{check_input, Denoiser};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, SpdMatrix};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GmmPrior<S> {
    weights: Vec<S>,
    means: Vec<Vec<S>>,
    covs: Vec<SpdMatrix<S>>,
}

impl<S: Scalar> GmmPrior<S> {
    pub fn new(weights: Vec<S>, means: Vec<Vec<S>>, covs: Vec<SpdMatrix<S>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covs.len() != k {
            return Err(Error::InvalidArgument(format!(
                "mixture needs matching nonempty weights/means/covariances ({k}/{}/{})",
                means.len(),
                covs.len()
            )));
        }
        if weights.iter().any(|&w| !(w > S::zero())) {
            return Err(Error::InvalidArgument("mixture weights must be positive".into()));
        }
        let total: S = weights.iter().copied().sum();
        if (total - S::one()).abs() > S::of(1e-9) {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) || covs.iter().any(|c| c.dim() != d) {
            return Err(Error::InvalidArgument("component dimensions disagree".into()));
        }
        let weights = weights.iter().map(|&w| w / total).collect();
        Ok(Self { weights, means, covs })
    }

    /// Single Gaussian `N(mean, cov)`.
    pub fn gaussian(mean: Vec<S>, cov: SpdMatrix<S>) -> Result<Self> {
        Self::new(vec![S::one()], vec![mean], vec![cov])
    }

    pub fn standard_normal(dim: usize) -> Self {
        Self::gaussian(vec![S::zero(); dim], SpdMatrix::identity(dim)).expect("valid")
    }

    /// Random mixture for probes and fixtures: weights uniform in
    /// `[0.2, 1.2)` then normalised, means `1.5 N(0, I)`, covariances
    /// `0.3 B Bᵀ + 0.1 I` with `B` entries `N(0, 1/d)`.
    pub fn random(rng: &mut RngState, dim: usize, components: usize) -> Result<Self> {
        let d = dim;
        let mut weights: Vec<S> = (0..components).map(|_| S::of(0.2 + rng.uniform())).collect();
        let total: S = weights.iter().copied().sum();
        weights.iter_mut().for_each(|w| *w = *w / total);
        let means = (0..components)
            .map(|_| (0..d).map(|_| S::of(1.5 * rng.normal())).collect())
            .collect();
        let covs = (0..components)
            .map(|_| {
                let b: Vec<f64> = (0..d * d).map(|_| rng.normal() / (d as f64).sqrt()).collect();
                let mut full = vec![S::zero(); d * d];
                for i in 0..d {
                    for j in 0..d {
                        full[i * d + j] = S::of(0.3 * (0..d).map(|l| b[i * d + l] * b[j * d + l]).sum::<f64>());
                    }
                    full[i * d + i] = full[i * d + i] + S::of(0.1);
                }
                SpdMatrix::from_full(d, &full)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(weights, means, covs)
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<S>] {
        &self.means
    }

    pub fn covariances(&self) -> &[SpdMatrix<S>] {
        &self.covs
    }

    /// Exact draw from the prior.
    pub fn sample(&self, rng: &mut RngState) -> Tensor<S> {
        let u = S::of(rng.uniform());
        let mut acc = S::zero();
        let mut k = self.components() - 1;
        for (i, &w) in self.weights.iter().enumerate() {
            acc = acc + w;
            if u < acc {
                k = i;
                break;
            }
        }
        let chol = self.covs[k].cholesky().expect("SPD by construction");
        let z: Vec<S> = (0..self.dim()).map(|_| S::of(rng.normal())).collect();
        let mut x = self.means[k].clone();
        for (xi, li) in x.iter_mut().zip(chol.lower_times(&z)) {
            *xi = *xi + li;
        }
        Tensor::from_vec(x)
    }
}

/// Per-component factorisation of `C_i` at one timestep.
struct NoisedComponent<S> {
    chol: Cholesky<S>,
    log_det: S,
}

struct Evaluation<S> {
    /// responsibilities
    r: Vec<S>,
    /// `C_i⁻¹ (x - √ᾱ μ_i)` per component
    u: Vec<Vec<S>>,
    /// `μ_i + √ᾱ Σ_i u_i` per component
    m: Vec<Vec<S>>,
}

fn noised_components<S: Scalar>(prior: &GmmPrior<S>, ab: S) -> Vec<NoisedComponent<S>> {
    prior
        .covs
        .iter()
        .map(|c| {
            let chol = c
                .scaled_plus_identity(ab, S::one() - ab)
                .cholesky()
                .expect("aΣ + (1-a)I is SPD");
            let log_det = chol.log_det();
            NoisedComponent { chol, log_det }
        })
        .collect()
}

fn log_sum_exp<S: Scalar>(v: &[S]) -> S {
    let max = v.iter().copied().fold(S::neg_infinity(), S::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<S>().ln()
}

fn evaluate<S: Scalar>(prior: &GmmPrior<S>, comps: &[NoisedComponent<S>], ab: S, x: &[S]) -> (Evaluation<S>, S) {
    let d = prior.dim();
    let sa = ab.sqrt();
    let log2pi = S::of((2.0 * std::f64::consts::PI).ln());
    let mut logs = Vec::with_capacity(comps.len());
    let mut us = Vec::with_capacity(comps.len());
    let mut ms = Vec::with_capacity(comps.len());
    for (i, comp) in comps.iter().enumerate() {
        let diff: Vec<S> = x.iter().zip(&prior.means[i]).map(|(&xi, &mi)| xi - sa * mi).collect();
        let u = comp.chol.solve(&diff);
        let quad: S = diff.iter().zip(&u).map(|(&a, &b)| a * b).sum();
        logs.push(prior.weights[i].ln() - S::of(0.5) * (quad + comp.log_det + S::of(d as f64) * log2pi));
        let su = prior.covs[i].matvec(&u);
        ms.push(prior.means[i].iter().zip(su).map(|(&mu, s)| mu + sa * s).collect());
        us.push(u);
    }
    let lse = log_sum_exp(&logs);
    let r = logs.iter().map(|&l| (l - lse).exp()).collect();
    (Evaluation { r, u: us, m: ms }, lse)
}

fn weighted_sum<S: Scalar>(r: &[S], vs: &[Vec<S>]) -> Vec<S> {
    let mut out = vec![S::zero(); vs[0].len()];
    for (&ri, v) in r.iter().zip(vs) {
        for (o, &vi) in out.iter_mut().zip(v) {
            *o = *o + ri * vi;
        }
    }
    out
}

/// Posterior mean `E[x₀ | x_t]` under the mixture prior.
pub fn gmm_posterior_mean<S: Scalar>(
    prior: &GmmPrior<S>,
    sched: &NoiseSchedule<S>,
    x_t: &Tensor<S>,
    t: usize,
) -> Result<Tensor<S>> {
    check_input(x_t, prior.dim())?;
    let ab = sched.alpha_bar(t)?;
    let comps = noised_components(prior, ab);
    let (ev, _) = evaluate(prior, &comps, ab, x_t.as_slice());
    Tensor::new(x_t.shape().to_vec(), weighted_sum(&ev.r, &ev.m))
}

/// `∇ log p_t(x_t)` of the noised mixture.
pub fn gmm_score<S: Scalar>(
    prior: &GmmPrior<S>,
    sched: &NoiseSchedule<S>,
    x_t: &Tensor<S>,
    t: usize,
) -> Result<Tensor<S>> {
    check_input(x_t, prior.dim())?;
    let ab = sched.alpha_bar(t)?;
    let comps = noised_components(prior, ab);
    let (ev, _) = evaluate(prior, &comps, ab, x_t.as_slice());
    let u = weighted_sum(&ev.r, &ev.u);
    Tensor::new(x_t.shape().to_vec(), u.into_iter().map(|v| -v).collect())
}

pub fn gmm_log_density<S: Scalar>(
    prior: &GmmPrior<S>,
    sched: &NoiseSchedule<S>,
    x_t: &Tensor<S>,
    t: usize,
) -> Result<S> {
    check_input(x_t, prior.dim())?;
    let ab = sched.alpha_bar(t)?;
    let comps = noised_components(prior, ab);
    Ok(evaluate(prior, &comps, ab, x_t.as_slice()).1)
}

pub fn gmm_responsibilities<S: Scalar>(
    prior: &GmmPrior<S>,
    sched: &NoiseSchedule<S>,
    x_t: &Tensor<S>,
    t: usize,
) -> Result<Vec<S>> {
    check_input(x_t, prior.dim())?;
    let ab = sched.alpha_bar(t)?;
    let comps = noised_components(prior, ab);
    Ok(evaluate(prior, &comps, ab, x_t.as_slice()).0.r)
}

/// Exact posterior-mean denoiser with per-timestep factorisations cached on
/// first use.
pub struct GmmDenoiser<S> {
    prior: GmmPrior<S>,
    sched: NoiseSchedule<S>,
    cache: Vec<OnceLock<Arc<Vec<NoisedComponent<S>>>>>,
}

impl<S: Scalar> GmmDenoiser<S> {
    pub fn new(prior: GmmPrior<S>, sched: &NoiseSchedule<S>) -> Self {
        let cache = (0..=sched.t_max()).map(|_| OnceLock::new()).collect();
        Self {
            prior,
            sched: sched.clone(),
            cache,
        }
    }

    pub fn prior(&self) -> &GmmPrior<S> {
        &self.prior
    }

    fn components_at(&self, t: usize) -> Result<(S, Arc<Vec<NoisedComponent<S>>>)> {
        let ab = self.sched.alpha_bar(t)?;
        let comps = self.cache[t]
            .get_or_init(|| Arc::new(noised_components(&self.prior, ab)))
            .clone();
        Ok((ab, comps))
    }

    pub fn score(&self, x_t: &Tensor<S>, t: usize) -> Result<Tensor<S>> {
        check_input(x_t, self.prior.dim())?;
        let (ab, comps) = self.components_at(t)?;
        let (ev, _) = evaluate(&self.prior, &comps, ab, x_t.as_slice());
        let u = weighted_sum(&ev.r, &ev.u);
        Tensor::new(x_t.shape().to_vec(), u.into_iter().map(|v| -v).collect())
    }
}

impl<S: Scalar> Denoiser<S> for GmmDenoiser<S> {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn denoise(&self, x_t: &Tensor<S>, t: usize) -> Result<Tensor<S>> {
        check_input(x_t, self.prior.dim())?;
        let (ab, comps) = self.components_at(t)?;
        let (ev, _) = evaluate(&self.prior, &comps, ab, x_t.as_slice());
        Tensor::new(x_t.shape().to_vec(), weighted_sum(&ev.r, &ev.m))
    }

    /// `J = Σ r_i √ᾱ Σ_i C_i⁻¹ − Σ r_i (m_i − m̄)(u_i − ū)ᵀ`.
    fn jacobian(&self, x_t: &Tensor<S>, t: usize) -> Result<Tensor<S>> {
        check_input(x_t, self.prior.dim())?;
        super::check_dim_cap(self.prior.dim())?;
        let d = self.prior.dim();
        let (ab, comps) = self.components_at(t)?;
        let sa = ab.sqrt();
        let (ev, _) = evaluate(&self.prior, &comps, ab, x_t.as_slice());
        let m_bar = weighted_sum(&ev.r, &ev.m);
        let u_bar = weighted_sum(&ev.r, &ev.u);
        let mut jac = vec![S::zero(); d * d];
        for (i, comp) in comps.iter().enumerate() {
            let ri = ev.r[i];
            if ri == S::zero() {
                continue;
            }
            let cinv = comp.chol.inverse();
            let sigma = &self.prior.covs[i];
            // Σ_i C_i⁻¹, column by column
            let mut col = vec![S::zero(); d];
            for j in 0..d {
                for k in 0..d {
                    col[k] = cinv[k * d + j];
                }
                let sc = sigma.matvec(&col);
                for k in 0..d {
                    jac[k * d + j] = jac[k * d + j] + ri * sa * sc[k];
                }
            }
            for a in 0..d {
                let dm = ev.m[i][a] - m_bar[a];
                for b in 0..d {
                    let du = ev.u[i][b] - u_bar[b];
                    jac[a * d + b] = jac[a * d + b] - ri * dm * du;
                }
            }
        }
        Tensor::matrix(d, d, jac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::central_difference_jacobian;
    use crate::rng::gaussian_sample;
    use crate::tensor::norm;

    fn sched() -> NoiseSchedule<f64> {
        NoiseSchedule::linear(1000, 1e-4, 0.02, 1.0).unwrap()
    }

    fn fixed_ab(ab: f64) -> NoiseSchedule<f64> {
        NoiseSchedule::from_alpha_bar(vec![1.0, ab], 1.0).unwrap()
    }

    fn two_comp_1d(var: f64, w: [f64; 2]) -> GmmPrior<f64> {
        GmmPrior::new(
            w.to_vec(),
            vec![vec![-1.0], vec![1.0]],
            vec![
                SpdMatrix::diagonal(&[var]).unwrap(),
                SpdMatrix::diagonal(&[var]).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_standard_component() {
        let s = fixed_ab(0.64);
        let p = GmmPrior::standard_normal(3);
        let x = Tensor::from_vec(vec![1.0, -2.0, 0.5]);
        let m = gmm_posterior_mean(&p, &s, &x, 1).unwrap();
        assert!(m.max_abs_diff(&x.scale(0.8)).unwrap() < 1e-15);
        let sc = gmm_score(&p, &s, &x, 1).unwrap();
        assert!(sc.max_abs_diff(&x.scale(-1.0)).unwrap() < 1e-15);
        let den = GmmDenoiser::new(p, &s);
        let j = den.jacobian(&x, 1).unwrap();
        assert!(j.max_abs_diff(&Tensor::identity(3).scale(0.8)).unwrap() < 1e-15);
    }

    #[test]
    fn symmetric_pair_at_origin() {
        let s = fixed_ab(0.3);
        let p = two_comp_1d(0.2, [0.5, 0.5]);
        let x = Tensor::from_vec(vec![0.0]);
        assert!(gmm_posterior_mean(&p, &s, &x, 1).unwrap().as_slice()[0].abs() < 1e-15);
        assert!(gmm_score(&p, &s, &x, 1).unwrap().as_slice()[0].abs() < 1e-15);
    }

    /// Quadrature of ∫ x₀ p(x₀) N(x_t; √ᾱ x₀, 1-ᾱ) dx₀ / ∫ p(x₀) N(...) dx₀.
    fn quadrature_posterior_mean(x_t: f64, ab: f64, var: f64) -> f64 {
        let npdf =
            |x: f64, m: f64, v: f64| (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        let (lo, hi, n) = (-3.0, 3.0, 600_000);
        let h = (hi - lo) / n as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..=n {
            let x0 = lo + k as f64 * h;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            let p = 0.5 * npdf(x0, -1.0, var) + 0.5 * npdf(x0, 1.0, var);
            let f = w * p * npdf(x_t, ab.sqrt() * x0, 1.0 - ab);
            num += x0 * f;
            den += f;
        }
        num / den
    }

    #[test]
    fn posterior_mean_matches_quadrature() {
        let oracle = quadrature_posterior_mean(1.0, 0.5, 0.01);
        // mpmath, 30 digits
        assert!((oracle - 0.89063314876530295).abs() < 1e-9);
        let s = fixed_ab(0.5);
        let got = gmm_posterior_mean(&two_comp_1d(0.01, [0.5, 0.5]), &s, &Tensor::from_vec(vec![1.0]), 1).unwrap();
        assert!((got.as_slice()[0] - oracle).abs() < 1e-9);
    }

    #[test]
    fn score_matches_log_density_fd() {
        let s = sched();
        let mut rng = RngState::new(17);
        let p = GmmPrior::<f64>::random(&mut rng, 4, 3).unwrap();
        for t in [50, 300, 700] {
            let x = s.forward_noise(&p.sample(&mut rng), t, &mut rng).unwrap();
            let score = gmm_score(&p, &s, &x, t).unwrap();
            let h = 1e-5;
            for j in 0..4 {
                let mut xp = x.clone();
                xp.as_mut_slice()[j] += h;
                let mut xm = x.clone();
                xm.as_mut_slice()[j] -= h;
                let fd =
                    (gmm_log_density(&p, &s, &xp, t).unwrap() - gmm_log_density(&p, &s, &xm, t).unwrap()) / (2.0 * h);
                assert!(
                    (fd - score.as_slice()[j]).abs() < 1e-6,
                    "t={t} j={j}: {fd} vs {}",
                    score.as_slice()[j]
                );
            }
        }
    }

    #[test]
    fn tweedie_identity_and_responsibilities() {
        let s = sched();
        let mut rng = RngState::new(23);
        let p = GmmPrior::<f64>::random(&mut rng, 5, 3).unwrap();
        let den = GmmDenoiser::new(p.clone(), &s);
        for _ in 0..50 {
            let t = rng.below(1, 1001);
            let x: Tensor<f64> = gaussian_sample::<f64>(&mut rng, &[5]).scale(2.0);
            let ab = s.alpha_bar(t).unwrap();
            let score = den.score(&x, t).unwrap();
            let tweedie = x.add(&score.scale(1.0 - ab)).unwrap().scale(1.0 / ab.sqrt());
            let mean = den.denoise(&x, t).unwrap();
            assert!(norm(&mean.sub(&tweedie).unwrap()) <= 1e-8 * (1.0 + norm(&x)));
            let r = gmm_responsibilities(&p, &s, &x, t).unwrap();
            assert!(r.iter().all(|&v| v >= 0.0));
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_jacobian_symmetric_and_matches_fd() {
        let s = sched();
        let mut rng = RngState::new(29);
        let p = GmmPrior::<f64>::random(&mut rng, 6, 3).unwrap();
        let den = GmmDenoiser::new(p.clone(), &s);
        for t in [100, 400, 800] {
            for _ in 0..5 {
                let x = s.forward_noise(&p.sample(&mut rng), t, &mut rng).unwrap();
                let j = den.jacobian(&x, t).unwrap();
                let jt = j.transpose().unwrap();
                assert!(j.max_abs_diff(&jt).unwrap() <= 1e-12);
                let fd = central_difference_jacobian(&den, &x, t).unwrap();
                assert!(fd.max_abs_diff(&j).unwrap() <= 1e-6, "t={t}");
                assert!(fd.max_abs_diff(&fd.transpose().unwrap()).unwrap() <= 1e-6);
            }
        }
    }

    #[test]
    fn prior_sampling_moments() {
        let cov = SpdMatrix::from_full(2, &[1.0, 0.9, 0.9, 1.0]).unwrap();
        let p = GmmPrior::gaussian(vec![0.5, -0.5], cov).unwrap();
        let mut rng = RngState::new(1);
        let n = 20_000;
        let (mut m0, mut m1, mut c01) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = p.sample(&mut rng);
            let v = x.as_slice();
            m0 += v[0];
            m1 += v[1];
            c01 += (v[0] - 0.5) * (v[1] + 0.5);
        }
        let n = n as f64;
        assert!((m0 / n - 0.5).abs() < 0.03);
        assert!((m1 / n + 0.5).abs() < 0.03);
        assert!((c01 / n - 0.9).abs() < 0.05);
    }

    #[test]
    fn rejects_bad_mixtures() {
        let c = SpdMatrix::<f64>::identity(1);
        assert!(GmmPrior::<f64>::new(vec![], vec![], vec![]).is_err());
        assert!(GmmPrior::new(vec![0.5, 0.6], vec![vec![0.0], vec![1.0]], vec![c.clone(), c.clone()]).is_err());
        assert!(GmmPrior::new(vec![1.0, 0.0], vec![vec![0.0], vec![1.0]], vec![c.clone(), c.clone()]).is_err());
        assert!(GmmPrior::new(vec![1.0], vec![vec![0.0, 1.0]], vec![c]).is_err());
    }
}
