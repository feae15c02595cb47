//! Closed-form checks, computed independently of the library's own linear
//! algebra.

use fastcs_core::denoiser::{exact_jacobian, Denoiser};
use fastcs_core::guidance::{backprop_direction, newton_direction_exact, newton_direction_fd};
use fastcs_core::sampler::ddim_sample;
use fastcs_core::{GmmDenoiser, GmmPrior, LinearDenoiser, NoiseSchedule, RngState, SpdMatrix, Tensor};
use proptest::prelude::*;

fn sched() -> NoiseSchedule {
    NoiseSchedule::linear(1000, 1e-4, 0.02, 1.0).unwrap()
}

/// `sqrt(ab) S (ab S + (1 - ab) I)^-1` for a 2x2 `S`, by the adjugate.
fn gaussian_jacobian_2x2(s: [f64; 4], ab: f64) -> [f64; 4] {
    let m = [ab * s[0] + 1.0 - ab, ab * s[1], ab * s[2], ab * s[3] + 1.0 - ab];
    let det = m[0] * m[3] - m[1] * m[2];
    let inv = [m[3] / det, -m[1] / det, -m[2] / det, m[0] / det];
    let r = ab.sqrt();
    [
        r * (s[0] * inv[0] + s[1] * inv[2]),
        r * (s[0] * inv[1] + s[1] * inv[3]),
        r * (s[2] * inv[0] + s[3] * inv[2]),
        r * (s[2] * inv[1] + s[3] * inv[3]),
    ]
}

#[test]
fn gaussian_posterior_mean_and_jacobian() {
    let s = sched();
    let cov = [1.0, 0.9, 0.9, 1.0];
    let mu = [0.3, -0.2];
    let den = GmmDenoiser::new(
        GmmPrior::gaussian(mu.to_vec(), SpdMatrix::from_full(2, &cov).unwrap()).unwrap(),
        &s,
    );
    for t in [1, 250, 600, 1000] {
        let ab = s.alpha_bar(t).unwrap();
        let j = gaussian_jacobian_2x2(cov, ab);
        let x = Tensor::from_vec(vec![0.7, -1.1]);
        let r = [x.as_slice()[0] - ab.sqrt() * mu[0], x.as_slice()[1] - ab.sqrt() * mu[1]];
        let want = [mu[0] + j[0] * r[0] + j[1] * r[1], mu[1] + j[2] * r[0] + j[3] * r[1]];
        let got = den.denoise(&x, t).unwrap();
        for i in 0..2 {
            assert!((got.as_slice()[i] - want[i]).abs() < 1e-12, "t={t}");
        }
        let jac = exact_jacobian(&den, &x, t).unwrap();
        for (a, b) in jac.as_slice().iter().zip(j) {
            assert!((a - b).abs() < 1e-12, "t={t}");
        }
    }
}

#[test]
fn conditional_of_the_correlated_gaussian() {
    // x1 | x0 = 2 for unit variances with correlation 0.9
    let (mean, var): (f64, f64) = (0.9 * 2.0, 1.0 - 0.9 * 0.9);
    assert!((mean - 1.8).abs() < 1e-15);
    assert!((var.sqrt() - 0.43589).abs() < 1e-5);
}

#[test]
fn forward_difference_is_exact_for_linear_denoisers() {
    let m = Tensor::matrix(3, 3, vec![1.0, 2.0, 0.0, -1.0, 0.5, 3.0, 0.0, 0.0, 2.0]).unwrap();
    let den = LinearDenoiser::new(m.clone(), Some(Tensor::from_vec(vec![0.1, 0.2, 0.3]))).unwrap();
    let x = Tensor::from_vec(vec![0.4, -0.3, 1.2]);
    let e = Tensor::from_vec(vec![1.0, -2.0, 0.5]);
    let fd = newton_direction_fd(&den, &x, 10, &e, None).unwrap();
    // -M e by hand
    let want = [-(1.0 - 4.0), -(-1.0 - 1.0 + 1.5), -(1.0)];
    for (a, b) in fd.h.as_slice().iter().zip(want) {
        assert!((a - b).abs() < 1e-9);
    }
    let bp = backprop_direction(&den, &x, 10, &e).unwrap();
    // -Mᵀ e
    let want = [-(1.0 + 2.0), -(2.0 - 1.0), -(-6.0 + 1.0)];
    for (a, b) in bp.h.as_slice().iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(fd.forward_calls, 2);
}

#[test]
fn ddim_recovers_a_one_dimensional_gaussian() {
    let s = sched();
    let den = GmmDenoiser::new(
        GmmPrior::gaussian(vec![0.5], SpdMatrix::from_full(1, &[0.25]).unwrap()).unwrap(),
        &s,
    );
    let xs: Vec<f64> = (0..600)
        .map(|run| {
            let mut rng = RngState::substream(21, run);
            ddim_sample(&den, &s, &[1], 50, 1.0, &mut rng).unwrap().as_slice()[0]
        })
        .collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    // 4 standard errors
    assert!((mean - 0.5).abs() < 4.0 * 0.5 / n.sqrt(), "mean {mean}");
    assert!((var - 0.25).abs() < 4.0 * 0.25 * (2.0 / n).sqrt(), "var {var}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gmm_jacobian_is_symmetric_and_fd_converges(seed in 0u64..1000, t in 1usize..1000, dim in 2usize..6) {
        let s = sched();
        let mut rng = RngState::new(seed);
        let prior = GmmPrior::random(&mut rng, dim, 2).unwrap();
        let den = GmmDenoiser::new(prior.clone(), &s);
        let x = s.forward_noise(&prior.sample(&mut rng), t, &mut rng).unwrap();
        let j = exact_jacobian(&den, &x, t).unwrap();
        for a in 0..dim {
            for b in 0..dim {
                prop_assert!((j.at(a, b) - j.at(b, a)).abs() <= 1e-9 * (1.0 + j.at(a, b).abs()));
            }
        }
        let e = Tensor::from_vec((0..dim).map(|_| rng.normal()).collect());
        let exact = newton_direction_exact(&den, &x, t, &e).unwrap().h;
        let err = |d: f64| {
            let h = newton_direction_fd(&den, &x, t, &e, Some(d)).unwrap().h;
            h.max_abs_diff(&exact).unwrap()
        };
        // first-order scheme: ten times smaller step, clearly smaller error
        let (coarse, fine) = (err(1e-2), err(1e-3));
        prop_assert!(fine <= 0.2 * coarse + 1e-9, "coarse {coarse:e} fine {fine:e}");
    }
}
