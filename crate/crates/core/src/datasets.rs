//! Synthetic black-and-white grid textures.
//!
//! Two textures: thin lines (period 4, width 1) and thick lines (period 8,
//! width 2). A pixel on a horizontal or vertical line is `+a`, everything
//! else `-a`, with amplitude `a` uniform in `[0.6, 1.0]` and a random phase
//! per axis.

use crate::denoiser::GmmPrior;
use crate::error::Result;
use crate::linalg::SpdMatrix;
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridTexture {
    pub period: usize,
    pub line_width: usize,
}

pub const THIN_GRID: GridTexture = GridTexture {
    period: 4,
    line_width: 1,
};
pub const THICK_GRID: GridTexture = GridTexture {
    period: 8,
    line_width: 2,
};

pub const AMPLITUDE_RANGE: (f64, f64) = (0.6, 1.0);

/// One grid image of shape `[height, width]`.
pub fn grid_image<S: Scalar>(
    height: usize,
    width: usize,
    texture: GridTexture,
    phase: (usize, usize),
    amplitude: f64,
) -> Tensor<S> {
    let on = |i: usize, ph: usize| (i + ph) % texture.period < texture.line_width;
    let data = (0..height * width)
        .map(|k| {
            let (r, c) = (k / width, k % width);
            S::of(if on(r, phase.0) || on(c, phase.1) {
                amplitude
            } else {
                -amplitude
            })
        })
        .collect();
    Tensor::new(vec![height, width], data).expect("nonempty image")
}

/// A random draw: texture by a fair coin, then phase and amplitude.
pub fn sample_grid<S: Scalar>(rng: &mut RngState, height: usize, width: usize) -> Tensor<S> {
    let texture = if rng.bernoulli(0.5) { THIN_GRID } else { THICK_GRID };
    let phase = (rng.below(0, texture.period), rng.below(0, texture.period));
    let (lo, hi) = AMPLITUDE_RANGE;
    let amplitude = lo + (hi - lo) * rng.uniform();
    grid_image(height, width, texture, phase, amplitude)
}

pub fn grid_dataset<S: Scalar>(rng: &mut RngState, n: usize, height: usize, width: usize) -> Vec<Tensor<S>> {
    (0..n).map(|_| sample_grid(rng, height, width)).collect()
}

/// `k x k` box filter with edge replication.
pub fn box_blur<S: Scalar>(img: &Tensor<S>, k: usize) -> Tensor<S> {
    let (h, w) = (img.rows(), img.cols());
    let r = (k / 2) as isize;
    let src = img.as_slice();
    let norm = S::of((k * k) as f64).recip();
    let data = (0..h * w)
        .map(|p| {
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            let mut acc = S::zero();
            for dy in -r..=r {
                for dx in -r..=r {
                    let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                    acc = acc + src[yy * w + xx];
                }
            }
            acc * norm
        })
        .collect();
    Tensor::new(vec![h, w], data).expect("same shape")
}

/// Affine map of the value range onto `[-1, 1]`; constant images map to 0.
pub fn rescale_unit<S: Scalar>(img: &Tensor<S>) -> Tensor<S> {
    let lo = img.as_slice().iter().copied().fold(S::infinity(), S::min);
    let hi = img.as_slice().iter().copied().fold(S::neg_infinity(), S::max);
    if hi <= lo {
        return img.zeros_like();
    }
    let two = S::of(2.0);
    img.map(|v| two * (v - lo) / (hi - lo) - S::one())
}

/// Gaussian over flat images near `level`: one shared offset with std
/// `offset_std` plus independent pixel noise with std `pixel_std`.
pub fn flat_layer_prior<S: Scalar>(n: usize, level: f64, offset_std: f64, pixel_std: f64) -> Result<GmmPrior<S>> {
    let mut cov = vec![offset_std * offset_std; n * n];
    for i in 0..n {
        cov[i * n + i] += pixel_std * pixel_std;
    }
    let cov: Vec<S> = cov.into_iter().map(S::of).collect();
    GmmPrior::gaussian(vec![S::of(level); n], SpdMatrix::from_full(n, &cov)?)
}

/// Two constant layers composited by a left/right split, each with a flat
/// Gaussian prior centred on its level.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoRegionScene<S> {
    pub prior1: GmmPrior<S>,
    pub prior2: GmmPrior<S>,
    pub layer1: Tensor<S>,
    pub layer2: Tensor<S>,
    /// 1 where layer 1 is visible.
    pub mask: Tensor<S>,
    pub image: Tensor<S>,
}

/// Layer 1 at `levels.0` owns the left `split` fraction of columns, layer 2
/// at `levels.1` the rest. `prior_std` is `(offset_std, pixel_std)` of both
/// layer priors.
pub fn two_region_scene<S: Scalar>(
    height: usize,
    width: usize,
    levels: (f64, f64),
    split: f64,
    prior_std: (f64, f64),
) -> Result<TwoRegionScene<S>> {
    let n = height * width;
    let prior1 = flat_layer_prior::<S>(n, levels.0, prior_std.0, prior_std.1)?;
    let prior2 = flat_layer_prior::<S>(n, levels.1, prior_std.0, prior_std.1)?;
    let layer1 = Tensor::full(&[height, width], S::of(levels.0));
    let layer2 = Tensor::full(&[height, width], S::of(levels.1));
    let cut = (split * width as f64).round() as usize;
    let mask = Tensor::new(
        vec![height, width],
        (0..n)
            .map(|k| if k % width < cut { S::one() } else { S::zero() })
            .collect(),
    )?;
    let image = crate::layers::blend(&mask, &layer1, &layer2)?;
    Ok(TwoRegionScene {
        prior1,
        prior2,
        layer1,
        layer2,
        mask,
        image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thin_grid_layout() {
        let g = grid_image::<f64>(4, 4, THIN_GRID, (0, 0), 1.0);
        let want = [
            1.0, 1.0, 1.0, 1.0, //
            1.0, -1.0, -1.0, -1.0, //
            1.0, -1.0, -1.0, -1.0, //
            1.0, -1.0, -1.0, -1.0,
        ];
        assert_eq!(g.as_slice(), &want);
    }

    #[test]
    fn samples_use_two_levels_in_range() {
        let mut rng = RngState::new(1);
        for img in grid_dataset::<f64>(&mut rng, 50, 16, 16) {
            let a = img.as_slice()[0].abs();
            assert!((0.6..=1.0).contains(&a));
            assert!(img.as_slice().iter().all(|v| (v.abs() - a).abs() < 1e-15));
            assert!(img.as_slice().iter().any(|&v| v > 0.0) && img.as_slice().iter().any(|&v| v < 0.0));
        }
    }

    #[test]
    fn blur_and_rescale() {
        let c = Tensor::<f64>::full(&[5, 5], 0.3);
        assert!(box_blur(&c, 3).max_abs_diff(&c).unwrap() < 1e-15);
        let g = grid_image::<f64>(8, 8, THICK_GRID, (1, 3), 0.8);
        let b = rescale_unit(&box_blur(&g, 3));
        let lo = b.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = b.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((lo + 1.0).abs() < 1e-15 && (hi - 1.0).abs() < 1e-15);
        assert_eq!(rescale_unit(&c), c.zeros_like());
    }

    #[test]
    fn two_region_scene_layout() {
        let sc = two_region_scene::<f64>(4, 6, (0.2, 0.8), 0.5, (0.1, 0.05)).unwrap();
        for k in 0..24 {
            let left = k % 6 < 3;
            assert_eq!(sc.mask.as_slice()[k], if left { 1.0 } else { 0.0 });
            let want = if left {
                sc.layer1.as_slice()[k]
            } else {
                sc.layer2.as_slice()[k]
            };
            assert_eq!(sc.image.as_slice()[k], want);
        }
        let c = sc.prior1.covariances()[0].get(0, 1);
        assert!((c - 0.01).abs() < 1e-15);
    }
}
