//! The pinned 16x16 grid-texture MLP denoiser.
//!
//! Retrain with `cargo run --release -p fastcs-core --example train_grid_fixture`.

use crate::denoiser::MlpDenoiser;
use crate::error::Result;

pub const GRID_MLP_BYTES: &[u8] = include_bytes!("../fixtures/grid16_mlp.bin");
pub const GRID_MLP_SIDE: usize = 16;
pub const GRID_MLP_HIDDEN: [usize; 2] = [128, 128];
pub const GRID_MLP_DATASET: usize = 512;
pub const GRID_MLP_STEPS: usize = 10000;
pub const GRID_MLP_LR: f64 = 3e-3;
pub const GRID_MLP_BATCH: usize = 128;

pub fn grid_mlp() -> Result<MlpDenoiser<f64>> {
    MlpDenoiser::from_bytes(GRID_MLP_BYTES)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::sample_grid;
    use crate::denoiser::{exact_jacobian, Denoiser};
    use crate::rng::RngState;
    use crate::schedule::NoiseSchedule;

    #[test]
    fn pinned_fixture_loads() {
        let m = grid_mlp().unwrap();
        assert_eq!(m.widths(), vec![258, 128, 128, 256]);
        let s = NoiseSchedule::<f64>::linear(1000, 1e-4, 0.02, 1.0).unwrap();
        assert_eq!(m.t_max(), 1000);
        assert_eq!(m.alpha_bar, s.alpha_bars());
    }

    #[test]
    fn fixture_denoises_and_is_asymmetric() {
        let m = grid_mlp().unwrap();
        let s = NoiseSchedule::<f64>::linear(1000, 1e-4, 0.02, 1.0).unwrap();
        let mut rng = RngState::new(11);
        let x0 = sample_grid::<f64>(&mut rng, 16, 16).flatten();
        let xt = s.forward_noise(&x0, 200, &mut rng).unwrap();
        let err = m.denoise(&xt, 200).unwrap().sub(&x0).unwrap();
        let noisy = xt.sub(&x0).unwrap();
        let ms = |v: &crate::tensor::Tensor<f64>| v.as_slice().iter().map(|e| e * e).sum::<f64>();
        assert!(ms(&err) < 0.7 * ms(&noisy), "{} vs {}", ms(&err), ms(&noisy));
        let j = exact_jacobian(&m, &xt, 500).unwrap();
        assert!(j.asymmetry_score().unwrap() > 0.01);
    }
}
