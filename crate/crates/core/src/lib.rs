//! Constrained sampling from diffusion priors.
//!
//! Everything is generic over the scalar type ([`Scalar`] is implemented for
//! `f32` and `f64`); the aliases at the crate root fix it to `f64`.

pub mod datasets;
pub mod denoiser;
pub mod diagnostics;
pub mod error;
pub mod fixtures;
pub mod guidance;
pub mod layers;
pub mod linalg;
pub mod operators;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod schedule;
pub mod tensor;

pub use denoiser::Denoiser;
pub use error::{Error, Result};
pub use guidance::{DirectionKind, GuidanceConfig};
pub use layers::LayerConfig;
pub use operators::MeasurementOp;
pub use rng::RngState;
pub use sampler::{PerturbTarget, RunTrace, SamplerConfig};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type NoiseSchedule = schedule::NoiseSchedule<f64>;
pub type GmmPrior = denoiser::GmmPrior<f64>;
pub type GmmDenoiser = denoiser::GmmDenoiser<f64>;
pub type LinearDenoiser = denoiser::LinearDenoiser<f64>;
pub type MlpDenoiser = denoiser::MlpDenoiser<f64>;
pub type SpdMatrix = linalg::SpdMatrix<f64>;
pub type Measurement = operators::Measurement<f64>;
pub type LayerResult = layers::LayerResult<f64>;
pub type DirectionCompareResult = diagnostics::DirectionCompareResult<f64>;
