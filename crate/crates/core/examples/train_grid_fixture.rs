//! Retrains the pinned 16x16 grid-texture MLP and writes it to
//! `fixtures/grid16_mlp.bin`. Deterministic for a given seed.
//!
//! cargo run --release -p fastcs-core --example train_grid_fixture [seed] [steps]

use fastcs_core::datasets::grid_dataset;
use fastcs_core::denoiser::{train_mlp_denoiser, TrainConfig};
use fastcs_core::{Denoiser, NoiseSchedule, RngState};
use std::path::PathBuf;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let steps: usize = args
        .get(2)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(fastcs_core::fixtures::GRID_MLP_STEPS);
    let sched = NoiseSchedule::linear(1000, 1e-4, 0.02, 1.0)?;
    let mut rng = RngState::new(seed);
    let data = grid_dataset::<f64>(&mut rng, fastcs_core::fixtures::GRID_MLP_DATASET, 16, 16);
    let lr: f64 = args
        .get(3)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(fastcs_core::fixtures::GRID_MLP_LR);
    let cfg = TrainConfig {
        learning_rate: lr,
        batch_size: args
            .get(4)
            .map(|s| s.parse())
            .transpose()?
            .unwrap_or(fastcs_core::fixtures::GRID_MLP_BATCH),
        hidden: fastcs_core::fixtures::GRID_MLP_HIDDEN.to_vec(),
        steps,
        log_every: 500,
        ..TrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let (model, report) = train_mlp_denoiser(&data, &sched, &cfg, &mut rng)?;
    for (step, loss) in &report.losses {
        println!("step {step:>6}  loss {loss:.5}");
    }
    println!("held-out loss {:.5} in {:.1?}", report.held_out_loss, t0.elapsed());
    let mut eval_rng = RngState::new(seed ^ 0x5eed);
    let held = grid_dataset::<f64>(&mut eval_rng, 64, 16, 16);
    for t in [50, 200, 400, 600, 800] {
        let mut se = 0.0;
        for x0 in &held {
            let xt = sched.forward_noise(x0, t, &mut eval_rng)?;
            se += model
                .denoise(&xt, t)?
                .sub(x0)?
                .as_slice()
                .iter()
                .map(|v| v * v)
                .sum::<f64>();
        }
        println!("t={t:>4}  mse {:.4}", se / (held.len() * 256) as f64);
    }
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/grid16_mlp.bin");
    std::fs::write(&path, model.to_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}
