//! Train a small denoiser on synthetic masks and watch the loss fall.
//! Takes a couple of minutes; writes a checkpoint reusable by the
//! `sample_masks` example.
//!
//! ```bash
//! cargo run --release -p vesselgen --example train_denoiser
//! ```

use std::path::PathBuf;

use vesselgen::commands::{cmd_synth_data, cmd_train};
use vesselgen::config::RunConfig;
use vesselgen::denoiser::DenoiserConfig;
use vesselgen::diffusion::LossConfig;
use vesselgen::schedule::ScheduleConfig;
use vesselgen::synth::VesselTreeConfig;
use vesselgen::train::TrainConfig;

fn main() -> vesselgen::Result<()> {
    let root = PathBuf::from("target/example-out/train_denoiser");
    let data_dir = root.join("data");
    let tree = VesselTreeConfig { seed: 41, ..Default::default() };
    cmd_synth_data(&tree, 64, &data_dir)?;

    let config = RunConfig {
        resolution: 32,
        schedule: ScheduleConfig { num_steps: 100, beta_start: 1e-3, beta_end: 0.2 },
        denoiser: DenoiserConfig { base_channels: 16, depth: 2, time_embed_dim: 64 },
        loss: LossConfig::vessel(2.0),
        train: TrainConfig { epochs: 30, batch_size: 8, learning_rate: 2e-3, seed: 41 },
        dataset_dir: Some(data_dir),
        output_dir: root.clone(),
    };
    config.save(&root.join("config.json"))?;

    let result = cmd_train(&config, None)?;
    println!(
        "\nloss fell from {:.4} to {:.4} over {} epochs",
        result.loss_history.first().unwrap(),
        result.loss_history.last().unwrap(),
        result.loss_history.len()
    );
    println!("checkpoint: {}", root.join("model.ckpt").display());
    println!("loss curve: {}", root.join("loss_history.csv").display());
    Ok(())
}
