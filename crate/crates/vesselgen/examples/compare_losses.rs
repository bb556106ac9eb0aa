//! Miniature two-arm comparison of the plain and vessel-weighted losses on
//! one shared synthetic dataset. A scaled-down version of the
//! `compare-loss` CLI command; expect roughly a quarter hour on two cores.
//!
//! ```bash
//! cargo run --release -p vesselgen --example compare_losses
//! ```

use std::path::PathBuf;

use vesselgen::commands::cmd_compare_loss;
use vesselgen::config::RunConfig;
use vesselgen::denoiser::DenoiserConfig;
use vesselgen::diffusion::LossConfig;
use vesselgen::schedule::ScheduleConfig;
use vesselgen::train::TrainConfig;

fn main() -> vesselgen::Result<()> {
    let config = RunConfig {
        resolution: 32,
        schedule: ScheduleConfig { num_steps: 100, beta_start: 1e-3, beta_end: 0.2 },
        denoiser: DenoiserConfig { base_channels: 16, depth: 2, time_embed_dim: 64 },
        loss: LossConfig::vessel(2.0),
        train: TrainConfig { epochs: 40, batch_size: 8, learning_rate: 2e-3, seed: 11 },
        dataset_dir: None,
        output_dir: PathBuf::from("target/example-out/compare_losses"),
    };
    let cmp = cmd_compare_loss(&config, 160, 24)?;

    println!("\ntraining data mean foreground: {:.4}", cmp.dataset.mean_foreground_fraction);
    println!(
        "plain loss:    empty rate {:.3}, mean foreground {:.4}",
        cmp.arms.simple.empty_sample_rate, cmp.arms.simple.mean_foreground_fraction
    );
    println!(
        "vessel loss:   empty rate {:.3}, mean foreground {:.4}",
        cmp.arms.vessel.empty_sample_rate, cmp.arms.vessel.mean_foreground_fraction
    );
    Ok(())
}
