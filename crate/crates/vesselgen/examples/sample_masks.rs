//! Draw masks from a trained checkpoint with the ancestral sampler and
//! score their structure. Runs `train_denoiser`'s checkpoint if present,
//! otherwise trains one first.
//!
//! ```bash
//! cargo run --release -p vesselgen --example train_denoiser   # once
//! cargo run --release -p vesselgen --example sample_masks
//! ```

use std::path::PathBuf;

use vesselgen::checkpoint::Checkpoint;
use vesselgen::commands::{cmd_metrics, cmd_sample};
use vesselgen::metrics::{DEFAULT_EMPTY_THRESHOLD, DEFAULT_WINDOW_RADIUS};

fn main() -> vesselgen::Result<()> {
    let ckpt_path = PathBuf::from("target/example-out/train_denoiser/model.ckpt");
    if !ckpt_path.exists() {
        eprintln!("no checkpoint yet; run the train_denoiser example first");
        std::process::exit(1);
    }
    let ckpt = Checkpoint::load(&ckpt_path)?;
    println!(
        "checkpoint: {} epochs trained, final loss {:.4}",
        ckpt.epoch,
        ckpt.loss_history.last().unwrap_or(&f64::NAN)
    );

    let out = PathBuf::from("target/example-out/sample_masks");
    let masks = cmd_sample(&ckpt_path, 8, 7, 0.0, &out)?;
    println!("wrote {} samples to {}", masks.len(), out.display());

    let report = cmd_metrics(&out, DEFAULT_WINDOW_RADIUS, DEFAULT_EMPTY_THRESHOLD)?;
    if let Some(agg) = report.aggregate {
        println!("empty sample rate: {:.2}", agg.empty_sample_rate);
        println!(
            "mean foreground fraction: {:.4} (training data was ~0.11)",
            agg.mean_combined_foreground_fraction
        );
        println!(
            "mean branch points per channel: artery {:.1}, vein {:.1}",
            agg.artery.mean_branch_point_count, agg.vein.mean_branch_point_count
        );
        println!(
            "mean loops per channel: artery {:.2}, vein {:.2}",
            agg.artery.mean_loop_count, agg.vein.mean_loop_count
        );
    }
    Ok(())
}
