//! Command-line front end: argument parsing and dispatch only; all work
//! happens in the library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vesselgen::commands;
use vesselgen::config::RunConfig;
use vesselgen::diffusion::{LossConfig, LossVariant, DEFAULT_BINARIZE_THRESHOLD};
use vesselgen::error::Result;
use vesselgen::metrics::{DEFAULT_EMPTY_THRESHOLD, DEFAULT_WINDOW_RADIUS};
use vesselgen::synth::VesselTreeConfig;

#[derive(Parser)]
#[command(
    name = "vesselgen",
    about = "Diffusion-based generator of two-channel artery/vein vessel masks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset of vessel-tree masks plus a manifest
    SynthData(SynthArgs),
    /// Train a denoiser on a directory of mask PNGs
    Train(TrainArgs),
    /// Sample masks from a trained checkpoint
    Sample(SampleArgs),
    /// Structural metrics over a directory of mask PNGs
    Metrics(MetricsArgs),
    /// Train both loss variants on one dataset and compare their samples
    CompareLoss(CompareArgs),
    /// Verify analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for mask PNGs and the manifest
    #[arg(long)]
    out: PathBuf,
    /// Number of masks
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Root seed for the dataset
    #[arg(long)]
    seed: u64,
    /// Mask width and height in pixels
    #[arg(long, default_value_t = 32)]
    resolution: usize,
    /// Trees grown per channel
    #[arg(long, default_value_t = 2)]
    trees_per_channel: usize,
    /// Stroke width at the root, pixels
    #[arg(long, default_value_t = 2.0)]
    root_width: f64,
    /// Width multiplier per bifurcation, in (0, 1)
    #[arg(long, default_value_t = 0.70)]
    width_decay: f64,
    /// Per-step probability of splitting
    #[arg(long, default_value_t = 0.10)]
    bifurcation_prob: f64,
    /// Maximum bifurcations along any path
    #[arg(long, default_value_t = 2)]
    max_depth: usize,
    /// Walk step in pixels
    #[arg(long, default_value_t = 1.0)]
    step_length: f64,
}

#[derive(Args)]
struct ConfigOverrides {
    /// JSON run config; field flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    timesteps: Option<usize>,
    #[arg(long)]
    beta_start: Option<f64>,
    #[arg(long)]
    beta_end: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    /// Loss variant: simple or vessel
    #[arg(long)]
    loss: Option<String>,
    /// Vessel-emphasis exponent for the weighted loss
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    dataset_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigOverrides {
    fn build(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.resolution {
            cfg.resolution = v;
        }
        if let Some(v) = self.timesteps {
            cfg.schedule.num_steps = v;
        }
        if let Some(v) = self.beta_start {
            cfg.schedule.beta_start = v;
        }
        if let Some(v) = self.beta_end {
            cfg.schedule.beta_end = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.train.learning_rate = v;
        }
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        if let Some(v) = self.base_channels {
            cfg.denoiser.base_channels = v;
        }
        if let Some(v) = self.depth {
            cfg.denoiser.depth = v;
        }
        if let Some(v) = &self.loss {
            cfg.loss.variant = match v.as_str() {
                "simple" => LossVariant::Simple,
                "vessel" => LossVariant::Vessel,
                other => {
                    return Err(vesselgen::Error::InvalidParameter(format!(
                        "unknown loss variant {other}; use simple or vessel"
                    )))
                }
            };
        }
        if let Some(v) = self.c {
            cfg.loss = LossConfig { variant: cfg.loss.variant, c: v };
        }
        if let Some(v) = &self.dataset_dir {
            cfg.dataset_dir = Some(v.clone());
        }
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Continue from an existing checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    /// Trained checkpoint file
    #[arg(long)]
    checkpoint: PathBuf,
    /// Number of samples
    #[arg(long, default_value_t = 16)]
    count: usize,
    /// Sampling seed
    #[arg(long)]
    seed: u64,
    /// Binarization threshold in (-1, 1)
    #[arg(long, default_value_t = DEFAULT_BINARIZE_THRESHOLD)]
    threshold: f64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// Directory of mask PNGs
    #[arg(long)]
    dir: PathBuf,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_WINDOW_RADIUS)]
    window_radius: usize,
    #[arg(long, default_value_t = DEFAULT_EMPTY_THRESHOLD)]
    empty_threshold: f64,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Synthetic masks to train on
    #[arg(long, default_value_t = 500)]
    dataset_size: usize,
    /// Samples drawn per arm
    #[arg(long, default_value_t = 64)]
    samples: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random seeds per primitive op
    #[arg(long, default_value_t = 100)]
    seeds: u32,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData(args) => {
            let cfg = VesselTreeConfig {
                width: args.resolution,
                height: args.resolution,
                trees_per_channel: args.trees_per_channel,
                root_width: args.root_width,
                width_decay: args.width_decay,
                bifurcation_prob: args.bifurcation_prob,
                max_depth: args.max_depth,
                step_length: args.step_length,
                seed: args.seed,
                ..VesselTreeConfig::default()
            };
            let manifest = commands::cmd_synth_data(&cfg, args.count, &args.out)?;
            println!(
                "wrote {} masks to {} (manifest digest {})",
                manifest.count,
                args.out.display(),
                &manifest.digest()[..12]
            );
            Ok(())
        }
        Command::Train(args) => {
            let cfg = args.overrides.build()?;
            let result = commands::cmd_train(&cfg, args.resume.as_deref())?;
            println!(
                "trained {} epochs; final loss {:.6}; checkpoint at {}",
                result.loss_history.len(),
                result.loss_history.last().unwrap_or(&f64::NAN),
                cfg.output_dir.join(commands::CHECKPOINT_FILE).display()
            );
            Ok(())
        }
        Command::Sample(args) => {
            let masks = commands::cmd_sample(
                &args.checkpoint,
                args.count,
                args.seed,
                args.threshold,
                &args.out,
            )?;
            println!("wrote {} samples to {}", masks.len(), args.out.display());
            Ok(())
        }
        Command::Metrics(args) => {
            let report =
                commands::cmd_metrics(&args.dir, args.window_radius, args.empty_threshold)?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            match &args.out {
                Some(path) => std::fs::write(path, text)
                    .map_err(|e| vesselgen::Error::io(path, e))?,
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::CompareLoss(args) => {
            let cfg = args.overrides.build()?;
            let comparison =
                commands::cmd_compare_loss(&cfg, args.dataset_size, args.samples)?;
            println!(
                "empty sample rate: simple {:.3} vs vessel {:.3}",
                comparison.arms.simple.empty_sample_rate,
                comparison.arms.vessel.empty_sample_rate
            );
            println!(
                "mean foreground: training {:.4}, simple {:.4}, vessel {:.4}",
                comparison.dataset.mean_foreground_fraction,
                comparison.arms.simple.mean_foreground_fraction,
                comparison.arms.vessel.mean_foreground_fraction
            );
            println!(
                "details in {}",
                cfg.output_dir.join("comparison.json").display()
            );
            Ok(())
        }
        Command::Gradcheck(args) => commands::cmd_gradcheck(args.seeds),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
