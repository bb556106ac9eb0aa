//! Implementations behind the command-line interface. Each function is a
//! pure function of its inputs, the filesystem paths it names, and the
//! seeds in play; the binary in `main.rs` only parses arguments and
//! dispatches here.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{canonical_json, sha256_hex, RunConfig};
use crate::diffusion::{binarize, ddpm_sample, DEFAULT_BINARIZE_THRESHOLD};
use crate::error::{Error, Result};
use crate::mask::{read_mask_png, write_gray_png, write_mask_png, AvMask};
use crate::metrics::{
    empty_sample_rate, struct_report, StructReport, DEFAULT_EMPTY_THRESHOLD,
};
use crate::optim::{AdamConfig, OptimizerState};
use crate::rng::derive_rng;
use crate::synth::{dataset_entry_seed, generate_dataset, VesselTreeConfig};
use crate::train::{resume_training, TrainResult};

/// Manifest written next to a synthesized dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config_digest: String,
    pub resolution: usize,
    pub count: usize,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub seed: u64,
    pub foreground_fraction: f64,
}

impl DatasetManifest {
    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self).expect("manifest serializes");
        sha256_hex(canonical_json(&value).as_bytes())
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Synthesize `count` masks into `out_dir` plus a manifest.
pub fn cmd_synth_data(
    cfg: &VesselTreeConfig,
    count: usize,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let masks = generate_dataset(count, cfg)?;
    let config_digest = {
        let value = serde_json::to_value(cfg).expect("config serializes");
        sha256_hex(canonical_json(&value).as_bytes())
    };
    let mut entries = Vec::with_capacity(count);
    for (i, mask) in masks.iter().enumerate() {
        let file = format!("mask_{i:05}.png");
        write_mask_png(&out_dir.join(&file), mask)?;
        entries.push(ManifestEntry {
            file,
            seed: dataset_entry_seed(cfg.seed, i as u64),
            foreground_fraction: mask.combined_foreground_fraction(),
        });
    }
    let manifest = DatasetManifest {
        config_digest,
        resolution: cfg.width,
        count,
        entries,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::format(&path, format!("manifest serialize: {e}")))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Read every mask PNG in a directory (sorted by name). Non-PNG files are
/// ignored; a nonconforming PNG is an error here.
pub fn load_mask_dir(dir: &Path) -> Result<Vec<AvMask>> {
    let mut files = list_pngs(dir)?;
    files.sort();
    let mut masks = Vec::with_capacity(files.len());
    for f in files {
        masks.push(read_mask_png(&f)?);
    }
    Ok(masks)
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "png") {
            files.push(path);
        }
    }
    Ok(files)
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_CSV_FILE: &str = "loss_history.csv";

/// Train per the run config, writing a checkpoint and a loss CSV row after
/// every epoch. On divergence the last completed epoch's checkpoint stays
/// on disk. Pass `resume` to continue from an earlier checkpoint.
pub fn cmd_train(config: &RunConfig, resume: Option<&Path>) -> Result<TrainResult> {
    config.validate()?;
    let dataset_dir = config.dataset_dir.as_ref().ok_or_else(|| {
        Error::InvalidParameter("training requires dataset_dir in the config".into())
    })?;
    let dataset = load_mask_dir(dataset_dir)?;
    if dataset.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no mask PNGs in {}",
            dataset_dir.display()
        )));
    }
    if dataset[0].width() != config.resolution {
        return Err(Error::InvalidParameter(format!(
            "dataset resolution {} does not match configured {}",
            dataset[0].width(),
            config.resolution
        )));
    }
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| Error::io(&config.output_dir, e))?;

    let schedule = config.schedule.build()?;
    let ckpt_path = config.output_dir.join(CHECKPOINT_FILE);
    let csv_path = config.output_dir.join(LOSS_CSV_FILE);

    let (model, optimizer, history) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.config.denoiser != config.denoiser {
                return Err(Error::InvalidParameter(
                    "checkpoint denoiser config does not match the run config".into(),
                ));
            }
            (ckpt.model, ckpt.optimizer, ckpt.loss_history)
        }
        None => {
            let model = crate::denoiser::UNetDenoiser::init(config.denoiser, config.train.seed)?;
            let optimizer = OptimizerState::new(
                AdamConfig::with_learning_rate(config.train.learning_rate),
                model.params(),
            );
            (model, optimizer, Vec::new())
        }
    };

    let mut csv_rows: Vec<String> =
        history.iter().enumerate().map(|(e, l)| format!("{e},{l}")).collect();
    let result = resume_training(
        &dataset,
        model,
        optimizer,
        history,
        &config.loss,
        &schedule,
        &config.train,
        |report| {
            csv_rows.push(format!("{},{}", report.epoch, report.mean_loss));
            std::fs::write(&csv_path, csv_rows.join("\n") + "\n")
                .map_err(|e| Error::io(&csv_path, e))?;
            let snapshot = Checkpoint {
                config: config.clone(),
                model: report.model.clone(),
                optimizer: report.optimizer.clone(),
                loss_history: csv_rows
                    .iter()
                    .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
                    .collect(),
                epoch: report.epoch + 1,
            };
            snapshot.save(&ckpt_path)?;
            eprintln!("epoch {:>4}  mean loss {:.6}", report.epoch, report.mean_loss);
            Ok(())
        },
    )?;
    Ok(result)
}

/// Draw `count` samples from a checkpoint: raw grayscale channel pairs plus
/// binarized masks in the PNG convention.
pub fn cmd_sample(
    checkpoint_path: &Path,
    count: usize,
    seed: u64,
    threshold: f64,
    out_dir: &Path,
) -> Result<Vec<AvMask>> {
    let ckpt = Checkpoint::load(checkpoint_path)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    if count == 0 {
        return Ok(Vec::new());
    }
    let schedule = ckpt.config.schedule.build()?;
    let res = ckpt.config.resolution;
    let mut rng = derive_rng(seed, 0x5A3);
    let raw = ddpm_sample(&ckpt.model, &schedule, &mut rng, count, res, res)?;
    let masks = binarize(&raw, threshold)?;
    let plane = res * res;
    for (i, mask) in masks.iter().enumerate() {
        let base = i * 2 * plane;
        write_gray_png(
            &out_dir.join(format!("sample_{i:05}_raw_artery.png")),
            res,
            res,
            &raw.values()[base..base + plane],
        )?;
        write_gray_png(
            &out_dir.join(format!("sample_{i:05}_raw_vein.png")),
            res,
            res,
            &raw.values()[base + plane..base + 2 * plane],
        )?;
        write_mask_png(&out_dir.join(format!("sample_{i:05}_mask.png")), mask)?;
    }
    Ok(masks)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub window_radius: usize,
    pub empty_threshold: f64,
    pub per_mask: Vec<MaskEntry>,
    pub skipped: Vec<SkippedEntry>,
    pub aggregate: Option<Aggregate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskEntry {
    pub file: String,
    pub report: StructReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedEntry {
    pub file: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub mask_count: usize,
    pub empty_sample_rate: f64,
    pub mean_combined_foreground_fraction: f64,
    pub mean_crossing_pixel_count: f64,
    pub artery: ChannelAggregate,
    pub vein: ChannelAggregate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelAggregate {
    pub mean_component_count: f64,
    pub mean_branch_point_count: f64,
    pub mean_trifurcation_count: f64,
    pub mean_loop_count: f64,
    pub mean_foreground_fraction: f64,
}

/// Structural report for every conformant mask PNG in a directory.
/// Nonconforming files are skipped with a warning and listed in the report.
pub fn cmd_metrics(
    mask_dir: &Path,
    window_radius: usize,
    empty_threshold: f64,
) -> Result<MetricsReport> {
    let mut files = list_pngs(mask_dir)?;
    files.sort();
    let mut per_mask = Vec::new();
    let mut skipped = Vec::new();
    let mut masks = Vec::new();
    for path in &files {
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        match read_mask_png(path) {
            Ok(mask) => {
                let report = struct_report(&mask, window_radius, empty_threshold)?;
                per_mask.push(MaskEntry { file: name, report });
                masks.push(mask);
            }
            Err(err) => {
                eprintln!("warning: skipping {name}: {err}");
                skipped.push(SkippedEntry { file: name, reason: err.to_string() });
            }
        }
    }
    let aggregate = if masks.is_empty() {
        None
    } else {
        Some(aggregate_reports(&masks, &per_mask, empty_threshold)?)
    };
    Ok(MetricsReport {
        window_radius,
        empty_threshold,
        per_mask,
        skipped,
        aggregate,
    })
}

fn aggregate_reports(
    masks: &[AvMask],
    entries: &[MaskEntry],
    empty_threshold: f64,
) -> Result<Aggregate> {
    let n = masks.len() as f64;
    let channel = |pick: fn(&StructReport) -> &crate::metrics::ChannelReport| ChannelAggregate {
        mean_component_count: entries.iter().map(|e| pick(&e.report).component_count as f64).sum::<f64>() / n,
        mean_branch_point_count: entries.iter().map(|e| pick(&e.report).branch_point_count as f64).sum::<f64>() / n,
        mean_trifurcation_count: entries.iter().map(|e| pick(&e.report).trifurcation_count as f64).sum::<f64>() / n,
        mean_loop_count: entries.iter().map(|e| pick(&e.report).loop_count as f64).sum::<f64>() / n,
        mean_foreground_fraction: entries.iter().map(|e| pick(&e.report).foreground_fraction).sum::<f64>() / n,
    };
    Ok(Aggregate {
        mask_count: masks.len(),
        empty_sample_rate: empty_sample_rate(masks, empty_threshold)?,
        mean_combined_foreground_fraction: masks
            .iter()
            .map(|m| m.combined_foreground_fraction())
            .sum::<f64>()
            / n,
        mean_crossing_pixel_count: entries
            .iter()
            .map(|e| e.report.crossing_pixel_count as f64)
            .sum::<f64>()
            / n,
        artery: channel(|r| &r.artery),
        vein: channel(|r| &r.vein),
    })
}

/// Outcome of the two-arm loss comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub dataset: ComparisonDataset,
    pub empty_threshold: f64,
    pub samples_per_arm: usize,
    pub arms: ComparisonArms,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonDataset {
    pub manifest_digest: String,
    pub size: usize,
    pub resolution: usize,
    pub mean_foreground_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonArms {
    pub simple: ArmOutcome,
    pub vessel: ArmOutcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmOutcome {
    pub config: RunConfig,
    pub config_digest: String,
    pub final_epoch_loss: f64,
    pub empty_sample_rate: f64,
    pub mean_foreground_fraction: f64,
}

/// Train two models that differ only in the loss variant on one shared
/// synthetic dataset, sample both, and report empty-sample rates and
/// foreground fractions side by side.
pub fn cmd_compare_loss(
    config: &RunConfig,
    dataset_size: usize,
    samples_per_arm: usize,
) -> Result<Comparison> {
    config.validate()?;
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| Error::io(&config.output_dir, e))?;

    // one dataset, shared by both arms
    let tree_cfg = VesselTreeConfig {
        width: config.resolution,
        height: config.resolution,
        seed: config.train.seed,
        ..VesselTreeConfig::default()
    };
    let data_dir = config.output_dir.join("dataset");
    eprintln!("synthesizing {dataset_size} masks into {}", data_dir.display());
    let manifest = cmd_synth_data(&tree_cfg, dataset_size, &data_dir)?;
    let manifest_digest = manifest.digest();
    let dataset = load_mask_dir(&data_dir)?;
    let mean_fg = dataset
        .iter()
        .map(|m| m.combined_foreground_fraction())
        .sum::<f64>()
        / dataset.len().max(1) as f64;

    let run_arm = |variant: crate::diffusion::LossVariant| -> Result<ArmOutcome> {
        let label = match variant {
            crate::diffusion::LossVariant::Simple => "simple",
            crate::diffusion::LossVariant::Vessel => "vessel",
        };
        let arm_config = RunConfig {
            loss: crate::diffusion::LossConfig { variant, c: config.loss.c },
            dataset_dir: Some(data_dir.clone()),
            output_dir: config.output_dir.join(label),
            ..config.clone()
        };
        eprintln!("training {label} arm ({} epochs)", arm_config.train.epochs);
        let result = cmd_train(&arm_config, None)?;
        eprintln!("sampling {samples_per_arm} masks from {label} arm");
        let masks = cmd_sample(
            &arm_config.output_dir.join(CHECKPOINT_FILE),
            samples_per_arm,
            config.train.seed,
            DEFAULT_BINARIZE_THRESHOLD,
            &arm_config.output_dir.join("samples"),
        )?;
        Ok(ArmOutcome {
            config_digest: arm_config.digest(),
            config: arm_config,
            final_epoch_loss: *result.loss_history.last().unwrap_or(&f64::NAN),
            empty_sample_rate: empty_sample_rate(&masks, DEFAULT_EMPTY_THRESHOLD)?,
            mean_foreground_fraction: masks
                .iter()
                .map(|m| m.combined_foreground_fraction())
                .sum::<f64>()
                / masks.len().max(1) as f64,
        })
    };

    let comparison = Comparison {
        dataset: ComparisonDataset {
            manifest_digest,
            size: dataset_size,
            resolution: config.resolution,
            mean_foreground_fraction: mean_fg,
        },
        empty_threshold: DEFAULT_EMPTY_THRESHOLD,
        samples_per_arm,
        arms: ComparisonArms {
            simple: run_arm(crate::diffusion::LossVariant::Simple)?,
            vessel: run_arm(crate::diffusion::LossVariant::Vessel)?,
        },
    };
    let path = config.output_dir.join("comparison.json");
    let text = serde_json::to_string_pretty(&comparison)
        .map_err(|e| Error::format(&path, format!("comparison serialize: {e}")))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(comparison)
}

/// Run the finite-difference verification suite: every primitive op over
/// many seeds, then both losses end to end through a small denoiser.
pub fn cmd_gradcheck(seeds: u32) -> Result<()> {
    use crate::denoiser::{DenoiserConfig, TrainableDenoiser, UNetDenoiser};
    use crate::diffusion::{loss_on_tape, DiffusionBatch, LossConfig};
    use crate::rng::fill_standard_normal;
    use crate::schedule::NoiseSchedule;
    use crate::tensor::gradcheck::{
        finite_diff_grad, gradient_deviation, run_primitive_gradient_suite, PRIMITIVE_TOLERANCE,
    };
    use crate::tensor::tape::Tape;
    use crate::tensor::Tensor;

    let mut failures = 0usize;
    for check in run_primitive_gradient_suite(seeds)? {
        let ok = check.passed(PRIMITIVE_TOLERANCE);
        println!(
            "{} {:<22} max rel err {:.3e} over {} seeds",
            if ok { "PASS" } else { "FAIL" },
            check.op,
            check.max_rel_err,
            check.seeds
        );
        if !ok {
            failures += 1;
        }
    }

    let cfg = DenoiserConfig { base_channels: 8, depth: 1, time_embed_dim: 16 };
    let model = UNetDenoiser::init(cfg, 17)?;
    let schedule = NoiseSchedule::linear(10, 1e-3, 0.1)?;
    let mut rng = derive_rng(0xE2E, 0);
    use rand::RngExt;
    let mask_vals: Vec<f32> = (0..2 * 8 * 8)
        .map(|_| if rng.random::<f32>() < 0.15 { 1.0 } else { 0.0 })
        .collect();
    let raw = Tensor::from_vec(vec![1, 2, 8, 8], mask_vals)?;
    let mut eps = vec![0.0f32; 2 * 8 * 8];
    fill_standard_normal(&mut rng, &mut eps);
    let eps = Tensor::from_vec(vec![1, 2, 8, 8], eps)?;
    let batch = DiffusionBatch::new(raw, vec![4], eps, 10)?;

    for (name, loss_cfg) in [
        ("loss_simple", LossConfig::simple()),
        ("loss_vessel(c=2)", LossConfig::vessel(2.0)),
    ] {
        let trainable = TrainableDenoiser::new(&model);
        let mut tape = Tape::new();
        let graph = loss_on_tape(&trainable, &mut tape, &batch, &schedule, &loss_cfg)?;
        let grads = tape.backward(graph.loss)?;
        let named = trainable.collect_gradients(&grads)?;
        let ordered = model.params().to_ordered();
        let fd = finite_diff_grad(&ordered, 1e-2, |ps| {
            let params = model.params().from_ordered(ps.to_vec())?;
            let m = UNetDenoiser::from_params(cfg, params)?;
            let mut tape = Tape::new();
            let graph = loss_on_tape(&m, &mut tape, &batch, &schedule, &loss_cfg)?;
            let pe = tape.value(graph.per_element);
            Ok(pe.sum_f64() / pe.len() as f64)
        })?;
        let mut worst = 0.0f64;
        for ((_, analytic), fd_grad) in named.iter().zip(&fd) {
            worst = worst.max(gradient_deviation(analytic, fd_grad));
        }
        let ok = worst < 1e-3;
        println!(
            "{} end-to-end {:<16} worst gradient deviation {:.3e}",
            if ok { "PASS" } else { "FAIL" },
            name,
            worst
        );
        if !ok {
            failures += 1;
        }
    }

    if failures > 0 {
        return Err(Error::Numerical(format!(
            "{failures} gradient check(s) failed"
        )));
    }
    Ok(())
}
