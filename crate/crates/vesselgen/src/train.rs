//! Minibatch training of the denoiser.
//!
//! Each epoch shuffles the dataset with its own derived stream, so training
//! resumed from epoch k walks exactly the same trajectory as an
//! uninterrupted run. All randomness flows from the configured seed.

use serde::{Deserialize, Serialize};

use crate::denoiser::{DenoiserConfig, TrainableDenoiser, UNetDenoiser};
use crate::diffusion::{loss_on_tape, DiffusionBatch, LossConfig};
use crate::error::{Error, Result};
use crate::mask::AvMask;
use crate::optim::{clip_global_norm, AdamConfig, OptimizerState};
use crate::rng::{derive_rng, fill_standard_normal};
use crate::schedule::NoiseSchedule;
use crate::tensor::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, batch_size: 8, learning_rate: 1e-3, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

const GRAD_CLIP_NORM: f64 = 1.0;

pub struct TrainResult {
    pub model: UNetDenoiser,
    pub optimizer: OptimizerState,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Snapshot handed to the per-epoch callback.
pub struct EpochReport<'a> {
    pub epoch: usize,
    pub mean_loss: f64,
    pub model: &'a UNetDenoiser,
    pub optimizer: &'a OptimizerState,
}

/// Train a fresh model on `dataset`.
pub fn train(
    dataset: &[AvMask],
    denoiser_cfg: DenoiserConfig,
    loss_cfg: &LossConfig,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochReport) -> Result<()>,
) -> Result<TrainResult> {
    let model = UNetDenoiser::init(denoiser_cfg, cfg.seed)?;
    let optimizer = OptimizerState::new(
        AdamConfig::with_learning_rate(cfg.learning_rate),
        model.params(),
    );
    resume_training(dataset, model, optimizer, Vec::new(), loss_cfg, schedule, cfg, on_epoch)
}

/// Continue training from existing parameters and optimizer state.
/// `loss_history` carries the epochs already run; training continues until
/// `cfg.epochs` total epochs are recorded.
#[allow(clippy::too_many_arguments)]
pub fn resume_training(
    dataset: &[AvMask],
    mut model: UNetDenoiser,
    mut optimizer: OptimizerState,
    mut loss_history: Vec<f64>,
    loss_cfg: &LossConfig,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport) -> Result<()>,
) -> Result<TrainResult> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidParameter("training dataset is empty".into()));
    }
    let (w, h) = (dataset[0].width(), dataset[0].height());
    if let Some(bad) = dataset.iter().find(|m| m.width() != w || m.height() != h) {
        return Err(Error::InvalidParameter(format!(
            "dataset mixes resolutions: {w}x{h} and {}x{}",
            bad.width(),
            bad.height()
        )));
    }

    let num_steps = schedule.num_steps();
    let start_epoch = loss_history.len();
    for epoch in start_epoch..cfg.epochs {
        let mut rng = derive_rng(cfg.seed, epoch as u64 + 1);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        shuffle(&mut order, &mut rng);

        let mut epoch_loss = 0.0f64;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = make_batch(dataset, chunk, num_steps, &mut rng)?;
            let trainable = TrainableDenoiser::new(&model);
            let mut tape = Tape::new();
            let graph = loss_on_tape(&trainable, &mut tape, &batch, schedule, loss_cfg)?;
            let per_element = tape.value(graph.per_element);
            let loss = per_element.sum_f64() / per_element.len() as f64;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss {loss} at epoch {epoch} step {steps}"
                )));
            }
            epoch_loss += loss;
            steps += 1;

            let grads = tape.backward(graph.loss)?;
            let mut named = trainable.collect_gradients(&grads)?;
            clip_global_norm(&mut named, GRAD_CLIP_NORM);
            let updated = optimizer.step(&model.params().clone(), &named)?;
            model.set_params(updated);
        }

        let mean_loss = epoch_loss / steps as f64;
        loss_history.push(mean_loss);
        on_epoch(&EpochReport { epoch, mean_loss, model: &model, optimizer: &optimizer })?;
    }
    Ok(TrainResult { model, optimizer, loss_history })
}

fn shuffle(values: &mut [usize], rng: &mut crate::rng::Rng) {
    use rand::RngExt;
    for i in (1..values.len()).rev() {
        values.swap(i, rng.random_range(0..=i));
    }
}

fn make_batch(
    dataset: &[AvMask],
    indices: &[usize],
    num_steps: usize,
    rng: &mut crate::rng::Rng,
) -> Result<DiffusionBatch> {
    use rand::RngExt;
    let masks: Vec<&AvMask> = indices.iter().map(|&i| &dataset[i]).collect();
    let raw = crate::diffusion::masks_to_tensor(&masks)?;
    let t: Vec<usize> = (0..indices.len())
        .map(|_| rng.random_range(0..num_steps))
        .collect();
    let mut eps = vec![0.0f32; raw.len()];
    fill_standard_normal(rng, &mut eps);
    let eps = Tensor::from_vec(raw.shape().to_vec(), eps)?;
    DiffusionBatch::new(raw, t, eps, num_steps)
}
