//! Forward diffusion, the two training losses, and the ancestral sampler.
//!
//! Data convention: the model operates on values in [-1, 1] (background -1,
//! vessel +1), while the loss weighting uses the raw {0, 1} mask, giving
//! weight 1 on background pixels and e^c on vessel pixels. Weighting from
//! the [-1, 1] representation instead would scale background below 1 and
//! change the loss scale; the {0, 1} form only ever emphasizes vessels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{AvMask, Bitmap};
use crate::rng::{fill_standard_normal, Rng};
use crate::schedule::NoiseSchedule;
use crate::tensor::tape::{Tape, ValueId};
use crate::tensor::Tensor;

/// Anything that predicts the noise component of a diffused image.
pub trait Denoiser {
    /// Record the prediction onto `tape` and return the output node. `x_t`
    /// must be a `B x 2 x H x W` node and `t` one timestep per batch element.
    fn predict_noise_on_tape(&self, tape: &mut Tape, x_t: ValueId, t: &[usize]) -> Result<ValueId>;

    /// Plain prediction without gradient bookkeeping.
    fn predict_noise(&self, x_t: &Tensor, t: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x_id = tape.constant(x_t.clone());
        let out = self.predict_noise_on_tape(&mut tape, x_id, t)?;
        Ok(tape.value(out).clone())
    }
}

/// Which training loss to use, and the vessel-emphasis exponent for the
/// weighted variant (ignored by the plain one).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub variant: LossVariant,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    Simple,
    Vessel,
}

impl LossConfig {
    pub fn simple() -> Self {
        LossConfig { variant: LossVariant::Simple, c: 0.0 }
    }

    pub fn vessel(c: f64) -> Self {
        LossConfig { variant: LossVariant::Vessel, c }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant == LossVariant::Vessel && self.c < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "vessel loss exponent c must be >= 0, got {}",
                self.c
            )));
        }
        Ok(())
    }
}

/// One training minibatch: clean images, their raw masks, per-element
/// timesteps, and the noise to mix in.
#[derive(Debug, Clone)]
pub struct DiffusionBatch {
    /// `B x 2 x H x W`, values in [-1, 1]; always `2 * raw_mask - 1`.
    pub x0: Tensor,
    /// `B x 2 x H x W`, values in {0, 1}.
    pub raw_mask: Tensor,
    /// One timestep per batch element, each in `[0, T)`.
    pub t: Vec<usize>,
    /// Standard-normal draws, same shape as `x0`.
    pub eps: Tensor,
}

impl DiffusionBatch {
    pub fn new(raw_mask: Tensor, t: Vec<usize>, eps: Tensor, num_steps: usize) -> Result<Self> {
        let shape = raw_mask.shape().to_vec();
        if shape.len() != 4 || shape[1] != 2 {
            return Err(Error::ShapeMismatch(format!(
                "batch must be B x 2 x H x W, got {shape:?}"
            )));
        }
        if eps.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "noise shape {:?} does not match batch shape {shape:?}",
                eps.shape()
            )));
        }
        if t.len() != shape[0] {
            return Err(Error::ShapeMismatch(format!(
                "{} timesteps for batch of {}",
                t.len(),
                shape[0]
            )));
        }
        if let Some(&bad) = t.iter().find(|&&tv| tv >= num_steps) {
            return Err(Error::InvalidParameter(format!(
                "timestep {bad} outside schedule of {num_steps} steps"
            )));
        }
        if raw_mask.values().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidParameter(
                "raw mask values must be exactly 0 or 1".into(),
            ));
        }
        let x0_values = raw_mask.values().iter().map(|&v| 2.0 * v - 1.0).collect();
        let x0 = Tensor::from_vec(shape, x0_values)?;
        Ok(DiffusionBatch { x0, raw_mask, t, eps })
    }

    pub fn batch_size(&self) -> usize {
        self.t.len()
    }
}

/// Stack masks into a `B x 2 x H x W` tensor of {0, 1} values.
pub fn masks_to_tensor(masks: &[&AvMask]) -> Result<Tensor> {
    let first = masks
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty mask batch".into()))?;
    let (w, h) = (first.width(), first.height());
    let mut values = Vec::with_capacity(masks.len() * 2 * h * w);
    for m in masks {
        if m.width() != w || m.height() != h {
            return Err(Error::ShapeMismatch(format!(
                "mixed resolutions in batch: {w}x{h} vs {}x{}",
                m.width(),
                m.height()
            )));
        }
        for channel in [&m.artery, &m.vein] {
            values.extend(channel.data().iter().map(|&b| if b { 1.0f32 } else { 0.0 }));
        }
    }
    Tensor::from_vec(vec![masks.len(), 2, h, w], values)
}

/// Closed-form noising: `sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`,
/// with the schedule coefficients broadcast per batch element.
pub fn forward_diffuse(
    x0: &Tensor,
    t: &[usize],
    eps: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    let shape = x0.shape();
    if eps.shape() != shape {
        return Err(Error::ShapeMismatch(format!(
            "noise shape {:?} does not match x0 shape {shape:?}",
            eps.shape()
        )));
    }
    if shape.len() != 4 || t.len() != shape[0] {
        return Err(Error::ShapeMismatch(format!(
            "{} timesteps for x0 shape {shape:?}",
            t.len()
        )));
    }
    if let Some(&bad) = t.iter().find(|&&tv| tv >= schedule.num_steps()) {
        return Err(Error::InvalidParameter(format!(
            "timestep {bad} outside schedule of {} steps",
            schedule.num_steps()
        )));
    }
    let plane = shape[1] * shape[2] * shape[3];
    let mut out = Vec::with_capacity(x0.len());
    for (bi, &tv) in t.iter().enumerate() {
        let ab = schedule.alpha_bar(tv);
        let signal = ab.sqrt() as f32;
        let noise = (1.0 - ab).sqrt() as f32;
        let xs = &x0.values()[bi * plane..(bi + 1) * plane];
        let es = &eps.values()[bi * plane..(bi + 1) * plane];
        out.extend(xs.iter().zip(es).map(|(&x, &e)| signal * x + noise * e));
    }
    Tensor::from_vec(shape.to_vec(), out)
}

/// The training-loss graph: the scalar loss node plus the pre-reduction
/// per-element node it is the mean of (useful for f64 re-evaluation).
pub struct LossGraph {
    pub loss: ValueId,
    pub per_element: ValueId,
}

/// Record the configured training loss onto `tape`: the mean over batch and
/// pixels of `weight .* (eps - predicted)^2`, with weight 1 for the plain
/// variant and `exp(c * raw_mask)` for the vessel-weighted one.
pub fn loss_on_tape<D: Denoiser>(
    denoiser: &D,
    tape: &mut Tape,
    batch: &DiffusionBatch,
    schedule: &NoiseSchedule,
    cfg: &LossConfig,
) -> Result<LossGraph> {
    cfg.validate()?;
    let x_t = forward_diffuse(&batch.x0, &batch.t, &batch.eps, schedule)?;
    let x_t_id = tape.constant(x_t);
    let pred = denoiser.predict_noise_on_tape(tape, x_t_id, &batch.t)?;
    let eps_id = tape.constant(batch.eps.clone());
    let diff = tape.sub(eps_id, pred)?;
    let sq = tape.mul(diff, diff)?;
    let per_element = match cfg.variant {
        LossVariant::Simple => sq,
        LossVariant::Vessel => {
            let weights = batch.raw_mask.scale(cfg.c as f32).exp();
            let w_id = tape.constant(weights);
            tape.mul(w_id, sq)?
        }
    };
    let loss = tape.mean(per_element);
    Ok(LossGraph { loss, per_element })
}

/// Scalar loss under the plain (unweighted) objective.
pub fn loss_simple<D: Denoiser>(
    denoiser: &D,
    batch: &DiffusionBatch,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    loss_value(denoiser, batch, schedule, &LossConfig::simple())
}

/// Scalar loss under the vessel-weighted objective.
pub fn loss_vessel<D: Denoiser>(
    denoiser: &D,
    batch: &DiffusionBatch,
    schedule: &NoiseSchedule,
    c: f64,
) -> Result<f64> {
    loss_value(denoiser, batch, schedule, &LossConfig::vessel(c))
}

fn loss_value<D: Denoiser>(
    denoiser: &D,
    batch: &DiffusionBatch,
    schedule: &NoiseSchedule,
    cfg: &LossConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let graph = loss_on_tape(denoiser, &mut tape, batch, schedule, cfg)?;
    let n = tape.value(graph.per_element).len() as f64;
    Ok(tape.value(graph.per_element).sum_f64() / n)
}

/// Ancestral sampling: start from pure noise and walk the reverse chain
/// down to t = 0. The final estimate is clamped to [-1, 1]. A pure function
/// of (denoiser parameters, schedule, generator state, shape).
pub fn ddpm_sample<D: Denoiser>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
    batch: usize,
    height: usize,
    width: usize,
) -> Result<Tensor> {
    let shape = [batch, 2, height, width];
    let numel = batch * 2 * height * width;
    let mut x = vec![0.0f32; numel];
    fill_standard_normal(rng, &mut x);
    let mut x = Tensor::from_vec(shape.to_vec(), x)?;

    let mut z = vec![0.0f32; numel];
    for t in (0..schedule.num_steps()).rev() {
        let pred = predict_chunked(denoiser, &x, t)?;
        let inv_sqrt_alpha = (1.0 / schedule.alpha(t).sqrt()) as f32;
        let eps_coef = (schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt()) as f32;
        let sigma = schedule.posterior_variance(t).sqrt() as f32;
        let mut next = Vec::with_capacity(numel);
        if t > 0 {
            fill_standard_normal(rng, &mut z);
            next.extend(
                x.values()
                    .iter()
                    .zip(pred.values())
                    .zip(&z)
                    .map(|((&xv, &pv), &zv)| inv_sqrt_alpha * (xv - eps_coef * pv) + sigma * zv),
            );
        } else {
            next.extend(
                x.values()
                    .iter()
                    .zip(pred.values())
                    .map(|(&xv, &pv)| inv_sqrt_alpha * (xv - eps_coef * pv)),
            );
        }
        x = Tensor::from_vec(shape.to_vec(), next)?;
    }
    Ok(x.clamp(-1.0, 1.0))
}

// Forward in slices of the batch to bound peak activation memory. Every
// computation is independent per batch element, so slicing does not change
// any value.
const SAMPLE_CHUNK: usize = 16;

fn predict_chunked<D: Denoiser>(denoiser: &D, x: &Tensor, t: usize) -> Result<Tensor> {
    let shape = x.shape();
    let (b, plane) = (shape[0], shape[1] * shape[2] * shape[3]);
    if b <= SAMPLE_CHUNK {
        return denoiser.predict_noise(x, &vec![t; b]);
    }
    let mut out = Vec::with_capacity(x.len());
    for start in (0..b).step_by(SAMPLE_CHUNK) {
        let end = (start + SAMPLE_CHUNK).min(b);
        let chunk = Tensor::from_vec(
            vec![end - start, shape[1], shape[2], shape[3]],
            x.values()[start * plane..end * plane].to_vec(),
        )?;
        let pred = denoiser.predict_noise(&chunk, &vec![t; end - start])?;
        out.extend_from_slice(pred.values());
    }
    Tensor::from_vec(shape.to_vec(), out)
}

/// Threshold sampler output into a two-channel mask: a pixel is foreground
/// iff its value is strictly above `threshold`.
pub fn binarize(sampled: &Tensor, threshold: f64) -> Result<Vec<AvMask>> {
    if !(-1.0 < threshold && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "binarization threshold must lie in (-1, 1), got {threshold}"
        )));
    }
    let shape = sampled.shape();
    if shape.len() != 4 || shape[1] != 2 {
        return Err(Error::ShapeMismatch(format!(
            "expected B x 2 x H x W samples, got {shape:?}"
        )));
    }
    let (b, h, w) = (shape[0], shape[2], shape[3]);
    let thr = threshold as f32;
    let plane = h * w;
    let mut masks = Vec::with_capacity(b);
    for bi in 0..b {
        let base = bi * 2 * plane;
        let artery: Vec<bool> = sampled.values()[base..base + plane]
            .iter()
            .map(|&v| v > thr)
            .collect();
        let vein: Vec<bool> = sampled.values()[base + plane..base + 2 * plane]
            .iter()
            .map(|&v| v > thr)
            .collect();
        masks.push(AvMask::new(
            Bitmap::from_data(w, h, artery)?,
            Bitmap::from_data(w, h, vein)?,
        )?);
    }
    Ok(masks)
}

/// Default binarization threshold: the midpoint of the value range.
pub const DEFAULT_BINARIZE_THRESHOLD: f64 = 0.0;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    /// Predicts all zeros.
    struct ZeroDenoiser;

    impl Denoiser for ZeroDenoiser {
        fn predict_noise_on_tape(
            &self,
            tape: &mut Tape,
            x_t: ValueId,
            _t: &[usize],
        ) -> Result<ValueId> {
            let z = Tensor::zeros(tape.value(x_t).shape());
            Ok(tape.constant(z))
        }
    }

    /// Predicts a fixed tensor regardless of input.
    struct FixedDenoiser(Tensor);

    impl Denoiser for FixedDenoiser {
        fn predict_noise_on_tape(
            &self,
            tape: &mut Tape,
            _x_t: ValueId,
            _t: &[usize],
        ) -> Result<ValueId> {
            Ok(tape.constant(self.0.clone()))
        }
    }

    fn random_batch(seed: u64, b: usize, hw: usize, num_steps: usize) -> DiffusionBatch {
        use rand::RngExt;
        let mut rng = rng_from_seed(seed);
        let n = b * 2 * hw * hw;
        let mask_vals: Vec<f32> = (0..n)
            .map(|_| if rng.random::<f32>() < 0.1 { 1.0 } else { 0.0 })
            .collect();
        let raw = Tensor::from_vec(vec![b, 2, hw, hw], mask_vals).unwrap();
        let t: Vec<usize> = (0..b).map(|_| rng.random_range(0..num_steps)).collect();
        let mut eps = vec![0.0f32; n];
        fill_standard_normal(&mut rng, &mut eps);
        let eps = Tensor::from_vec(vec![b, 2, hw, hw], eps).unwrap();
        DiffusionBatch::new(raw, t, eps, num_steps).unwrap()
    }

    #[test]
    fn x0_is_rescaled_mask() {
        let batch = random_batch(1, 2, 4, 10);
        for (&m, &x) in batch.raw_mask.values().iter().zip(batch.x0.values()) {
            assert_eq!(x, 2.0 * m - 1.0);
        }
    }

    #[test]
    fn zero_noise_scales_signal() {
        let s = NoiseSchedule::linear(10, 0.05, 0.3).unwrap();
        let x0 = Tensor::from_vec(vec![1, 2, 2, 2], vec![0.5; 8]).unwrap();
        let eps = Tensor::zeros(&[1, 2, 2, 2]);
        let t = vec![3];
        let out = forward_diffuse(&x0, &t, &eps, &s).unwrap();
        let expect = (s.alpha_bar(3).sqrt() * 0.5) as f32;
        for &v in out.values() {
            assert!((v - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn no_noise_limit_is_identity() {
        // alpha_bar ~ 1 when betas are vanishingly small
        let s = NoiseSchedule::linear(5, 1e-12, 1e-12).unwrap();
        let x0 = Tensor::from_vec(vec![1, 2, 2, 2], (0..8).map(|v| v as f32 / 8.0).collect())
            .unwrap();
        let mut eps = vec![0.0f32; 8];
        fill_standard_normal(&mut rng_from_seed(3), &mut eps);
        let eps = Tensor::from_vec(vec![1, 2, 2, 2], eps).unwrap();
        let out = forward_diffuse(&x0, &[4], &eps, &s).unwrap();
        for (&o, &x) in out.values().iter().zip(x0.values()) {
            assert!((o - x).abs() < 1e-5, "{o} vs {x}");
        }
    }

    #[test]
    fn diffused_moments_match_schedule() {
        // x0 = 0 isolates the noise term: variance should be 1 - alpha_bar
        let s = NoiseSchedule::linear(20, 0.01, 0.2).unwrap();
        let mut rng = rng_from_seed(11);
        let x0 = Tensor::zeros(&[1, 2, 4, 4]);
        let t = 10usize;
        let draws = 20_000;
        let mut sum = 0.0f64;
        let mut sum_sq = 0.0f64;
        let mut eps = vec![0.0f32; 32];
        for _ in 0..draws {
            fill_standard_normal(&mut rng, &mut eps);
            let e = Tensor::from_vec(vec![1, 2, 4, 4], eps.clone()).unwrap();
            let xt = forward_diffuse(&x0, &[t], &e, &s).unwrap();
            for &v in xt.values() {
                sum += v as f64;
                sum_sq += (v as f64) * (v as f64);
            }
        }
        let n = (draws * 32) as f64;
        let mean = sum / n;
        let var = sum_sq / n - mean * mean;
        let expect = 1.0 - s.alpha_bar(t);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!(
            (var - expect).abs() / expect < 0.05,
            "var {var} vs {expect}"
        );
    }

    #[test]
    fn perfect_prediction_gives_zero_loss() {
        let s = NoiseSchedule::linear(10, 0.01, 0.2).unwrap();
        let batch = random_batch(2, 2, 4, 10);
        let denoiser = FixedDenoiser(batch.eps.clone());
        let l = loss_simple(&denoiser, &batch, &s).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn zero_prediction_loss_near_one() {
        let s = NoiseSchedule::linear(10, 0.01, 0.2).unwrap();
        let batch = random_batch(3, 8, 16, 10);
        let l = loss_simple(&ZeroDenoiser, &batch, &s).unwrap();
        // mean(eps^2) for standard-normal draws
        assert!((l - 1.0).abs() < 0.05, "loss {l}");
    }

    #[test]
    fn loss_is_nonnegative() {
        let s = NoiseSchedule::linear(10, 0.01, 0.2).unwrap();
        for seed in 0..5 {
            let batch = random_batch(seed, 2, 4, 10);
            let mut noise = vec![0.0f32; 64];
            fill_standard_normal(&mut rng_from_seed(seed + 100), &mut noise);
            let denoiser = FixedDenoiser(Tensor::from_vec(vec![2, 2, 4, 4], noise).unwrap());
            assert!(loss_simple(&denoiser, &batch, &s).unwrap() >= 0.0);
        }
    }

    #[test]
    fn vessel_loss_at_c_zero_equals_simple() {
        let s = NoiseSchedule::linear(10, 0.01, 0.2).unwrap();
        for seed in 0..10 {
            let batch = random_batch(seed, 2, 8, 10);
            let mut noise = vec![0.0f32; 2 * 2 * 64];
            fill_standard_normal(&mut rng_from_seed(seed + 50), &mut noise);
            let denoiser = FixedDenoiser(Tensor::from_vec(vec![2, 2, 8, 8], noise).unwrap());
            let a = loss_simple(&denoiser, &batch, &s).unwrap();
            let b = loss_vessel(&denoiser, &batch, &s, 0.0).unwrap();
            let rel = (a - b).abs() / a.abs().max(1e-30);
            assert!(rel < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn single_foreground_pixel_doubles_at_ln2() {
        // with c = ln 2 the lone vessel pixel's squared error enters twice
        let num_steps = 10;
        let s = NoiseSchedule::linear(num_steps, 0.01, 0.2).unwrap();
        let mut raw = vec![0.0f32; 2 * 4 * 4];
        raw[5] = 1.0;
        let raw = Tensor::from_vec(vec![1, 2, 4, 4], raw).unwrap();
        let mut eps = vec![0.0f32; 32];
        fill_standard_normal(&mut rng_from_seed(9), &mut eps);
        let eps = Tensor::from_vec(vec![1, 2, 4, 4], eps).unwrap();
        let batch = DiffusionBatch::new(raw, vec![4], eps, num_steps).unwrap();

        let denoiser = ZeroDenoiser;
        let simple = loss_simple(&denoiser, &batch, &s).unwrap();
        let vessel = loss_vessel(&denoiser, &batch, &s, std::f64::consts::LN_2).unwrap();
        // per-element squared error of the foreground pixel
        let xt = forward_diffuse(&batch.x0, &batch.t, &batch.eps, &s).unwrap();
        let _ = xt;
        let e_fg = (batch.eps.values()[5] as f64).powi(2);
        let expect = simple + e_fg / 32.0;
        assert!(
            (vessel - expect).abs() < 1e-7,
            "vessel {vessel} expect {expect}"
        );
    }

    #[test]
    fn all_background_mask_ignores_c() {
        let num_steps = 10;
        let s = NoiseSchedule::linear(num_steps, 0.01, 0.2).unwrap();
        let raw = Tensor::zeros(&[1, 2, 4, 4]);
        let mut eps = vec![0.0f32; 32];
        fill_standard_normal(&mut rng_from_seed(21), &mut eps);
        let eps = Tensor::from_vec(vec![1, 2, 4, 4], eps).unwrap();
        let batch = DiffusionBatch::new(raw, vec![2], eps, num_steps).unwrap();
        let simple = loss_simple(&ZeroDenoiser, &batch, &s).unwrap();
        for c in [0.5, 2.0, 5.0] {
            let v = loss_vessel(&ZeroDenoiser, &batch, &s, c).unwrap();
            assert!((v - simple).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_c_rejected() {
        let s = NoiseSchedule::linear(10, 0.01, 0.2).unwrap();
        let batch = random_batch(2, 1, 4, 10);
        assert!(loss_vessel(&ZeroDenoiser, &batch, &s, -0.1).is_err());
    }

    #[test]
    fn sampler_is_deterministic() {
        let s = NoiseSchedule::linear(5, 0.05, 0.3).unwrap();
        let a = ddpm_sample(&ZeroDenoiser, &s, &mut rng_from_seed(7), 2, 4, 4).unwrap();
        let b = ddpm_sample(&ZeroDenoiser, &s, &mut rng_from_seed(7), 2, 4, 4).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn single_step_zero_denoiser_unrolls_by_hand() {
        // T = 1 with a zero prediction: output = clamp(x_1 / sqrt(alpha_0))
        let s = NoiseSchedule::linear(1, 0.36, 0.36).unwrap();
        let seed = 13;
        let out = ddpm_sample(&ZeroDenoiser, &s, &mut rng_from_seed(seed), 1, 2, 2).unwrap();
        let mut x1 = vec![0.0f32; 8];
        fill_standard_normal(&mut rng_from_seed(seed), &mut x1);
        let inv = (1.0 / s.alpha(0).sqrt()) as f32;
        for (&o, &x) in out.values().iter().zip(&x1) {
            let expect = (inv * x).clamp(-1.0, 1.0);
            assert_eq!(o, expect);
        }
    }

    #[test]
    fn sampler_output_in_range() {
        let s = NoiseSchedule::linear(8, 0.05, 0.4).unwrap();
        let out = ddpm_sample(&ZeroDenoiser, &s, &mut rng_from_seed(3), 2, 4, 4).unwrap();
        for &v in out.values() {
            assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn binarize_extremes_and_tie() {
        let all_lo = Tensor::full(&[1, 2, 2, 2], -1.0);
        let m = binarize(&all_lo, 0.0).unwrap();
        assert_eq!(m[0].combined_foreground_fraction(), 0.0);

        let all_hi = Tensor::full(&[1, 2, 2, 2], 1.0);
        let m = binarize(&all_hi, 0.0).unwrap();
        assert_eq!(m[0].combined_foreground_fraction(), 1.0);

        // value exactly at the threshold stays background
        let at = Tensor::full(&[1, 2, 2, 2], 0.25);
        let m = binarize(&at, 0.25).unwrap();
        assert_eq!(m[0].combined_foreground_fraction(), 0.0);
    }

    #[test]
    fn binarize_threshold_validated() {
        let x = Tensor::zeros(&[1, 2, 2, 2]);
        assert!(binarize(&x, 1.0).is_err());
        assert!(binarize(&x, -1.0).is_err());
    }
}
