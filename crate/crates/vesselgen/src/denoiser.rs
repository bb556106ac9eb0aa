//! The trainable noise-prediction network: a small U-Net-style
//! encoder-decoder conditioned on the timestep.
//!
//! Structure, for `depth` down/up levels on a `base_channels = C` backbone:
//!
//! ```text
//! stem   conv3x3 (2 -> C), +t, norm, silu                 (skip 0)
//! enc l  conv3x3 stride 2 (C*2^(l-1) -> C*2^l), +t, norm, silu
//!        conv3x3 (same), norm, silu                       (skip l)
//! mid    conv3x3, +t, norm, silu
//! dec l  upsample 2x, conv3x3 (C*2^l -> C*2^(l-1)), +t, norm, silu
//!        add skip (l-1), conv3x3, norm, silu
//! head   conv3x3 (C -> 2)
//! ```
//!
//! `+t` injects the timestep: a sinusoidal embedding runs through a two
//! layer dense head, then a per-level dense projection produces one bias per
//! channel, added after the level's first convolution. Skip connections are
//! additive, which keeps the op set closed under convolution and addition.

use std::cell::RefCell;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::rng::{fill_standard_normal, rng_from_seed};
use crate::tensor::tape::{Tape, ValueId};
use crate::tensor::Tensor;

/// Network shape. Input and output are always two channels (artery, vein).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub base_channels: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig { base_channels: 32, depth: 2, time_embed_dim: 64 }
    }
}

pub const MASK_CHANNELS: usize = 2;

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::InvalidParameter("base_channels must be >= 1".into()));
        }
        if self.depth == 0 {
            return Err(Error::InvalidParameter("depth must be >= 1".into()));
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "time_embed_dim must be an even number >= 2, got {}",
                self.time_embed_dim
            )));
        }
        Ok(())
    }

    fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Parameter shapes in construction order.
    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let e = self.time_embed_dim;
        let mut out = vec![
            ("time.dense1.weight".into(), vec![e, e]),
            ("time.dense1.bias".into(), vec![e]),
            ("time.dense2.weight".into(), vec![e, e]),
            ("time.dense2.bias".into(), vec![e]),
        ];
        let c0 = self.level_channels(0);
        out.extend(conv_block_shapes("stem", MASK_CHANNELS, c0, e));
        for l in 1..=self.depth {
            let (ci, co) = (self.level_channels(l - 1), self.level_channels(l));
            out.extend(conv_block_shapes(&format!("enc{l}.conv1"), ci, co, e));
            out.extend(plain_conv_shapes(&format!("enc{l}.conv2"), co, co));
        }
        let cd = self.level_channels(self.depth);
        out.extend(conv_block_shapes("mid", cd, cd, e));
        for l in (1..=self.depth).rev() {
            let (ci, co) = (self.level_channels(l), self.level_channels(l - 1));
            out.extend(conv_block_shapes(&format!("dec{l}.conv1"), ci, co, e));
            out.extend(plain_conv_shapes(&format!("dec{l}.conv2"), co, co));
        }
        out.push(("head.weight".into(), vec![MASK_CHANNELS, c0, 3, 3]));
        out.push(("head.bias".into(), vec![MASK_CHANNELS]));
        out
    }
}

fn conv_block_shapes(prefix: &str, ci: usize, co: usize, embed: usize) -> Vec<(String, Vec<usize>)> {
    // conv1 naming is already embedded in the prefix for enc/dec blocks
    let stem_like = !prefix.contains('.');
    let conv = if stem_like { format!("{prefix}.conv") } else { prefix.to_string() };
    let site = if stem_like { prefix.to_string() } else { prefix.rsplit_once('.').unwrap().0.to_string() };
    let norm = if stem_like { format!("{prefix}.norm") } else { format!("{site}.norm1") };
    vec![
        (format!("{conv}.weight"), vec![co, ci, 3, 3]),
        (format!("{conv}.bias"), vec![co]),
        (format!("{site}.tproj.weight"), vec![co, embed]),
        (format!("{site}.tproj.bias"), vec![co]),
        (format!("{norm}.gain"), vec![co]),
        (format!("{norm}.bias"), vec![co]),
    ]
}

fn plain_conv_shapes(conv: &str, ci: usize, co: usize) -> Vec<(String, Vec<usize>)> {
    let site = conv.rsplit_once('.').unwrap().0;
    vec![
        (format!("{conv}.weight"), vec![co, ci, 3, 3]),
        (format!("{conv}.bias"), vec![co]),
        (format!("{site}.norm2.gain"), vec![co]),
        (format!("{site}.norm2.bias"), vec![co]),
    ]
}

/// Group count targeting ~4 channels per group, capped at 8 groups. Groups
/// always span multiple channels so per-channel biases upstream of the norm
/// keep a live gradient path.
fn norm_groups(channels: usize) -> usize {
    let mut g = (channels / 4).clamp(1, 8);
    while channels % g != 0 {
        g -= 1;
    }
    g
}

/// Named parameter tensors. Iteration order is the sorted name order, which
/// fixes the layout used by the optimizer, checkpoints, and gradient checks.
#[derive(Debug, Clone, Default)]
pub struct DenoiserParams {
    tensors: BTreeMap<String, Tensor>,
}

impl DenoiserParams {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn insert(&mut self, name: String, tensor: Tensor) {
        self.tensors.insert(name, tensor);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.all_finite())
    }

    /// Parameter tensors in name order.
    pub fn to_ordered(&self) -> Vec<Tensor> {
        self.tensors.values().cloned().collect()
    }

    /// Rebuild from tensors in name order.
    pub fn from_ordered(&self, tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != self.tensors.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} tensors, got {}",
                self.tensors.len(),
                tensors.len()
            )));
        }
        let mut out = BTreeMap::new();
        for ((name, old), t) in self.tensors.iter().zip(tensors) {
            if t.shape() != old.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {name}: shape {:?} vs expected {:?}",
                    t.shape(),
                    old.shape()
                )));
            }
            out.insert(name.clone(), t);
        }
        Ok(DenoiserParams { tensors: out })
    }
}

/// Kaiming-style initialization: conv and dense weights drawn from
/// N(0, 2/fan_in), biases zero, normalization gains one.
pub fn init_params(cfg: &DenoiserConfig, seed: u64) -> Result<DenoiserParams> {
    cfg.validate()?;
    let mut rng = rng_from_seed(seed);
    let mut params = DenoiserParams::default();
    for (name, shape) in cfg.shapes() {
        let n: usize = shape.iter().product();
        let tensor = if name.ends_with(".weight") {
            let fan_in: usize = shape[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt() as f32;
            let mut values = vec![0.0f32; n];
            fill_standard_normal(&mut rng, &mut values);
            for v in &mut values {
                *v *= std;
            }
            Tensor::from_vec(shape, values)?
        } else if name.ends_with(".gain") {
            Tensor::full(&shape, 1.0)
        } else {
            Tensor::zeros(&shape)
        };
        params.insert(name, tensor);
    }
    Ok(params)
}

/// Sinusoidal embedding of integer timesteps: `[sin(t * f_i), cos(t * f_i)]`
/// with geometrically spaced frequencies.
pub fn sinusoidal_embedding(t: &[usize], dim: usize) -> Tensor {
    let half = dim / 2;
    let mut values = Vec::with_capacity(t.len() * dim);
    for &tv in t {
        let tv = tv as f64;
        for i in 0..half {
            let freq = (-(10_000.0f64.ln()) * i as f64 / half as f64).exp();
            values.push((tv * freq).sin() as f32);
        }
        for i in 0..half {
            let freq = (-(10_000.0f64.ln()) * i as f64 / half as f64).exp();
            values.push((tv * freq).cos() as f32);
        }
    }
    Tensor::from_vec(vec![t.len(), dim], values).expect("static shape")
}

/// The U-Net denoiser: configuration plus its current parameters.
#[derive(Debug, Clone)]
pub struct UNetDenoiser {
    cfg: DenoiserConfig,
    params: DenoiserParams,
}

impl UNetDenoiser {
    pub fn init(cfg: DenoiserConfig, seed: u64) -> Result<Self> {
        let params = init_params(&cfg, seed)?;
        Ok(UNetDenoiser { cfg, params })
    }

    /// Bind existing parameters, validating names and shapes against the
    /// configuration.
    pub fn from_params(cfg: DenoiserConfig, params: DenoiserParams) -> Result<Self> {
        cfg.validate()?;
        let expected = cfg.shapes();
        if expected.len() != params.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            match params.get(name) {
                None => {
                    return Err(Error::InvalidParameter(format!("missing parameter {name}")))
                }
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::ShapeMismatch(format!(
                        "parameter {name}: shape {:?} vs expected {shape:?}",
                        t.shape()
                    )));
                }
                _ => {}
            }
        }
        Ok(UNetDenoiser { cfg, params })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn params(&self) -> &DenoiserParams {
        &self.params
    }

    pub fn set_params(&mut self, params: DenoiserParams) {
        self.params = params;
    }

    fn register(&self, tape: &mut Tape, trainable: bool) -> BTreeMap<String, ValueId> {
        self.params
            .iter()
            .map(|(name, tensor)| {
                let id = if trainable {
                    tape.parameter(tensor.clone())
                } else {
                    tape.constant(tensor.clone())
                };
                (name.clone(), id)
            })
            .collect()
    }

    fn forward(
        &self,
        tape: &mut Tape,
        ids: &BTreeMap<String, ValueId>,
        x_t: ValueId,
        t: &[usize],
    ) -> Result<ValueId> {
        let shape = tape.value(x_t).shape().to_vec();
        if shape.len() != 4 || shape[1] != MASK_CHANNELS {
            return Err(Error::ShapeMismatch(format!(
                "denoiser input must be B x {MASK_CHANNELS} x H x W, got {shape:?}"
            )));
        }
        if shape[0] != t.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} timesteps for batch of {}",
                t.len(),
                shape[0]
            )));
        }
        let div = 1usize << self.cfg.depth;
        if shape[2] % div != 0 || shape[3] % div != 0 {
            return Err(Error::ShapeMismatch(format!(
                "spatial dims {}x{} not divisible by 2^depth = {div}",
                shape[2], shape[3]
            )));
        }
        let id = |name: &str| -> ValueId { ids[name] };

        // timestep embedding head
        let sin = tape.constant(sinusoidal_embedding(t, self.cfg.time_embed_dim));
        let h = tape.dense(sin, id("time.dense1.weight"), id("time.dense1.bias"))?;
        let h = tape.silu(h);
        let temb = tape.dense(h, id("time.dense2.weight"), id("time.dense2.bias"))?;

        let conditioned_block = |tape: &mut Tape,
                                     x: ValueId,
                                     conv: &str,
                                     site: &str,
                                     norm: &str,
                                     stride: usize|
         -> Result<ValueId> {
            let x = tape.conv2d(
                x,
                id(&format!("{conv}.weight")),
                Some(id(&format!("{conv}.bias"))),
                stride,
                1,
            )?;
            let tb = tape.dense(
                temb,
                id(&format!("{site}.tproj.weight")),
                id(&format!("{site}.tproj.bias")),
            )?;
            let x = tape.add_channel_bias(x, tb)?;
            let ch = tape.value(x).shape()[1];
            let x = tape.group_norm(
                x,
                id(&format!("{norm}.gain")),
                id(&format!("{norm}.bias")),
                norm_groups(ch),
            )?;
            Ok(tape.silu(x))
        };

        let plain_block =
            |tape: &mut Tape, x: ValueId, conv: &str, norm: &str| -> Result<ValueId> {
                let x = tape.conv2d(
                    x,
                    id(&format!("{conv}.weight")),
                    Some(id(&format!("{conv}.bias"))),
                    1,
                    1,
                )?;
                let ch = tape.value(x).shape()[1];
                let x = tape.group_norm(
                    x,
                    id(&format!("{norm}.gain")),
                    id(&format!("{norm}.bias")),
                    norm_groups(ch),
                )?;
                Ok(tape.silu(x))
            };

        let mut skips = Vec::with_capacity(self.cfg.depth + 1);
        let mut x = conditioned_block(tape, x_t, "stem.conv", "stem", "stem.norm", 1)?;
        skips.push(x);
        for l in 1..=self.cfg.depth {
            x = conditioned_block(
                tape,
                x,
                &format!("enc{l}.conv1"),
                &format!("enc{l}"),
                &format!("enc{l}.norm1"),
                2,
            )?;
            x = plain_block(tape, x, &format!("enc{l}.conv2"), &format!("enc{l}.norm2"))?;
            skips.push(x);
        }
        x = conditioned_block(tape, x, "mid.conv", "mid", "mid.norm", 1)?;
        for l in (1..=self.cfg.depth).rev() {
            x = tape.upsample_nearest_2x(x)?;
            x = conditioned_block(
                tape,
                x,
                &format!("dec{l}.conv1"),
                &format!("dec{l}"),
                &format!("dec{l}.norm1"),
                1,
            )?;
            x = tape.add(x, skips[l - 1])?;
            x = plain_block(tape, x, &format!("dec{l}.conv2"), &format!("dec{l}.norm2"))?;
        }
        tape.conv2d(x, id("head.weight"), Some(id("head.bias")), 1, 1)
    }
}

impl Denoiser for UNetDenoiser {
    fn predict_noise_on_tape(&self, tape: &mut Tape, x_t: ValueId, t: &[usize]) -> Result<ValueId> {
        let ids = self.register(tape, false);
        self.forward(tape, &ids, x_t, t)
    }
}

/// Adapter that records the model's parameters as trainable leaves and
/// remembers their tape ids so gradients can be collected by name.
pub struct TrainableDenoiser<'a> {
    model: &'a UNetDenoiser,
    registered: RefCell<BTreeMap<String, ValueId>>,
}

impl<'a> TrainableDenoiser<'a> {
    pub fn new(model: &'a UNetDenoiser) -> Self {
        TrainableDenoiser { model, registered: RefCell::new(BTreeMap::new()) }
    }

    /// Tape ids of the parameter leaves recorded by the last forward pass.
    pub fn parameter_ids(&self) -> BTreeMap<String, ValueId> {
        self.registered.borrow().clone()
    }

    /// Collect named gradients after a backward pass.
    pub fn collect_gradients(
        &self,
        grads: &crate::tensor::tape::Gradients,
    ) -> Result<BTreeMap<String, Tensor>> {
        self.registered
            .borrow()
            .iter()
            .map(|(name, &id)| {
                let g = grads.get(id).cloned().unwrap_or_else(|| {
                    Tensor::zeros(self.model.params.get(name).expect("registered name").shape())
                });
                Ok((name.clone(), g))
            })
            .collect()
    }
}

impl Denoiser for TrainableDenoiser<'_> {
    fn predict_noise_on_tape(&self, tape: &mut Tape, x_t: ValueId, t: &[usize]) -> Result<ValueId> {
        let ids = self.model.register(tape, true);
        let out = self.model.forward(tape, &ids, x_t, t)?;
        *self.registered.borrow_mut() = ids;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{loss_on_tape, DiffusionBatch, LossConfig};
    use crate::schedule::NoiseSchedule;
    use crate::tensor::gradcheck::{finite_diff_grad, gradient_deviation};

    fn small_cfg() -> DenoiserConfig {
        DenoiserConfig { base_channels: 4, depth: 1, time_embed_dim: 8 }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&small_cfg(), 42).unwrap();
        let b = init_params(&small_cfg(), 42).unwrap();
        for ((na, ta), (nb, tb)) in a.iter().zip(b.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.values(), tb.values());
        }
    }

    #[test]
    fn biases_start_at_zero_and_gains_at_one() {
        let p = init_params(&small_cfg(), 7).unwrap();
        for (name, t) in p.iter() {
            if name.ends_with(".bias") {
                assert!(t.values().iter().all(|&v| v == 0.0), "{name}");
            }
            if name.ends_with(".gain") {
                assert!(t.values().iter().all(|&v| v == 1.0), "{name}");
            }
        }
    }

    #[test]
    fn weight_variance_tracks_fan_in() {
        let cfg = DenoiserConfig { base_channels: 32, depth: 2, time_embed_dim: 64 };
        let p = init_params(&cfg, 3).unwrap();
        // a large conv layer: enc2.conv2 is 128x64x3x3 = 73k values
        let t = p.get("enc2.conv2.weight").unwrap();
        assert!(t.len() > 50_000);
        let fan_in: usize = t.shape()[1..].iter().product();
        let expect = 2.0 / fan_in as f64;
        let mean: f64 = t.values().iter().map(|&v| v as f64).sum::<f64>() / t.len() as f64;
        let var: f64 =
            t.values().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / t.len() as f64;
        assert!(
            (var - expect).abs() / expect < 0.2,
            "var {var} vs 2/fan_in {expect}"
        );
    }

    #[test]
    fn output_shape_matches_input() {
        let model = UNetDenoiser::init(small_cfg(), 1).unwrap();
        let x = Tensor::zeros(&[3, 2, 8, 8]);
        let y = model.predict_noise(&x, &[0, 1, 2]).unwrap();
        assert_eq!(y.shape(), &[3, 2, 8, 8]);
        assert!(y.all_finite());
    }

    #[test]
    fn timestep_changes_output() {
        let model = UNetDenoiser::init(small_cfg(), 5).unwrap();
        let mut vals = vec![0.0f32; 2 * 8 * 8];
        fill_standard_normal(&mut rng_from_seed(2), &mut vals);
        let x = Tensor::from_vec(vec![1, 2, 8, 8], vals).unwrap();
        let y0 = model.predict_noise(&x, &[0]).unwrap();
        let y5 = model.predict_noise(&x, &[5]).unwrap();
        assert_ne!(y0.values(), y5.values());
    }

    #[test]
    fn indivisible_resolution_rejected() {
        let model = UNetDenoiser::init(small_cfg(), 1).unwrap();
        let x = Tensor::zeros(&[1, 2, 7, 7]);
        assert!(model.predict_noise(&x, &[0]).is_err());
    }

    #[test]
    fn finite_across_timestep_range() {
        let cfg = small_cfg();
        let model = UNetDenoiser::init(cfg, 9).unwrap();
        let mut vals = vec![0.0f32; 2 * 8 * 8];
        fill_standard_normal(&mut rng_from_seed(4), &mut vals);
        // amplitudes near the noisiest end of the forward process
        for v in &mut vals {
            *v *= 3.0;
        }
        let x = Tensor::from_vec(vec![1, 2, 8, 8], vals).unwrap();
        for t in [0usize, 17, 316, 999] {
            let y = model.predict_noise(&x, &[t]).unwrap();
            assert!(y.all_finite(), "t={t}");
        }
    }

    #[test]
    fn end_to_end_gradients_match_oracle() {
        // small net, 8x8 inputs, both losses
        let cfg = small_cfg();
        let model = UNetDenoiser::init(cfg, 11).unwrap();
        let schedule = NoiseSchedule::linear(10, 0.01, 0.2).unwrap();

        let mut rng = rng_from_seed(31);
        let mut mask_vals = vec![0.0f32; 2 * 8 * 8];
        for v in &mut mask_vals {
            use rand::RngExt;
            *v = if rng.random::<f32>() < 0.15 { 1.0 } else { 0.0 };
        }
        let raw = Tensor::from_vec(vec![1, 2, 8, 8], mask_vals).unwrap();
        let mut eps = vec![0.0f32; 2 * 8 * 8];
        fill_standard_normal(&mut rng, &mut eps);
        let eps = Tensor::from_vec(vec![1, 2, 8, 8], eps).unwrap();
        let batch = DiffusionBatch::new(raw, vec![4], eps, 10).unwrap();

        for loss_cfg in [LossConfig::simple(), LossConfig::vessel(2.0)] {
            let trainable = TrainableDenoiser::new(&model);
            let mut tape = Tape::new();
            let graph = loss_on_tape(&trainable, &mut tape, &batch, &schedule, &loss_cfg).unwrap();
            let grads = tape.backward(graph.loss).unwrap();
            let named = trainable.collect_gradients(&grads).unwrap();

            let ordered = model.params().to_ordered();
            let fd = finite_diff_grad(&ordered, 1e-2, |ps| {
                let params = model.params().from_ordered(ps.to_vec())?;
                let m = UNetDenoiser::from_params(cfg, params)?;
                let mut tape = Tape::new();
                let graph = loss_on_tape(&m, &mut tape, &batch, &schedule, &loss_cfg)?;
                let pe = tape.value(graph.per_element);
                Ok(pe.sum_f64() / pe.len() as f64)
            })
            .unwrap();

            for ((name, analytic), fd_grad) in named.iter().zip(&fd) {
                let dev = gradient_deviation(analytic, fd_grad);
                assert!(dev < 1e-3, "{name}: deviation {dev}");
            }
        }
    }
}
