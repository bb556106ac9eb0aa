//! Bias-corrected adaptive-moment optimizer and gradient clipping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserParams;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub cfg: AdamConfig,
    pub step: u64,
    pub first_moment: BTreeMap<String, Tensor>,
    pub second_moment: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    /// Fresh state with zero moments mirroring the parameter shapes.
    pub fn new(cfg: AdamConfig, params: &DenoiserParams) -> Self {
        let first = params
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
            .collect();
        let second = params
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
            .collect();
        OptimizerState { cfg, step: 0, first_moment: first, second_moment: second }
    }

    /// One update: decay the moments, apply the bias-corrected step, and
    /// increment the step count. Rejects NaN gradients, naming the parameter.
    pub fn step(
        &mut self,
        params: &DenoiserParams,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<DenoiserParams> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient for parameter {name} at step {}",
                    self.step + 1
                )));
            }
        }
        let t = self.step + 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bias1 = 1.0 - b1.powi(t as i32);
        let bias2 = 1.0 - b2.powi(t as i32);
        let mut updated = DenoiserParams::default();
        for (name, p) in params.iter() {
            let g = grads.get(name).ok_or_else(|| {
                Error::InvalidParameter(format!("missing gradient for parameter {name}"))
            })?;
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient for {name}: shape {:?} vs parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let m = self.first_moment.get_mut(name).expect("moment mirrors params");
            let v = self.second_moment.get_mut(name).expect("moment mirrors params");
            let mut new_p = Vec::with_capacity(p.len());
            {
                let mv = m.values_mut();
                let vv = v.values_mut();
                for i in 0..p.len() {
                    let gi = g.values()[i] as f64;
                    let mi = b1 * mv[i] as f64 + (1.0 - b1) * gi;
                    let vi = b2 * vv[i] as f64 + (1.0 - b2) * gi * gi;
                    mv[i] = mi as f32;
                    vv[i] = vi as f32;
                    let m_hat = mi / bias1;
                    let v_hat = vi / bias2;
                    let step = self.cfg.learning_rate * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
                    new_p.push((p.values()[i] as f64 - step) as f32);
                }
            }
            updated.insert(name.clone(), Tensor::from_vec(p.shape().to_vec(), new_p)?);
        }
        self.step = t;
        Ok(updated)
    }
}

/// Scale gradients down to a global L2 norm of `max_norm` when they exceed
/// it; returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let sq_sum: f64 = grads
        .values()
        .map(|g| g.values().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>())
        .sum();
    let norm = sq_sum.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = (max_norm / norm) as f32;
        for g in grads.values_mut() {
            for v in g.values_mut() {
                *v *= scale;
            }
        }
    }
    norm
}
