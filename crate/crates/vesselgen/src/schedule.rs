//! Noise schedules: the per-timestep variances of the forward process and
//! the quantities derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Precomputed schedule arrays over `T` timesteps.
///
/// Invariants, maintained by construction and exact in stored (f64)
/// precision: `alphas[t] == 1 - betas[t]`, `alpha_bars[t]` is the running
/// product of `alphas[0..=t]` and is strictly decreasing, and all three
/// arrays lie in (0, 1).
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// The parameters a schedule is rebuilt from; stored in configs and
/// checkpoints instead of the arrays themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub num_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        // Conventional linear range; the step count is the desk-scale
        // default and is raised to 1000 for full-scale runs.
        ScheduleConfig { num_steps: 100, beta_start: 1e-4, beta_end: 0.02 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.num_steps, self.beta_start, self.beta_end)
    }
}

impl NoiseSchedule {
    /// Linear interpolation of beta from `beta_start` to `beta_end`,
    /// inclusive of both endpoints. For `num_steps == 1` the single beta is
    /// `beta_start`.
    pub fn linear(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if num_steps < 1 {
            return Err(Error::InvalidParameter(
                "schedule needs at least 1 timestep, got 0".into(),
            ));
        }
        if !(beta_start > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta_start must be positive, got {beta_start}"
            )));
        }
        if !(beta_end < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "beta_end must be below 1, got {beta_end}"
            )));
        }
        if beta_start > beta_end {
            return Err(Error::InvalidParameter(format!(
                "beta_start {beta_start} exceeds beta_end {beta_end}"
            )));
        }
        let betas: Vec<f64> = if num_steps == 1 {
            vec![beta_start]
        } else {
            (0..num_steps)
                .map(|i| {
                    beta_start + (beta_end - beta_start) * i as f64 / (num_steps - 1) as f64
                })
                .collect()
        };
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(num_steps);
        let mut running = 1.0f64;
        for &a in &alphas {
            running *= a;
            alpha_bars.push(running);
        }
        Ok(NoiseSchedule { betas, alphas, alpha_bars })
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    /// Cumulative signal retention through timestep `t`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Reverse-step variance: ((1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)) * beta_t,
    /// with alpha_bar before the first step defined as 1 (so the variance at
    /// t = 0 is 0).
    pub fn posterior_variance(&self, t: usize) -> f64 {
        let prev = if t == 0 { 1.0 } else { self.alpha_bars[t - 1] };
        (1.0 - prev) / (1.0 - self.alpha_bars[t]) * self.betas[t]
    }
}
