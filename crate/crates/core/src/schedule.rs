// SPDX-License-Identifier: MIT OR Apache-2.0

//! Noise schedules.
//!
//! Two families are supported. `VpDiscrete` subsamples a 1000-step linear-beta
//! variance-preserving training schedule; `KarrasSigma` is the rho-warped sigma
//! ladder `sigma_i = (smax^(1/rho) + i/(T-1) * (smin^(1/rho) - smax^(1/rho)))^rho`
//! terminated by `sigma_T = 0`.
//!
//! Samplers see both through [`NoiseLevel`]s: level `i` is where step `i`
//! starts and level `T` is the clean endpoint (`alpha = 1`, `sigma = 0`).

use serde::{Deserialize, Serialize};

use crate::error::{FslError, Result};
use crate::types::{ScheduleKind, SliderConfig};

pub const VP_TRAIN_STEPS: usize = 1000;
pub const VP_BETA_START: f64 = 1e-4;
pub const VP_BETA_END: f64 = 0.02;

/// Where on the noise axis a prediction is requested.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value")]
pub enum StepPosition {
    /// Index into the discrete training schedule.
    #[serde(rename = "t")]
    Timestep(f64),
    /// Noise level of a variance-exploding (sigma) parameterization.
    #[serde(rename = "sigma")]
    Sigma(f64),
}

/// Cumulative products of the linear-beta training schedule.
#[derive(Debug, Clone)]
pub struct VpTrainSchedule {
    alphas_cumprod: Vec<f64>,
}

impl Default for VpTrainSchedule {
    fn default() -> Self {
        Self::linear(VP_TRAIN_STEPS, VP_BETA_START, VP_BETA_END)
    }
}

impl VpTrainSchedule {
    pub fn linear(train_steps: usize, beta_start: f64, beta_end: f64) -> Self {
        let mut acc = 1.0;
        let alphas_cumprod = (0..train_steps)
            .map(|i| {
                let frac = if train_steps > 1 {
                    i as f64 / (train_steps - 1) as f64
                } else {
                    0.0
                };
                let beta = beta_start + frac * (beta_end - beta_start);
                acc *= 1.0 - beta;
                acc
            })
            .collect();
        Self { alphas_cumprod }
    }

    pub fn train_steps(&self) -> usize {
        self.alphas_cumprod.len()
    }

    pub fn alpha_bar(&self, index: usize) -> f64 {
        self.alphas_cumprod[index]
    }

    /// `(alpha_t, sigma_t)` at an integral training timestep.
    pub fn alpha_sigma(&self, timestep: f64) -> Result<(f64, f64)> {
        if timestep.fract() != 0.0 || timestep < 0.0 || timestep >= self.train_steps() as f64 {
            return Err(FslError::BadConfig(format!(
                "timestep {timestep} is not an index of the {}-step training schedule",
                self.train_steps()
            )));
        }
        let ab = self.alpha_bar(timestep as usize);
        Ok((ab.sqrt(), (1.0 - ab).sqrt()))
    }
}

/// Per-step coefficients for one sampling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSchedule {
    /// Indexed by diffusion time `t`: `alpha` decreases and `sigma` increases
    /// with `t`. Sampling walks `t = T-1 .. 0`.
    VpDiscrete {
        timesteps: Vec<f64>,
        alphas: Vec<f64>,
        sigmas: Vec<f64>,
    },
    /// `T + 1` decreasing noise levels ending at 0, walked in order.
    KarrasSigma { sigmas: Vec<f64> },
}

/// The state of the noise axis at a step boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    pub alpha: f64,
    pub sigma: f64,
    pub position: StepPosition,
}

impl NoiseLevel {
    /// Noise level of the equivalent sigma parameterization, `sigma / alpha`.
    pub fn scaled_sigma(&self) -> f64 {
        self.sigma / self.alpha
    }
}

/// The rho-warped sigma ladder (plus the trailing zero).
pub fn karras_sigmas(steps: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Vec<f64> {
    let inv_rho = 1.0 / rho;
    let lo = sigma_min.powf(inv_rho);
    let hi = sigma_max.powf(inv_rho);
    let mut sigmas: Vec<f64> = (0..steps)
        .map(|i| {
            let frac = i as f64 / (steps - 1) as f64;
            (hi + frac * (lo - hi)).powf(rho)
        })
        .collect();
    // pin the endpoints exactly
    sigmas[0] = sigma_max;
    sigmas[steps - 1] = sigma_min;
    sigmas.push(0.0);
    sigmas
}

pub fn build_schedule(config: &SliderConfig) -> Result<NoiseSchedule> {
    config.validate()?;
    let steps = config.total_steps;
    if steps < 2 {
        return Err(FslError::BadConfig(format!(
            "need at least 2 steps, got {steps}"
        )));
    }
    match config.schedule_kind {
        ScheduleKind::KarrasSigma => Ok(NoiseSchedule::KarrasSigma {
            sigmas: karras_sigmas(steps, config.sigma_min, config.sigma_max, config.rho),
        }),
        ScheduleKind::VpDiscrete => {
            let train = VpTrainSchedule::default();
            let n = train.train_steps();
            if steps > n {
                return Err(FslError::BadConfig(format!(
                    "at most {n} discrete steps are available, got {steps}"
                )));
            }
            let timesteps: Vec<f64> = (0..steps)
                .map(|t| ((t * (n - 1)) as f64 / (steps - 1) as f64).round())
                .collect();
            let mut alphas = Vec::with_capacity(steps);
            let mut sigmas = Vec::with_capacity(steps);
            for &ts in &timesteps {
                let (a, s) = train.alpha_sigma(ts)?;
                alphas.push(a);
                sigmas.push(s);
            }
            Ok(NoiseSchedule::VpDiscrete {
                timesteps,
                alphas,
                sigmas,
            })
        }
    }
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        match self {
            NoiseSchedule::VpDiscrete { timesteps, .. } => timesteps.len(),
            NoiseSchedule::KarrasSigma { sigmas } => sigmas.len() - 1,
        }
    }

    /// Level at the start of step `i`; `i == steps()` is the clean endpoint.
    pub fn level(&self, i: usize) -> NoiseLevel {
        let n = self.steps();
        assert!(i <= n, "level {i} out of range for {n} steps");
        match self {
            NoiseSchedule::KarrasSigma { sigmas } => NoiseLevel {
                alpha: 1.0,
                sigma: sigmas[i],
                position: StepPosition::Sigma(sigmas[i]),
            },
            NoiseSchedule::VpDiscrete {
                timesteps,
                alphas,
                sigmas,
            } => {
                if i == n {
                    NoiseLevel {
                        alpha: 1.0,
                        sigma: 0.0,
                        position: StepPosition::Timestep(-1.0),
                    }
                } else {
                    let t = n - 1 - i;
                    NoiseLevel {
                        alpha: alphas[t],
                        sigma: sigmas[t],
                        position: StepPosition::Timestep(timesteps[t]),
                    }
                }
            }
        }
    }

    /// Standard deviation of the initial latent.
    pub fn initial_std(&self) -> f64 {
        match self {
            NoiseSchedule::KarrasSigma { sigmas } => sigmas[0],
            NoiseSchedule::VpDiscrete { .. } => 1.0,
        }
    }

    pub fn kind(&self) -> ScheduleKind {
        match self {
            NoiseSchedule::KarrasSigma { .. } => ScheduleKind::KarrasSigma,
            NoiseSchedule::VpDiscrete { .. } => ScheduleKind::VpDiscrete,
        }
    }
}
