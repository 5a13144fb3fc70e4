// SPDX-License-Identifier: MIT OR Apache-2.0

//! Guided sampling along a slider.
//!
//! A sweep runs the first `k` steps once under the base prompt (with CFG),
//! then forks the latent once per scale. After the fork every step uses
//!
//! ```text
//! eps_mod = cfg(eps_base) + mu * (eps_pos - eps_neg)
//! ```
//!
//! where the positive and negative predictions are single unguided passes.
//! The zero-scale branch keeps using the base prediction alone, so it is
//! bit-identical to a plain generation. All noise comes from keyed streams:
//! the initial latent from [`StreamKey::initial`] and churn noise from
//! `(0, step, 0)`, shared by every branch.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{te_condition, CfgSetting, ConditionSpec, Denoiser, GuidanceRequest};
use crate::error::{FslError, Result};
use crate::guidance::guided_epsilon_multi;
use crate::rng::{RngStream, StreamKey};
use crate::schedule::{build_schedule, NoiseLevel, NoiseSchedule, StepPosition};
use crate::tensor::LatentTensor;
use crate::types::{
    validate_grid, ConceptTriplet, GuidanceMode, SamplerKind, ScaleGrid, ScaleSample, ScheduleKind,
    SliderConfig, SweepResult,
};

/// Largest churn factor, as in the EDM stochastic sampler.
const MAX_CHURN_GAMMA: f64 = std::f64::consts::SQRT_2 - 1.0;

/// Advances `x` across step `step` of `schedule`.
///
/// `denoise` maps a latent and a noise level to a noise prediction; Heun
/// calls it again at the end of the step with the same rule. A step that
/// lands on `sigma = 0` is a plain Euler step. With `s_churn > 0` the state is
/// first re-noised with draws from `rng`.
pub fn integrator_step(
    denoise: &dyn Fn(&LatentTensor, &NoiseLevel) -> Result<LatentTensor>,
    x: &LatentTensor,
    step: usize,
    schedule: &NoiseSchedule,
    sampler_kind: SamplerKind,
    s_churn: f64,
    rng: &RngStream,
) -> Result<LatentTensor> {
    let steps = schedule.steps();
    if step >= steps {
        return Err(FslError::BadConfig(format!(
            "step {step} outside 0..{steps}"
        )));
    }
    let cur = schedule.level(step);
    let next = schedule.level(step + 1);

    // Integrate in the scaled variable x / alpha against sigma / alpha.
    let mut scaled: Vec<f64> = x
        .values()
        .iter()
        .map(|&v| f64::from(v) / cur.alpha)
        .collect();
    let mut sigma_cur = cur.scaled_sigma();
    let mut churned = None;
    if s_churn > 0.0 && sigma_cur > 0.0 {
        if schedule.kind() != ScheduleKind::KarrasSigma {
            return Err(FslError::BadConfig(
                "s_churn requires the karras schedule".into(),
            ));
        }
        let gamma = (s_churn / steps as f64).min(MAX_CHURN_GAMMA);
        let sigma_hat = sigma_cur * (1.0 + gamma);
        let spread = (sigma_hat * sigma_hat - sigma_cur * sigma_cur).sqrt();
        for (v, z) in scaled.iter_mut().zip(rng.gaussian(x.len())) {
            *v += spread * z;
        }
        sigma_cur = sigma_hat;
        churned = Some(NoiseLevel {
            alpha: 1.0,
            sigma: sigma_hat,
            position: StepPosition::Sigma(sigma_hat),
        });
    }

    let eps1 = match churned {
        None => denoise(x, &cur)?,
        Some(level) => denoise(&to_tensor(x.shape(), &scaled, 1.0), &level)?,
    };
    let h = next.scaled_sigma() - sigma_cur;
    let mut out: Vec<f64> = scaled
        .iter()
        .zip(eps1.values())
        .map(|(s, &e)| s + h * f64::from(e))
        .collect();
    if sampler_kind == SamplerKind::Heun && next.sigma > 0.0 {
        let predicted = to_tensor(x.shape(), &out, next.alpha);
        if !predicted.is_finite() {
            return Err(FslError::NonFiniteState { step });
        }
        let eps2 = denoise(&predicted, &next)?;
        for ((o, s), (&e1, &e2)) in out
            .iter_mut()
            .zip(&scaled)
            .zip(eps1.values().iter().zip(eps2.values()))
        {
            *o = s + 0.5 * h * (f64::from(e1) + f64::from(e2));
        }
    }
    let result = to_tensor(x.shape(), &out, next.alpha);
    if !result.is_finite() {
        return Err(FslError::NonFiniteState { step });
    }
    Ok(result)
}

fn to_tensor(shape: &[usize], scaled: &[f64], alpha: f64) -> LatentTensor {
    LatentTensor::from_parts_unchecked(
        shape.to_vec(),
        scaled.iter().map(|v| (v * alpha) as f32).collect(),
    )
}

/// How noise is predicted after the branch point.
#[derive(Debug, Clone)]
enum BranchRule {
    /// Base prompt only (the zero scale).
    Neutral,
    /// `eps_base + sum mu_j (eps_pos_j - eps_neg_j)`.
    Score(Vec<(String, String, f64)>),
    /// A single guided pass on an interpolated embedding.
    Embedding(String),
}

struct Session<'a> {
    denoiser: &'a dyn Denoiser,
    config: &'a SliderConfig,
    schedule: NoiseSchedule,
    neutral: String,
    seed: u64,
}

impl Session<'_> {
    fn new<'a>(
        denoiser: &'a dyn Denoiser,
        base_prompt: &str,
        config: &'a SliderConfig,
        seed: u64,
    ) -> Result<Session<'a>> {
        config.validate()?;
        let schedule = build_schedule(config)?;
        if config.s_churn > 0.0 && config.schedule_kind != ScheduleKind::KarrasSigma {
            return Err(FslError::BadConfig(
                "s_churn requires the karras schedule".into(),
            ));
        }
        let neutral = denoiser.register(&ConditionSpec::Text(base_prompt.to_string()))?;
        Ok(Session {
            denoiser,
            config,
            schedule,
            neutral,
            seed,
        })
    }

    fn initial_latent(&self) -> Result<LatentTensor> {
        let shape = self.denoiser.latent_shape();
        let n: usize = shape.iter().product();
        let std = self.schedule.initial_std();
        let noise = RngStream::new(self.seed, StreamKey::initial()).gaussian(n);
        let scaled: Vec<f64> = noise.iter().map(|z| z * std).collect();
        LatentTensor::from_f64(shape, &scaled)
    }

    fn predict(
        &self,
        x: &LatentTensor,
        condition: &str,
        level: &NoiseLevel,
        cfg: CfgSetting,
    ) -> Result<LatentTensor> {
        let eps = self.denoiser.predict(&GuidanceRequest {
            latent: x,
            condition_id: condition,
            position: level.position,
            cfg,
        })?;
        x.ensure_same_shape(&eps)?;
        Ok(eps)
    }

    fn epsilon(
        &self,
        rule: &BranchRule,
        x: &LatentTensor,
        level: &NoiseLevel,
    ) -> Result<LatentTensor> {
        let cfg = CfgSetting::on(self.config.guidance);
        match rule {
            BranchRule::Neutral => self.predict(x, &self.neutral, level, cfg),
            BranchRule::Embedding(id) => self.predict(x, id, level, cfg),
            BranchRule::Score(terms) => {
                let base = self.predict(x, &self.neutral, level, cfg)?;
                let mut preds = Vec::with_capacity(terms.len());
                for (pos, neg, mu) in terms {
                    if *mu == 0.0 {
                        continue;
                    }
                    let p = self.predict(x, pos, level, CfgSetting::OFF)?;
                    let n = self.predict(x, neg, level, CfgSetting::OFF)?;
                    preds.push((p, n, *mu));
                }
                let refs: Vec<_> = preds.iter().map(|(p, n, mu)| (p, n, *mu)).collect();
                guided_epsilon_multi(&base, &refs)
            }
        }
    }

    /// Runs steps `range` on `x`, tagging failures with `scale`.
    fn run(
        &self,
        mut x: LatentTensor,
        range: std::ops::Range<usize>,
        rule: &BranchRule,
        scale: f64,
    ) -> Result<LatentTensor> {
        for step in range {
            let rng = RngStream::new(self.seed, StreamKey::new(0, step as u32, 0));
            let denoise =
                |latent: &LatentTensor, level: &NoiseLevel| self.epsilon(rule, latent, level);
            x = integrator_step(
                &denoise,
                &x,
                step,
                &self.schedule,
                self.config.sampler_kind,
                self.config.s_churn,
                &rng,
            )
            .map_err(|e| FslError::AtStep {
                scale,
                step,
                source: Box::new(e),
            })?;
        }
        Ok(x)
    }

    fn prefix(&self) -> Result<LatentTensor> {
        let x = self.initial_latent()?;
        self.run(x, 0..self.config.branch_step, &BranchRule::Neutral, 0.0)
    }

    fn finish(&self, x: LatentTensor, rule: &BranchRule, scale: f64) -> Result<LatentTensor> {
        self.run(
            x,
            self.config.branch_step..self.schedule.steps(),
            rule,
            scale,
        )
    }
}

/// Registers the prompts of `triplet` and returns the branch rule for `scale`.
fn rule_for(
    denoiser: &dyn Denoiser,
    triplet: &ConceptTriplet,
    config: &SliderConfig,
    scale: f64,
) -> Result<BranchRule> {
    if scale == 0.0 {
        return Ok(BranchRule::Neutral);
    }
    match config.guidance_mode {
        GuidanceMode::ScoreSpace => {
            let pos = denoiser.register(&ConditionSpec::Text(triplet.positive_prompt.clone()))?;
            let neg = denoiser.register(&ConditionSpec::Text(triplet.negative_prompt.clone()))?;
            Ok(BranchRule::Score(vec![(pos, neg, scale)]))
        }
        GuidanceMode::EmbeddingSpace => {
            if !denoiser.capabilities().supports_embedding_space {
                return Err(FslError::Unsupported(
                    "backend has no embedding-space conditioning".into(),
                ));
            }
            let e_n = denoiser.text_embedding(&triplet.base_prompt)?;
            let e_p = denoiser.text_embedding(&triplet.positive_prompt)?;
            let e_g = denoiser.text_embedding(&triplet.negative_prompt)?;
            let e_mod = te_condition(&e_n, &e_p, &e_g, scale)?;
            Ok(BranchRule::Embedding(
                denoiser.register(&ConditionSpec::Embedding(e_mod))?,
            ))
        }
    }
}

/// Generates one sample per grid scale from a shared neutral prefix.
pub fn run_slider_sweep(
    denoiser: &dyn Denoiser,
    triplet: &ConceptTriplet,
    grid: &ScaleGrid,
    config: &SliderConfig,
    seed: u64,
) -> Result<SweepResult> {
    triplet.validate()?;
    let session = Session::new(denoiser, &triplet.base_prompt, config, seed)?;
    let rules = grid
        .scales()
        .iter()
        .map(|&s| rule_for(denoiser, triplet, config, s))
        .collect::<Result<Vec<_>>>()?;
    let shared = session.prefix()?;
    let latents = grid
        .scales()
        .par_iter()
        .zip(rules.par_iter())
        .map(|(&scale, rule)| session.finish(shared.clone(), rule, scale))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        triplet: triplet.clone(),
        grid: grid.clone(),
        seed,
        config: config.clone(),
        samples: grid
            .scales()
            .iter()
            .zip(latents)
            .map(|(&scale, latent)| ScaleSample { scale, latent })
            .collect(),
    })
}

/// All `T` steps for one scale without sharing a prefix.
pub fn run_single_scale(
    denoiser: &dyn Denoiser,
    triplet: &ConceptTriplet,
    scale: f64,
    config: &SliderConfig,
    seed: u64,
) -> Result<LatentTensor> {
    let session = Session::new(denoiser, &triplet.base_prompt, config, seed)?;
    let rule = rule_for(denoiser, triplet, config, scale)?;
    let mut x = session.initial_latent()?;
    for step in 0..session.schedule.steps() {
        let r = if step < config.branch_step {
            &BranchRule::Neutral
        } else {
            &rule
        };
        x = session.run(x, step..step + 1, r, scale)?;
    }
    Ok(x)
}

/// A plain CFG generation under `base_prompt`.
pub fn run_neutral(
    denoiser: &dyn Denoiser,
    base_prompt: &str,
    config: &SliderConfig,
    seed: u64,
) -> Result<LatentTensor> {
    let session = Session::new(denoiser, base_prompt, config, seed)?;
    let x = session.initial_latent()?;
    session.run(x, 0..session.schedule.steps(), &BranchRule::Neutral, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionMode {
    /// Join the prompts of all triplets into one triplet and sweep it.
    Concatenate,
    /// Sum the per-triplet guidance terms over the product of scale lists.
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeSample {
    /// One scale per axis.
    pub scales: Vec<f64>,
    pub latent: LatentTensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeSweep {
    pub mode: CompositionMode,
    /// The triplet driving each axis.
    pub triplets: Vec<ConceptTriplet>,
    pub axes: Vec<ScaleGrid>,
    pub seed: u64,
    pub config: SliderConfig,
    /// Row-major over the axes (last axis fastest).
    pub samples: Vec<CompositeSample>,
}

impl CompositeSweep {
    pub fn sample(&self, scales: &[f64]) -> Option<&LatentTensor> {
        self.samples
            .iter()
            .find(|s| s.scales == scales)
            .map(|s| &s.latent)
    }
}

/// Joins prompts of several triplets into one; the base prompt of the first wins.
pub fn concatenate_triplets(triplets: &[ConceptTriplet]) -> Result<ConceptTriplet> {
    let join =
        |f: fn(&ConceptTriplet) -> &str| triplets.iter().map(f).collect::<Vec<_>>().join(" ");
    ConceptTriplet::new(
        join(|t| &t.concept_name).replace(' ', "+"),
        triplets[0].base_prompt.clone(),
        join(|t| &t.positive_prompt),
        join(|t| &t.negative_prompt),
    )
}

fn cartesian(axes: &[ScaleGrid]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.scales().iter().map(move |&s| {
                    let mut v = prefix.clone();
                    v.push(s);
                    v
                })
            })
            .collect()
    })
}

/// Applies several sliders at once.
pub fn compose_sweep(
    denoiser: &dyn Denoiser,
    triplets: &[ConceptTriplet],
    scales: &[Vec<f64>],
    mode: CompositionMode,
    config: &SliderConfig,
    seed: u64,
) -> Result<CompositeSweep> {
    if triplets.len() < 2 {
        return Err(FslError::BadConfig(
            "composition needs at least two triplets".into(),
        ));
    }
    for t in triplets {
        t.validate()?;
    }
    match mode {
        CompositionMode::Concatenate => {
            let first = scales
                .first()
                .ok_or_else(|| FslError::BadConfig("no scale list given".into()))?;
            if scales.iter().any(|s| s != first) {
                return Err(FslError::BadConfig(
                    "concatenated sliders move together and need one shared scale list".into(),
                ));
            }
            let joined = concatenate_triplets(triplets)?;
            let grid = validate_grid(first)?;
            let sweep = run_slider_sweep(denoiser, &joined, &grid, config, seed)?;
            Ok(CompositeSweep {
                mode,
                triplets: vec![joined],
                axes: vec![grid],
                seed,
                config: config.clone(),
                samples: sweep
                    .samples
                    .into_iter()
                    .map(|s| CompositeSample {
                        scales: vec![s.scale],
                        latent: s.latent,
                    })
                    .collect(),
            })
        }
        CompositionMode::Additive => {
            if scales.len() != triplets.len() {
                return Err(FslError::BadConfig(format!(
                    "{} triplets but {} scale lists",
                    triplets.len(),
                    scales.len()
                )));
            }
            if config.guidance_mode != GuidanceMode::ScoreSpace {
                return Err(FslError::Unsupported(
                    "additive composition works in score space only".into(),
                ));
            }
            let axes = scales
                .iter()
                .map(|s| validate_grid(s))
                .collect::<Result<Vec<_>>>()?;
            let session = Session::new(denoiser, &triplets[0].base_prompt, config, seed)?;
            let mut ids = Vec::with_capacity(triplets.len());
            for t in triplets {
                let pos = denoiser.register(&ConditionSpec::Text(t.positive_prompt.clone()))?;
                let neg = denoiser.register(&ConditionSpec::Text(t.negative_prompt.clone()))?;
                ids.push((pos, neg));
            }
            let combos = cartesian(&axes);
            let shared = session.prefix()?;
            let latents = combos
                .par_iter()
                .map(|combo| {
                    let terms: Vec<_> = ids
                        .iter()
                        .zip(combo)
                        .filter(|(_, &mu)| mu != 0.0)
                        .map(|((p, n), &mu)| (p.clone(), n.clone(), mu))
                        .collect();
                    let rule = if terms.is_empty() {
                        BranchRule::Neutral
                    } else {
                        BranchRule::Score(terms)
                    };
                    let tag = combo.iter().map(|m| m.abs()).fold(0.0, f64::max);
                    session.finish(shared.clone(), &rule, tag)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(CompositeSweep {
                mode,
                triplets: triplets.to_vec(),
                axes,
                seed,
                config: config.clone(),
                samples: combos
                    .into_iter()
                    .zip(latents)
                    .map(|(scales, latent)| CompositeSample { scales, latent })
                    .collect(),
            })
        }
    }
}
