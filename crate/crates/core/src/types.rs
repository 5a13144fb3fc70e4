// SPDX-License-Identifier: MIT OR Apache-2.0

//! Domain types shared across the engine.

use serde::{Deserialize, Serialize};

use crate::error::{FslError, Result};
use crate::tensor::LatentTensor;

/// The `(base, positive, negative)` prompt triple that defines a slider direction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTriplet")]
pub struct ConceptTriplet {
    pub concept_name: String,
    pub base_prompt: String,
    pub positive_prompt: String,
    pub negative_prompt: String,
}

#[derive(Deserialize)]
struct RawTriplet {
    concept_name: String,
    base_prompt: String,
    positive_prompt: String,
    negative_prompt: String,
}

impl TryFrom<RawTriplet> for ConceptTriplet {
    type Error = FslError;

    fn try_from(raw: RawTriplet) -> Result<Self> {
        ConceptTriplet::new(
            raw.concept_name,
            raw.base_prompt,
            raw.positive_prompt,
            raw.negative_prompt,
        )
    }
}

impl ConceptTriplet {
    pub fn new(
        concept_name: impl Into<String>,
        base: impl Into<String>,
        positive: impl Into<String>,
        negative: impl Into<String>,
    ) -> Result<Self> {
        let triplet = Self {
            concept_name: concept_name.into(),
            base_prompt: base.into(),
            positive_prompt: positive.into(),
            negative_prompt: negative.into(),
        };
        triplet.validate()?;
        Ok(triplet)
    }

    pub fn validate(&self) -> Result<()> {
        for (label, text) in [
            ("base", &self.base_prompt),
            ("positive", &self.positive_prompt),
            ("negative", &self.negative_prompt),
        ] {
            if text.trim().is_empty() {
                return Err(FslError::InvalidTriplet(format!("{label} prompt is empty")));
            }
        }
        if self.positive_prompt == self.negative_prompt {
            return Err(FslError::InvalidTriplet(
                "positive and negative prompts are identical".into(),
            ));
        }
        if self.concept_name.is_empty() {
            return Err(FslError::InvalidTriplet("concept name is empty".into()));
        }
        Ok(())
    }
}

/// Sorted, deduplicated slider scales with exactly one zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct ScaleGrid {
    scales: Vec<f64>,
    /// Set when `0` was missing from the input and had to be added.
    #[serde(default)]
    zero_inserted: bool,
}

#[derive(Deserialize)]
struct RawGrid {
    scales: Vec<f64>,
    #[serde(default)]
    zero_inserted: bool,
}

impl TryFrom<RawGrid> for ScaleGrid {
    type Error = FslError;

    fn try_from(raw: RawGrid) -> Result<Self> {
        let mut grid = validate_grid(&raw.scales)?;
        grid.zero_inserted |= raw.zero_inserted;
        Ok(grid)
    }
}

/// Sorts, deduplicates exact repeats and inserts a zero if absent.
pub fn validate_grid(scales: &[f64]) -> Result<ScaleGrid> {
    if scales.is_empty() {
        return Err(FslError::EmptyGrid);
    }
    if let Some(&bad) = scales.iter().find(|s| !s.is_finite()) {
        return Err(FslError::NonFiniteScale(bad));
    }
    // -0.0 and 0.0 are the same scale.
    let mut sorted: Vec<f64> = scales
        .iter()
        .map(|&s| if s == 0.0 { 0.0 } else { s })
        .collect();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let zero_inserted = !sorted.contains(&0.0);
    if zero_inserted {
        let at = sorted.partition_point(|&s| s < 0.0);
        sorted.insert(at, 0.0);
    }
    Ok(ScaleGrid {
        scales: sorted,
        zero_inserted,
    })
}

impl ScaleGrid {
    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn zero_inserted(&self) -> bool {
        self.zero_inserted
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    pub fn eta_min(&self) -> f64 {
        self.scales[0]
    }

    pub fn eta_max(&self) -> f64 {
        self.scales[self.scales.len() - 1]
    }

    pub fn zero_index(&self) -> usize {
        self.scales
            .iter()
            .position(|&s| s == 0.0)
            .expect("grid always holds 0")
    }

    /// Uniform grid `-m..=m` in unit steps, the customary slider default.
    pub fn symmetric_integers(m: u32) -> Self {
        let m = i64::from(m);
        let scales: Vec<f64> = (-m..=m).map(|i| i as f64).collect();
        validate_grid(&scales).expect("integer grid is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    VpDiscrete,
    KarrasSigma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Euler,
    Heun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    /// Three passes per step combined in noise-prediction space.
    ScoreSpace,
    /// One pass per step on the interpolated text embedding.
    EmbeddingSpace,
}

/// Everything the guided sweep is parameterized by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSliderConfig")]
pub struct SliderConfig {
    pub total_steps: usize,
    pub branch_step: usize,
    pub guidance: f64,
    pub schedule_kind: ScheduleKind,
    pub sampler_kind: SamplerKind,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub s_churn: f64,
    pub guidance_mode: GuidanceMode,
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawSliderConfig {
    total_steps: usize,
    branch_step: usize,
    guidance: f64,
    schedule_kind: ScheduleKind,
    sampler_kind: SamplerKind,
    sigma_min: f64,
    sigma_max: f64,
    rho: f64,
    s_churn: f64,
    guidance_mode: GuidanceMode,
}

impl Default for RawSliderConfig {
    fn default() -> Self {
        let d = SliderConfig::default();
        RawSliderConfig {
            total_steps: d.total_steps,
            branch_step: d.branch_step,
            guidance: d.guidance,
            schedule_kind: d.schedule_kind,
            sampler_kind: d.sampler_kind,
            sigma_min: d.sigma_min,
            sigma_max: d.sigma_max,
            rho: d.rho,
            s_churn: d.s_churn,
            guidance_mode: d.guidance_mode,
        }
    }
}

impl TryFrom<RawSliderConfig> for SliderConfig {
    type Error = FslError;

    fn try_from(r: RawSliderConfig) -> Result<Self> {
        let cfg = SliderConfig {
            total_steps: r.total_steps,
            branch_step: r.branch_step,
            guidance: r.guidance,
            schedule_kind: r.schedule_kind,
            sampler_kind: r.sampler_kind,
            sigma_min: r.sigma_min,
            sigma_max: r.sigma_max,
            rho: r.rho,
            s_churn: r.s_churn,
            guidance_mode: r.guidance_mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Default for SliderConfig {
    /// Image setup: 50 discrete steps, branch at 15, CFG 7.5.
    fn default() -> Self {
        Self {
            total_steps: 50,
            branch_step: 15,
            guidance: 7.5,
            schedule_kind: ScheduleKind::VpDiscrete,
            sampler_kind: SamplerKind::Euler,
            sigma_min: 0.3,
            sigma_max: 500.0,
            rho: 3.0,
            s_churn: 0.0,
            guidance_mode: GuidanceMode::ScoreSpace,
        }
    }
}

impl SliderConfig {
    /// Audio setup: Heun on a Karras sigma ladder, 36 steps, branch at 4, CFG 7.
    pub fn audio() -> Self {
        Self {
            total_steps: 36,
            branch_step: 4,
            guidance: 7.0,
            schedule_kind: ScheduleKind::KarrasSigma,
            sampler_kind: SamplerKind::Heun,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(FslError::BadConfig("total_steps must be positive".into()));
        }
        if self.branch_step >= self.total_steps {
            return Err(FslError::BadConfig(format!(
                "branch_step {} must be below total_steps {}",
                self.branch_step, self.total_steps
            )));
        }
        if !(self.guidance.is_finite() && self.guidance >= 0.0) {
            return Err(FslError::BadConfig(format!(
                "guidance {} must be >= 0",
                self.guidance
            )));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min.is_finite()) {
            return Err(FslError::BadConfig("sigma_min must be positive".into()));
        }
        if !(self.sigma_min < self.sigma_max && self.sigma_max.is_finite()) {
            return Err(FslError::BadConfig(format!(
                "sigma_min {} must be below sigma_max {}",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(FslError::BadConfig("rho must be positive".into()));
        }
        if !(self.s_churn >= 0.0 && self.s_churn.is_finite()) {
            return Err(FslError::BadConfig("s_churn must be >= 0".into()));
        }
        Ok(())
    }
}

/// One generated sample of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSample {
    pub scale: f64,
    pub latent: LatentTensor,
}

/// The family of samples generated for one seed along one slider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub triplet: ConceptTriplet,
    pub grid: ScaleGrid,
    pub seed: u64,
    pub config: SliderConfig,
    /// One entry per grid scale, in grid order.
    pub samples: Vec<ScaleSample>,
}

impl SweepResult {
    pub fn sample(&self, scale: f64) -> Option<&LatentTensor> {
        self.samples
            .iter()
            .find(|s| s.scale == scale)
            .map(|s| &s.latent)
    }

    pub fn neutral(&self) -> &LatentTensor {
        &self.samples[self.grid.zero_index()].latent
    }

    /// Bitwise comparison of every sample.
    pub fn bit_eq(&self, other: &SweepResult) -> bool {
        self.samples.len() == other.samples.len()
            && self
                .samples
                .iter()
                .zip(&other.samples)
                .all(|(a, b)| a.scale.to_bits() == b.scale.to_bits() && a.latent.bit_eq(&b.latent))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generic_grid() {
        let g = validate_grid(&[-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g.eta_min(), -3.0);
        assert_eq!(g.eta_max(), 3.0);
        assert!(!g.zero_inserted());
        assert_eq!(g, ScaleGrid::symmetric_integers(3));
    }

    #[test]
    fn singleton_zero_grid() {
        let g = validate_grid(&[0.0]).unwrap();
        assert_eq!(g.scales(), &[0.0]);
        assert!(!g.zero_inserted());
    }

    #[test]
    fn zero_gets_inserted() {
        let g = validate_grid(&[1.0, -1.0]).unwrap();
        assert_eq!(g.scales(), &[-1.0, 0.0, 1.0]);
        assert!(g.zero_inserted());
    }

    #[test]
    fn duplicates_and_signed_zero() {
        let g = validate_grid(&[2.0, -0.0, 2.0, 0.0, 1.0 + 1e-12, 1.0]).unwrap();
        assert_eq!(g.scales(), &[0.0, 1.0, 1.0 + 1e-12, 2.0]);
    }

    #[test]
    fn non_finite_scale() {
        assert!(matches!(
            validate_grid(&[0.0, f64::NAN]),
            Err(FslError::NonFiniteScale(_))
        ));
        assert!(matches!(
            validate_grid(&[f64::INFINITY]),
            Err(FslError::NonFiniteScale(_))
        ));
        assert!(matches!(validate_grid(&[]), Err(FslError::EmptyGrid)));
    }

    #[test]
    fn triplet_invariants() {
        assert!(ConceptTriplet::new("x", "a", "b", "c").is_ok());
        assert!(ConceptTriplet::new("x", "", "b", "c").is_err());
        assert!(ConceptTriplet::new("x", "a", "b", "b").is_err());
        let bad =
            r#"{"concept_name":"x","base_prompt":"a","positive_prompt":"b","negative_prompt":"b"}"#;
        assert!(serde_json::from_str::<ConceptTriplet>(bad).is_err());
    }

    #[test]
    fn config_invariants() {
        assert!(SliderConfig::default().validate().is_ok());
        assert!(SliderConfig::audio().validate().is_ok());
        let mut c = SliderConfig::default();
        c.branch_step = 50;
        assert!(c.validate().is_err());
        let mut c = SliderConfig::default();
        c.sigma_min = 600.0;
        assert!(c.validate().is_err());
        let mut c = SliderConfig::default();
        c.s_churn = -1.0;
        assert!(c.validate().is_err());
    }
}
