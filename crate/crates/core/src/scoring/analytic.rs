// SPDX-License-Identifier: MIT OR Apache-2.0

//! Closed-form scorers for the analytic backbone.

use serde::{Deserialize, Serialize};

use super::{AlignScore, AlignmentScorer, PerceptualScorer};
use crate::error::{FslError, Result};
use crate::tensor::LatentTensor;
use crate::types::ConceptTriplet;

/// `||a - b||_2 / sqrt(dim)`.
pub fn euclidean_perceptual(a: &LatentTensor, b: &LatentTensor) -> Result<f64> {
    Ok(a.l2_distance(b)? / (a.len() as f64).sqrt())
}

/// Signed projection `sign * <x - m0, v / |v|>`, clamped to `[-a_max, a_max]`.
pub fn projection_alignment(
    sample: &LatentTensor,
    sign: f64,
    base_mean: &[f64],
    direction: &[f64],
    a_max: f64,
) -> Result<f64> {
    if sample.len() != base_mean.len() || direction.len() != base_mean.len() {
        return Err(FslError::ShapeMismatch {
            left: sample.shape().to_vec(),
            right: vec![base_mean.len()],
        });
    }
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    let proj: f64 = sample
        .values()
        .iter()
        .zip(base_mean)
        .zip(direction)
        .map(|((&x, m), v)| (f64::from(x) - m) * v)
        .sum::<f64>()
        / norm;
    Ok((sign * proj).clamp(-a_max, a_max))
}

/// Optional saturation applied to the projection before clamping.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlignmentTransform {
    #[default]
    Identity,
    /// `tanh(p / scale)`
    Tanh { scale: f64 },
}

impl AlignmentTransform {
    fn apply(self, p: f64) -> f64 {
        match self {
            AlignmentTransform::Identity => p,
            AlignmentTransform::Tanh { scale } => (p / scale).tanh(),
        }
    }
}

/// Projection aligner bound to one triplet: the positive prompt scores
/// `+<x - m0, v>`, the negative prompt its mirror image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionAligner {
    pub name: String,
    pub base_mean: Vec<f64>,
    pub direction: Vec<f64>,
    pub a_max: f64,
    pub positive_prompt: String,
    pub negative_prompt: String,
    #[serde(default)]
    pub transform: AlignmentTransform,
}

impl ProjectionAligner {
    pub fn new(triplet: &ConceptTriplet, base_mean: Vec<f64>, direction: Vec<f64>) -> Self {
        Self {
            name: "projection".to_string(),
            base_mean,
            direction,
            a_max: 1.0,
            positive_prompt: triplet.positive_prompt.clone(),
            negative_prompt: triplet.negative_prompt.clone(),
            transform: AlignmentTransform::Identity,
        }
    }

    pub fn with_transform(mut self, transform: AlignmentTransform) -> Self {
        self.name = match transform {
            AlignmentTransform::Identity => "projection".to_string(),
            AlignmentTransform::Tanh { scale } => format!("projection-tanh-{scale}"),
        };
        self.transform = transform;
        self
    }

    pub fn with_a_max(mut self, a_max: f64) -> Self {
        self.a_max = a_max;
        self
    }

    fn sign_of(&self, prompt: &str) -> Result<f64> {
        if prompt == self.positive_prompt {
            Ok(1.0)
        } else if prompt == self.negative_prompt {
            Ok(-1.0)
        } else {
            Err(FslError::UnknownCondition(prompt.to_string()))
        }
    }
}

impl AlignmentScorer for ProjectionAligner {
    fn name(&self) -> &str {
        &self.name
    }

    fn align(&self, sample: &LatentTensor, prompt: &str) -> Result<AlignScore> {
        let sign = self.sign_of(prompt)?;
        let raw =
            projection_alignment(sample, 1.0, &self.base_mean, &self.direction, f64::INFINITY)?;
        let score = (sign * self.transform.apply(raw)).clamp(-self.a_max, self.a_max);
        Ok(AlignScore {
            score,
            a_max: self.a_max,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EuclideanPerceptual;

impl PerceptualScorer for EuclideanPerceptual {
    fn name(&self) -> &str {
        "euclidean"
    }

    fn distance(&self, a: &LatentTensor, b: &LatentTensor) -> Result<f64> {
        euclidean_perceptual(a, b)
    }
}
