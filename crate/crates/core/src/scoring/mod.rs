// SPDX-License-Identifier: MIT OR Apache-2.0

//! Alignment and perceptual scorers, and scoring of whole sweeps.

pub mod analytic;
pub mod cache;
pub mod external;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FslError, Result};
use crate::tensor::LatentTensor;
use crate::types::SweepResult;

pub use analytic::{
    euclidean_perceptual, projection_alignment, AlignmentTransform, EuclideanPerceptual,
    ProjectionAligner,
};
pub use cache::ScoreCache;
pub use external::{ExternalAligner, ExternalPerceptual};

/// One alignment measurement and the scorer's maximum attainable value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignScore {
    pub score: f64,
    pub a_max: f64,
}

/// `a(x, c)`: how strongly a sample expresses a prompt.
pub trait AlignmentScorer: Send + Sync {
    fn name(&self) -> &str;
    fn align(&self, sample: &LatentTensor, prompt: &str) -> Result<AlignScore>;
}

/// `d(x, y)`: perceptual distance, zero on identical inputs and symmetric.
pub trait PerceptualScorer: Send + Sync {
    fn name(&self) -> &str;
    fn distance(&self, a: &LatentTensor, b: &LatentTensor) -> Result<f64>;
}

/// Which part of a sample a scorer pair looks at (video has two).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, PartialOrd, Ord,
)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    #[default]
    Default,
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub scale: f64,
    /// `a(x_eta, c+)`
    pub a_pos: f64,
    /// `a(x_eta, c-)`
    pub a_neg: f64,
    /// `d(x_eta, x_0)`
    pub dist: f64,
}

/// Scores of one sweep, one record per grid scale in grid order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub records: Vec<ScoreRecord>,
    pub aligner: String,
    pub perceptual: String,
    pub a_max: f64,
    #[serde(default)]
    pub aspect: Aspect,
}

impl ScoreTable {
    pub fn record(&self, scale: f64) -> Option<&ScoreRecord> {
        self.records.iter().find(|r| r.scale == scale)
    }

    pub fn neutral(&self) -> Option<&ScoreRecord> {
        self.record(0.0)
    }
}

/// Scores every sample of `sweep` against both prompts and against the neutral sample.
///
/// The neutral record's distance is 0 by definition and is not requested
/// from the scorer.
pub fn score_sweep(
    sweep: &SweepResult,
    aligner: &dyn AlignmentScorer,
    perceptual: &dyn PerceptualScorer,
    cache: Option<&ScoreCache>,
) -> Result<ScoreTable> {
    let neutral = sweep.neutral();
    let pos = &sweep.triplet.positive_prompt;
    let neg = &sweep.triplet.negative_prompt;
    let align = |x: &LatentTensor, prompt: &str| match cache {
        Some(c) => c.align(aligner, x, prompt),
        None => aligner.align(x, prompt),
    };
    let rows: Vec<Result<(ScoreRecord, f64)>> = sweep
        .samples
        .par_iter()
        .map(|s| {
            let annotate = |e: FslError| FslError::AtScale {
                scale: s.scale,
                source: Box::new(e),
            };
            let a_pos = align(&s.latent, pos).map_err(annotate)?;
            let a_neg = align(&s.latent, neg).map_err(annotate)?;
            let dist = if s.scale == 0.0 {
                0.0
            } else {
                match cache {
                    Some(c) => c.distance(perceptual, &s.latent, neutral),
                    None => perceptual.distance(&s.latent, neutral),
                }
                .map_err(annotate)?
            };
            Ok((
                ScoreRecord {
                    scale: s.scale,
                    a_pos: a_pos.score,
                    a_neg: a_neg.score,
                    dist,
                },
                a_pos.a_max,
            ))
        })
        .collect();
    let mut records = Vec::with_capacity(rows.len());
    let mut a_max = None;
    for row in rows {
        let (rec, amax) = row?;
        a_max.get_or_insert(amax);
        records.push(rec);
    }
    Ok(ScoreTable {
        records,
        aligner: aligner.name().to_string(),
        perceptual: perceptual.name().to_string(),
        a_max: a_max.unwrap_or(1.0),
        aspect: Aspect::Default,
    })
}
