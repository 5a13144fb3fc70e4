// SPDX-License-Identifier: MIT OR Apache-2.0

//! Scorers served by an external adapter.

use std::sync::Arc;

use super::{AlignScore, AlignmentScorer, PerceptualScorer};
use crate::error::Result;
use crate::protocol::ProtocolClient;
use crate::tensor::LatentTensor;

pub struct ExternalAligner {
    name: String,
    client: Arc<ProtocolClient>,
}

impl ExternalAligner {
    pub fn new(name: impl Into<String>, client: Arc<ProtocolClient>) -> Self {
        Self {
            name: name.into(),
            client,
        }
    }
}

impl AlignmentScorer for ExternalAligner {
    fn name(&self) -> &str {
        &self.name
    }

    fn align(&self, sample: &LatentTensor, prompt: &str) -> Result<AlignScore> {
        let (score, a_max) = self.client.with_connection(|c| c.align(sample, prompt))?;
        Ok(AlignScore { score, a_max })
    }
}

pub struct ExternalPerceptual {
    name: String,
    client: Arc<ProtocolClient>,
}

impl ExternalPerceptual {
    pub fn new(name: impl Into<String>, client: Arc<ProtocolClient>) -> Self {
        Self {
            name: name.into(),
            client,
        }
    }
}

impl PerceptualScorer for ExternalPerceptual {
    fn name(&self) -> &str {
        &self.name
    }

    fn distance(&self, a: &LatentTensor, b: &LatentTensor) -> Result<f64> {
        self.client.with_connection(|c| c.distance(a, b))
    }
}
