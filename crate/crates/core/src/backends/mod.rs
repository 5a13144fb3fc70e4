// SPDX-License-Identifier: MIT OR Apache-2.0

//! Denoiser evaluators.
//!
//! A [`Denoiser`] answers "what is the noise prediction for this latent under
//! this condition at this point of the schedule". Conditions are registered
//! up front under content-derived ids so that concurrent sweeps sharing one
//! backend never collide.

pub mod analytic;
pub mod external;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FslError, Result};
use crate::schedule::StepPosition;
use crate::tensor::LatentTensor;

pub use analytic::{AffineEmbedding, AnalyticBackbone, AnalyticBackboneSpec, GaussianComponent};
pub use external::ExternalDenoiser;

/// A text-conditioning embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = FslError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        EmbeddingVector::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(e: EmbeddingVector) -> Self {
        e.0
    }
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FslError::InvalidTensor(
                "embedding has non-finite entries".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `e_neutral + mu * (e_pos - e_neg)`, the interpolated conditioning of the
/// embedding-space variant.
pub fn te_condition(
    e_neutral: &EmbeddingVector,
    e_pos: &EmbeddingVector,
    e_neg: &EmbeddingVector,
    scale: f64,
) -> Result<EmbeddingVector> {
    let n = e_neutral.len();
    if e_pos.len() != n || e_neg.len() != n {
        return Err(FslError::ShapeMismatch {
            left: vec![n],
            right: vec![e_pos.len(), e_neg.len()],
        });
    }
    if scale == 0.0 {
        return Ok(e_neutral.clone());
    }
    let values = e_neutral
        .values()
        .iter()
        .zip(e_pos.values())
        .zip(e_neg.values())
        .map(|((&e, &p), &q)| e + scale * (p - q))
        .collect();
    EmbeddingVector::new(values)
}

/// What a condition id stands for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionSpec {
    Text(String),
    Embedding(EmbeddingVector),
}

impl ConditionSpec {
    /// Content-derived id, stable across processes.
    pub fn id(&self) -> String {
        let mut hasher = Sha256::new();
        match self {
            ConditionSpec::Text(t) => {
                hasher.update(b"text\0");
                hasher.update(t.as_bytes());
            }
            ConditionSpec::Embedding(e) => {
                hasher.update(b"embedding\0");
                for v in e.values() {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
        let digest = hasher.finalize();
        let prefix = match self {
            ConditionSpec::Text(_) => "txt",
            ConditionSpec::Embedding(_) => "emb",
        };
        format!("{prefix}-{}", hex_prefix(&digest, 16))
    }
}

pub(crate) fn hex_prefix(bytes: &[u8], n: usize) -> String {
    bytes.iter().take(n).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfgSetting {
    pub enabled: bool,
    pub guidance: f64,
}

impl CfgSetting {
    pub const OFF: CfgSetting = CfgSetting {
        enabled: false,
        guidance: 0.0,
    };

    pub fn on(guidance: f64) -> Self {
        Self {
            enabled: true,
            guidance,
        }
    }
}

/// One noise-prediction request.
#[derive(Debug, Clone)]
pub struct GuidanceRequest<'a> {
    pub latent: &'a LatentTensor,
    pub condition_id: &'a str,
    pub position: StepPosition,
    pub cfg: CfgSetting,
}

impl GuidanceRequest<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.cfg.enabled && !(self.cfg.guidance >= 0.0 && self.cfg.guidance.is_finite()) {
            return Err(FslError::BadConfig(format!(
                "guidance {} must be >= 0 when CFG is on",
                self.cfg.guidance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Capabilities {
    pub supports_cfg: bool,
    pub supports_embedding_space: bool,
}

/// A noise predictor reachable by the sampler.
///
/// Implementations must be callable from several threads at once.
pub trait Denoiser: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    /// Shape of the latents this backend generates.
    fn latent_shape(&self) -> Vec<usize>;

    /// Makes `spec` usable under `id`. Registering the same pair twice is a no-op.
    fn register_condition(&self, id: &str, spec: &ConditionSpec) -> Result<()>;

    /// Noise prediction; with CFG enabled the backend combines its own
    /// unconditional prediction with the conditional one.
    fn predict(&self, request: &GuidanceRequest<'_>) -> Result<LatentTensor>;

    /// Text-encoder output for `text`, needed by the embedding-space mode.
    fn text_embedding(&self, text: &str) -> Result<EmbeddingVector> {
        let _ = text;
        Err(FslError::Unsupported(
            "backend does not expose text embeddings".into(),
        ))
    }

    /// Registers `spec` under its content id and returns the id.
    fn register(&self, spec: &ConditionSpec) -> Result<String> {
        let id = spec.id();
        self.register_condition(&id, spec)?;
        Ok(id)
    }
}
