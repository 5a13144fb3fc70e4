// SPDX-License-Identifier: MIT OR Apache-2.0

//! Denoiser served by an external adapter process.

use std::sync::Arc;

use super::{Capabilities, ConditionSpec, Denoiser, GuidanceRequest};
use crate::error::{FslError, Result};
use crate::protocol::ProtocolClient;
use crate::tensor::LatentTensor;

pub struct ExternalDenoiser {
    client: Arc<ProtocolClient>,
    latent_shape: Vec<usize>,
}

impl ExternalDenoiser {
    /// Uses the adapter's announced latent shape unless `latent_shape` is given.
    pub fn new(client: Arc<ProtocolClient>, latent_shape: Option<Vec<usize>>) -> Result<Self> {
        let latent_shape = latent_shape
            .or_else(|| client.info().latent_shape.clone())
            .ok_or_else(|| {
                FslError::BadConfig(format!(
                    "adapter at {} did not announce a latent shape; pass one explicitly",
                    client.endpoint()
                ))
            })?;
        if latent_shape.is_empty() || latent_shape.contains(&0) {
            return Err(FslError::BadConfig(format!(
                "invalid latent shape {latent_shape:?}"
            )));
        }
        Ok(Self {
            client,
            latent_shape,
        })
    }

    pub fn client(&self) -> &Arc<ProtocolClient> {
        &self.client
    }
}

impl Denoiser for ExternalDenoiser {
    fn capabilities(&self) -> Capabilities {
        // No frame carries text embeddings back, so embedding mode stays local-only.
        Capabilities {
            supports_cfg: self
                .client
                .info()
                .capabilities
                .is_none_or(|c| c.supports_cfg),
            supports_embedding_space: false,
        }
    }

    fn latent_shape(&self) -> Vec<usize> {
        self.latent_shape.clone()
    }

    fn register_condition(&self, id: &str, spec: &ConditionSpec) -> Result<()> {
        self.client.register(id, spec);
        Ok(())
    }

    fn predict(&self, request: &GuidanceRequest<'_>) -> Result<LatentTensor> {
        request.validate()?;
        self.client.with_connection(|conn| {
            conn.epsilon(
                request.latent,
                request.condition_id,
                request.position,
                request.cfg,
            )
        })
    }
}
