// SPDX-License-Identifier: MIT OR Apache-2.0

//! In-process mock adapter.
//!
//! Serves the analytic backbone and a fixed score table over the wire
//! protocol. Besides the conforming modes it has deliberately broken ones
//! (byte-swapped tensors, silent hangs, NaN scores) that act as negative
//! controls for the conformance checker.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::thread;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{Frame, ECHO_CONDITION, PROTOCOL_VERSION};
use crate::backends::{
    AnalyticBackbone, AnalyticBackboneSpec, Capabilities, ConditionSpec, Denoiser, EmbeddingVector,
    GuidanceRequest,
};
use crate::error::Result;
use crate::scoring::euclidean_perceptual;
use crate::tensor::{LatentTensor, WireTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MockMode {
    /// Exact Gaussian predictions from the given backbone.
    Analytic { spec: Box<AnalyticBackboneSpec> },
    /// Every epsilon request is answered with its own latent.
    Echo,
    /// Echoes with the bytes of every f32 reversed.
    ByteSwap,
    /// Never answers epsilon requests.
    Hang,
    /// Answers align requests with a literal `NaN` score.
    NanScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockAdapterConfig {
    #[serde(flatten)]
    pub mode: MockMode,
    /// Alignment returned per prompt text; unknown prompts score 0.
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
    #[serde(default = "default_a_max")]
    pub a_max: f64,
    #[serde(default)]
    pub latent_shape: Option<Vec<usize>>,
}

fn default_a_max() -> f64 {
    1.0
}

impl MockAdapterConfig {
    pub fn new(mode: MockMode) -> Self {
        Self {
            mode,
            scores: BTreeMap::new(),
            a_max: 1.0,
            latent_shape: None,
        }
    }
}

struct Session<'a> {
    cfg: &'a MockAdapterConfig,
    backbone: Option<AnalyticBackbone>,
    conditions: HashMap<String, ConditionSpec>,
}

fn swap_bytes(t: &WireTensor) -> WireTensor {
    use base64::engine::general_purpose::STANDARD as B64;
    use base64::Engine;
    let mut bytes = B64.decode(t.data.as_bytes()).unwrap_or_default();
    for chunk in bytes.chunks_exact_mut(4) {
        chunk.reverse();
    }
    WireTensor {
        shape: t.shape.clone(),
        dtype: t.dtype.clone(),
        data: B64.encode(bytes),
    }
}

impl Session<'_> {
    fn error(request_id: Option<u64>, message: impl Into<String>) -> Option<String> {
        Some(
            Frame::Error {
                request_id,
                message: message.into(),
            }
            .to_line(),
        )
    }

    /// Reply line for one incoming line; `None` means stay silent.
    fn handle(&mut self, line: &str) -> Option<String> {
        let frame = match Frame::parse(line) {
            Ok(f) => f,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("request_id").and_then(serde_json::Value::as_u64));
                return Self::error(id, e.to_string());
            }
        };
        match frame {
            Frame::Hello { version } => {
                if version != PROTOCOL_VERSION {
                    return Self::error(None, format!("unsupported version `{version}`"));
                }
                let latent_shape = self
                    .cfg
                    .latent_shape
                    .clone()
                    .or_else(|| self.backbone.as_ref().map(|b| b.latent_shape()));
                Some(
                    Frame::HelloAck {
                        version: PROTOCOL_VERSION.to_string(),
                        uncond_prompt: Some(String::new()),
                        latent_shape,
                        capabilities: Some(Capabilities {
                            supports_cfg: true,
                            supports_embedding_space: false,
                        }),
                    }
                    .to_line(),
                )
            }
            Frame::RegisterCondition {
                id,
                text,
                embedding,
            } => {
                let spec = match (text, embedding) {
                    (Some(t), None) => ConditionSpec::Text(t),
                    (None, Some(e)) => match EmbeddingVector::new(e) {
                        Ok(e) => ConditionSpec::Embedding(e),
                        Err(e) => return Self::error(None, e.to_string()),
                    },
                    _ => {
                        return Self::error(
                            None,
                            "register_condition needs exactly one of text/embedding",
                        )
                    }
                };
                if let Some(b) = &self.backbone {
                    let is_echo = matches!(&spec, ConditionSpec::Text(t) if t == ECHO_CONDITION);
                    if !is_echo {
                        if let Err(e) = b.register_condition(&id, &spec) {
                            return Self::error(None, e.to_string());
                        }
                    }
                }
                self.conditions.insert(id, spec);
                None
            }
            Frame::Epsilon {
                request_id,
                tensor,
                condition_id,
                step,
                cfg,
            } => {
                if matches!(self.cfg.mode, MockMode::Hang) {
                    return None;
                }
                let latent = match LatentTensor::from_wire(&tensor) {
                    Ok(t) => t,
                    Err(e) => return Self::error(Some(request_id), e.to_string()),
                };
                let Some(spec) = self.conditions.get(&condition_id) else {
                    return Self::error(
                        Some(request_id),
                        format!("unknown condition `{condition_id}`"),
                    );
                };
                let echo = matches!(spec, ConditionSpec::Text(t) if t == ECHO_CONDITION);
                let out = match &self.cfg.mode {
                    MockMode::ByteSwap => swap_bytes(&tensor),
                    MockMode::Echo | MockMode::NanScores => latent.to_wire(),
                    MockMode::Analytic { .. } if echo => latent.to_wire(),
                    MockMode::Analytic { .. } => {
                        let b = self
                            .backbone
                            .as_ref()
                            .expect("analytic mode has a backbone");
                        let req = GuidanceRequest {
                            latent: &latent,
                            condition_id: &condition_id,
                            position: step,
                            cfg,
                        };
                        match b.predict(&req) {
                            Ok(eps) => eps.to_wire(),
                            Err(e) => return Self::error(Some(request_id), e.to_string()),
                        }
                    }
                    MockMode::Hang => unreachable!(),
                };
                Some(
                    Frame::EpsilonResult {
                        request_id,
                        tensor: out,
                    }
                    .to_line(),
                )
            }
            Frame::Align {
                request_id,
                tensor,
                text,
                ..
            } => {
                if let Some(t) = &tensor {
                    if let Err(e) = LatentTensor::from_wire(t) {
                        return Self::error(Some(request_id), e.to_string());
                    }
                }
                if matches!(self.cfg.mode, MockMode::NanScores) {
                    return Some(format!(
                        "{{\"type\":\"align_result\",\"request_id\":{request_id},\"score\":NaN,\"a_max\":{}}}\n",
                        self.cfg.a_max
                    ));
                }
                let score = self.cfg.scores.get(&text).copied().unwrap_or(0.0);
                Some(
                    Frame::AlignResult {
                        request_id,
                        score,
                        a_max: self.cfg.a_max,
                    }
                    .to_line(),
                )
            }
            Frame::Distance {
                request_id,
                tensor_a,
                tensor_b,
            } => {
                let pair = LatentTensor::from_wire(&tensor_a)
                    .and_then(|a| Ok((a, LatentTensor::from_wire(&tensor_b)?)));
                match pair.and_then(|(a, b)| euclidean_perceptual(&a, &b)) {
                    Ok(score) => Some(Frame::DistanceResult { request_id, score }.to_line()),
                    Err(e) => Self::error(Some(request_id), e.to_string()),
                }
            }
            other => Self::error(other.request_id(), "unexpected frame type"),
        }
    }
}

/// Serves one session until the peer closes its side.
pub fn serve<R: BufRead, W: Write>(
    reader: R,
    mut writer: W,
    cfg: &MockAdapterConfig,
) -> Result<()> {
    let backbone = match &cfg.mode {
        MockMode::Analytic { spec } => Some(AnalyticBackbone::new((**spec).clone())?),
        _ => None,
    };
    let mut session = Session {
        cfg,
        backbone,
        conditions: HashMap::new(),
    };
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(reply) = session.handle(&line) {
            writer.write_all(reply.as_bytes())?;
            writer.flush()?;
        }
    }
    Ok(())
}

/// Binds `addr` and serves every accepted connection on its own thread.
/// Returns the bound address; the accept loop runs until the process exits.
pub fn spawn_tcp(addr: &str, cfg: MockAdapterConfig) -> Result<SocketAddr> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let cfg = Arc::new(cfg);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let cfg = Arc::clone(&cfg);
            thread::spawn(move || {
                let Ok(read_half) = stream.try_clone() else {
                    return;
                };
                if let Err(e) = serve(BufReader::new(read_half), stream, &cfg) {
                    warn!("mock adapter session ended: {e}");
                }
            });
        }
    });
    Ok(local)
}
