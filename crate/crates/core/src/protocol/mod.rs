// SPDX-License-Identifier: MIT OR Apache-2.0

//! Newline-delimited JSON protocol spoken with external model adapters.
//!
//! Every frame is one JSON object on one line, discriminated by `"type"`.
//! Tensors travel as `{"shape":[..],"dtype":"f32le","data":"<base64>"}`.

pub mod client;
pub mod mock;

use serde::{Deserialize, Serialize};

use crate::backends::{Capabilities, CfgSetting};
use crate::error::{FslError, Result};
use crate::schedule::StepPosition;
use crate::tensor::WireTensor;

pub use client::{Connection, Endpoint, ProtocolClient};

pub const PROTOCOL_VERSION: &str = "fsl/1";

/// Condition text that conforming mock adapters answer with the request latent.
pub const ECHO_CONDITION: &str = "__fsl_echo__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Frame {
    Hello {
        version: String,
    },
    HelloAck {
        version: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        uncond_prompt: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        latent_shape: Option<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        capabilities: Option<Capabilities>,
    },
    RegisterCondition {
        id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        embedding: Option<Vec<f64>>,
    },
    Epsilon {
        request_id: u64,
        tensor: WireTensor,
        condition_id: String,
        step: StepPosition,
        cfg: CfgSetting,
    },
    EpsilonResult {
        request_id: u64,
        tensor: WireTensor,
    },
    Align {
        request_id: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tensor: Option<WireTensor>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sample_ref: Option<String>,
        text: String,
    },
    AlignResult {
        request_id: u64,
        score: f64,
        a_max: f64,
    },
    Distance {
        request_id: u64,
        tensor_a: WireTensor,
        tensor_b: WireTensor,
    },
    DistanceResult {
        request_id: u64,
        score: f64,
    },
    Error {
        #[serde(default)]
        request_id: Option<u64>,
        message: String,
    },
}

impl Frame {
    pub fn request_id(&self) -> Option<u64> {
        match self {
            Frame::Epsilon { request_id, .. }
            | Frame::EpsilonResult { request_id, .. }
            | Frame::Align { request_id, .. }
            | Frame::AlignResult { request_id, .. }
            | Frame::Distance { request_id, .. }
            | Frame::DistanceResult { request_id, .. } => Some(*request_id),
            Frame::Error { request_id, .. } => *request_id,
            _ => None,
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("frames always serialize");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Frame> {
        serde_json::from_str(line.trim_end())
            .map_err(|e| FslError::Protocol(format!("malformed frame: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::LatentTensor;

    #[test]
    fn epsilon_frame_layout() {
        let t = LatentTensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let f = Frame::Epsilon {
            request_id: 7,
            tensor: t.to_wire(),
            condition_id: "c".into(),
            step: StepPosition::Sigma(0.5),
            cfg: CfgSetting::on(7.5),
        };
        let v: serde_json::Value = serde_json::from_str(&f.to_line()).unwrap();
        assert_eq!(v["type"], "epsilon");
        assert_eq!(v["step"]["kind"], "sigma");
        assert_eq!(v["cfg"]["enabled"], true);
        assert_eq!(v["tensor"]["dtype"], "f32le");
        assert_eq!(Frame::parse(&f.to_line()).unwrap(), f);
    }

    #[test]
    fn nan_score_is_malformed() {
        let line = r#"{"type":"align_result","request_id":1,"score":NaN,"a_max":1.0}"#;
        assert!(matches!(Frame::parse(line), Err(FslError::Protocol(_))));
    }

    #[test]
    fn error_frame_without_id() {
        let f = Frame::parse(r#"{"type":"error","message":"boom"}"#).unwrap();
        assert_eq!(f.request_id(), None);
    }
}
