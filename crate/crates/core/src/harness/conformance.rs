// SPDX-License-Identifier: MIT OR Apache-2.0

//! Adapter conformance fixtures. Each runs on its own connection so one
//! hanging or crashing fixture cannot take the others down.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::Serialize;

use crate::backends::{CfgSetting, ConditionSpec};
use crate::error::{FslError, Result};
use crate::protocol::client::{Connection, Endpoint};
use crate::protocol::{Frame, ECHO_CONDITION, PROTOCOL_VERSION};
use crate::schedule::StepPosition;
use crate::tensor::LatentTensor;

const PROBE_PROMPT: &str = "a conformance probe";
const UNKNOWN_CONDITION: &str = "fsl-conformance-unregistered";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceVerdict {
    pub endpoint: String,
    pub fixtures: Vec<FixtureResult>,
}

impl ConformanceVerdict {
    pub fn passed(&self) -> bool {
        self.fixtures.iter().all(|f| f.passed)
    }
}

/// Values that catch byte-order, sign-of-zero and denormal-flushing bugs.
fn awkward_values() -> Vec<f32> {
    vec![
        0.0,
        -0.0,
        f32::from_bits(1),
        -f32::from_bits(1),
        f32::from_bits(0x007f_ffff),
        f32::MIN_POSITIVE,
        f32::MAX,
        f32::MIN,
        1.0,
        -1.5,
        std::f32::consts::PI,
        1e-30,
    ]
}

fn probe_tensor(shape: Option<&[usize]>) -> LatentTensor {
    let values = awkward_values();
    let shape = shape.map_or_else(|| vec![values.len()], <[usize]>::to_vec);
    let n: usize = shape.iter().product();
    let filled = (0..n).map(|i| values[i % values.len()]).collect();
    LatentTensor::new(shape, filled).expect("awkward values are finite")
}

fn plain_tensor(shape: Option<&[usize]>) -> LatentTensor {
    let shape = shape.map_or_else(|| vec![4], <[usize]>::to_vec);
    let n: usize = shape.iter().product();
    LatentTensor::new(shape, (0..n).map(|i| (i as f32 * 0.37).sin()).collect()).expect("finite")
}

/// Byte offset of the first difference, if any.
pub fn first_difference(a: &[u8], b: &[u8]) -> Option<usize> {
    a.iter()
        .zip(b)
        .position(|(x, y)| x != y)
        .or_else(|| (a.len() != b.len()).then(|| a.len().min(b.len())))
}

type Fixture = fn(&mut Connection) -> Result<String>;

fn handshake(c: &mut Connection) -> Result<String> {
    let info = c.info();
    if info.version != PROTOCOL_VERSION {
        return Err(FslError::Protocol(format!(
            "adapter speaks `{}`",
            info.version
        )));
    }
    Ok(format!(
        "version {}, latent shape {:?}",
        info.version, info.latent_shape
    ))
}

fn registration(c: &mut Connection) -> Result<String> {
    let shape = c.info().latent_shape.clone();
    let spec = ConditionSpec::Text(PROBE_PROMPT.into());
    let id = spec.id();
    c.register(&id, &spec)?;
    let x = plain_tensor(shape.as_deref());
    let eps = c.epsilon(&x, &id, StepPosition::Sigma(1.0), CfgSetting::OFF)?;
    if !eps.is_finite() {
        return Err(FslError::Protocol("prediction is not finite".into()));
    }
    Ok(format!("prediction of shape {:?}", eps.shape()))
}

fn round_trip(c: &mut Connection) -> Result<String> {
    let shape = c.info().latent_shape.clone();
    c.register(ECHO_CONDITION, &ConditionSpec::Text(ECHO_CONDITION.into()))?;
    let x = probe_tensor(shape.as_deref());
    // Compare raw wire bytes: a corrupted echo may not even decode to finite floats.
    let reply = c.call(|request_id| Frame::Epsilon {
        request_id,
        tensor: x.to_wire(),
        condition_id: ECHO_CONDITION.to_string(),
        step: StepPosition::Sigma(1.0),
        cfg: CfgSetting::OFF,
    })?;
    let Frame::EpsilonResult { tensor, .. } = reply else {
        return Err(FslError::Protocol("expected epsilon_result".into()));
    };
    if tensor.shape != x.shape() {
        return Err(FslError::Protocol(format!(
            "echoed shape {:?}, sent {:?}",
            tensor.shape,
            x.shape()
        )));
    }
    let b = B64
        .decode(tensor.data.as_bytes())
        .map_err(|e| FslError::Protocol(format!("echoed data is not base64: {e}")))?;
    let a = x.to_le_bytes();
    match first_difference(&a, &b) {
        None => Ok(format!("{} bytes identical", a.len())),
        Some(offset) => Err(FslError::Protocol(format!(
            "first differing byte at offset {offset}"
        ))),
    }
}

fn error_propagation(c: &mut Connection) -> Result<String> {
    let shape = c.info().latent_shape.clone();
    let x = plain_tensor(shape.as_deref());
    match c.epsilon(
        &x,
        UNKNOWN_CONDITION,
        StepPosition::Sigma(1.0),
        CfgSetting::OFF,
    ) {
        Err(FslError::RemoteFailure(msg)) => {
            // the session must survive a reported error
            c.distance(&x, &x)?;
            Ok(format!("reported `{msg}` and kept serving"))
        }
        Err(e) => Err(e),
        Ok(_) => Err(FslError::Protocol("unknown condition was accepted".into())),
    }
}

fn distance_identity(c: &mut Connection) -> Result<String> {
    let shape = c.info().latent_shape.clone();
    let x = plain_tensor(shape.as_deref());
    let d = c.distance(&x, &x)?;
    if d != 0.0 {
        return Err(FslError::Protocol(format!("distance(x, x) = {d}")));
    }
    Ok("distance(x, x) = 0".into())
}

fn align_finite(c: &mut Connection) -> Result<String> {
    let shape = c.info().latent_shape.clone();
    let x = plain_tensor(shape.as_deref());
    let (score, a_max) = c.align(&x, PROBE_PROMPT)?;
    if !(a_max > 0.0) {
        return Err(FslError::Protocol(format!("a_max = {a_max}")));
    }
    Ok(format!("score {score}, a_max {a_max}"))
}

const FIXTURES: [(&str, Fixture); 6] = [
    ("handshake", handshake),
    ("condition_registration", registration),
    ("tensor_round_trip", round_trip),
    ("error_propagation", error_propagation),
    ("distance_identity", distance_identity),
    ("align_finite", align_finite),
];

/// Runs every fixture against `endpoint`; never fails as a whole.
pub fn protocol_check(endpoint: &Endpoint, timeout: Duration) -> ConformanceVerdict {
    let fixtures = FIXTURES
        .iter()
        .map(|&(name, run)| {
            let outcome = Connection::open(endpoint, timeout).and_then(|mut c| run(&mut c));
            match outcome {
                Ok(detail) => FixtureResult {
                    name,
                    passed: true,
                    detail,
                },
                Err(e) => FixtureResult {
                    name,
                    passed: false,
                    detail: e.to_string(),
                },
            }
        })
        .collect();
    ConformanceVerdict {
        endpoint: endpoint.to_string(),
        fixtures,
    }
}
