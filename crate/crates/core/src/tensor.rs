// SPDX-License-Identifier: MIT OR Apache-2.0

//! Flat row-major f32 tensors and their byte encodings.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{FslError, Result};

/// A latent (or noise prediction) of arbitrary rank.
///
/// Shapes are opaque to the math; every operation is elementwise over the
/// flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    shape: Vec<usize>,
    values: Vec<f32>,
}

impl LatentTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        Self::check_shape(&shape, values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FslError::InvalidTensor(format!(
                "element {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self { shape, values })
    }

    /// Builds a tensor without the finiteness check; used for intermediate
    /// results that are validated by the caller.
    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, values: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Self { shape, values }
    }

    fn check_shape(shape: &[usize], len: usize) -> Result<()> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(FslError::InvalidTensor(format!(
                "shape {shape:?} must be non-empty with positive extents"
            )));
        }
        let n: usize = shape.iter().product();
        if n != len {
            return Err(FslError::InvalidTensor(format!(
                "shape {shape:?} holds {n} elements but {len} were given"
            )));
        }
        Ok(())
    }

    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| v as f32).collect())
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &LatentTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(FslError::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &LatentTensor) -> bool {
        self.shape == other.shape
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Little-endian f32 payload, row-major.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes a little-endian payload. Non-finite values are rejected.
    pub fn from_le_bytes(shape: Vec<usize>, bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 4 != 0 {
            return Err(FslError::InvalidTensor(format!(
                "payload of {} bytes is not a whole number of f32 values",
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(shape, values)
    }

    /// Binary form: 8-byte little-endian element count, then the payload.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.values.len() * 4);
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.to_le_bytes());
        out
    }

    pub fn from_binary(shape: Vec<usize>, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(FslError::InvalidTensor(
                "binary tensor shorter than header".into(),
            ));
        }
        let mut header = [0u8; 8];
        header.copy_from_slice(&bytes[..8]);
        let count = u64::from_le_bytes(header) as usize;
        let payload = &bytes[8..];
        if payload.len() != count * 4 {
            return Err(FslError::InvalidTensor(format!(
                "header announces {count} values but payload has {} bytes",
                payload.len()
            )));
        }
        Self::from_le_bytes(shape, payload)
    }

    pub fn to_wire(&self) -> WireTensor {
        WireTensor {
            shape: self.shape.clone(),
            dtype: "f32le".to_string(),
            data: B64.encode(self.to_le_bytes()),
        }
    }

    pub fn from_wire(wire: &WireTensor) -> Result<Self> {
        if wire.dtype != "f32le" {
            return Err(FslError::InvalidTensor(format!(
                "unsupported dtype `{}`",
                wire.dtype
            )));
        }
        let bytes = B64
            .decode(wire.data.as_bytes())
            .map_err(|e| FslError::InvalidTensor(format!("bad base64 payload: {e}")))?;
        Self::from_le_bytes(wire.shape.clone(), &bytes)
    }

    pub(crate) fn map_with(
        &self,
        other: &LatentTensor,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<Self> {
        self.ensure_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_parts_unchecked(self.shape.clone(), values))
    }

    /// Euclidean distance over the flat buffer, accumulated in f64.
    pub fn l2_distance(&self, other: &LatentTensor) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| {
                let d = f64::from(a) - f64::from(b);
                d * d
            })
            .sum::<f64>()
            .sqrt())
    }
}

/// JSON envelope for tensors: `{"shape":[..],"dtype":"f32le","data":"<base64>"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireTensor {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub data: String,
}

impl Serialize for LatentTensor {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_wire().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LatentTensor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = WireTensor::deserialize(deserializer)?;
        LatentTensor::from_wire(&wire).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(LatentTensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(LatentTensor::new(vec![], vec![]).is_err());
        assert!(LatentTensor::new(vec![1], vec![f32::NAN]).is_err());
        assert!(LatentTensor::new(vec![1], vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn binary_form_layout() {
        let t = LatentTensor::new(vec![2], vec![1.0, -0.0]).unwrap();
        let bytes = t.to_binary();
        assert_eq!(&bytes[..8], &2u64.to_le_bytes());
        assert_eq!(&bytes[8..12], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[12..16], &(-0.0f32).to_le_bytes());
        let back = LatentTensor::from_binary(vec![2], &bytes).unwrap();
        assert!(back.bit_eq(&t));
        assert!(LatentTensor::from_binary(vec![2], &bytes[..12]).is_err());
    }

    #[test]
    fn json_envelope() {
        let t = LatentTensor::new(vec![1, 2], vec![1.5, 2.0]).unwrap();
        let json = serde_json::to_value(&t).unwrap();
        assert_eq!(json["dtype"], "f32le");
        assert_eq!(json["shape"], serde_json::json!([1, 2]));
        let back: LatentTensor = serde_json::from_value(json).unwrap();
        assert!(back.bit_eq(&t));
    }

    #[test]
    fn nan_payload_is_rejected() {
        let bytes = f32::NAN.to_le_bytes();
        assert!(LatentTensor::from_le_bytes(vec![1], &bytes).is_err());
    }
}
