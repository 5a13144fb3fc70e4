// SPDX-License-Identifier: MIT OR Apache-2.0

//! Closed-form Gaussian backbone.
//!
//! Each condition maps to a Gaussian (or a mixture of Gaussians sharing one
//! isotropic data std `sigma_x`). The noised marginal at a level with
//! coefficients `(alpha, sigma)` is `N(alpha * m, s^2 I)` with
//! `s^2 = alpha^2 sigma_x^2 + sigma^2`, so the noise prediction is exact:
//!
//! ```text
//! eps(x) = sigma * (x - alpha * m) / s^2
//! ```
//!
//! For a mixture the component terms are weighted by their posterior
//! responsibilities. Sigma-form positions use `alpha = 1`.

use std::collections::{BTreeMap, HashMap};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::{Capabilities, ConditionSpec, Denoiser, EmbeddingVector, GuidanceRequest};
use crate::error::{FslError, Result};
use crate::guidance::cfg_combine;
use crate::schedule::{StepPosition, VpTrainSchedule};
use crate::tensor::LatentTensor;
use crate::types::ConceptTriplet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
}

/// Affine text-embedding to mean map, `m(e) = matrix * e + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineEmbedding {
    /// `dimension` rows of `embedding_dim` entries.
    pub matrix: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
    /// Text-encoder table: prompt -> embedding.
    pub texts: BTreeMap<String, Vec<f64>>,
}

impl AffineEmbedding {
    pub fn embedding_dim(&self) -> usize {
        self.matrix.first().map_or(0, Vec::len)
    }

    pub fn mean_of(&self, e: &[f64]) -> Result<Vec<f64>> {
        if e.len() != self.embedding_dim() {
            return Err(FslError::ShapeMismatch {
                left: vec![self.embedding_dim()],
                right: vec![e.len()],
            });
        }
        Ok(self
            .matrix
            .iter()
            .zip(&self.offset)
            .map(|(row, b)| b + row.iter().zip(e).map(|(a, x)| a * x).sum::<f64>())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticBackboneSpec {
    pub dimension: usize,
    /// `m0`, the mean of the base condition.
    pub base_mean: Vec<f64>,
    /// `v`, the primary concept direction; `c+ -> m0 + v`, `c- -> m0 - v`.
    pub direction: Vec<f64>,
    pub data_std: f64,
    /// Mean of the unconditional prediction used by CFG; defaults to `m0`.
    #[serde(default)]
    pub uncond_mean: Option<Vec<f64>>,
    /// Text conditions. The empty prompt is the unconditional one.
    #[serde(default)]
    pub conditions: BTreeMap<String, Vec<GaussianComponent>>,
    #[serde(default)]
    pub embedding: Option<AffineEmbedding>,
}

fn single(mean: Vec<f64>) -> Vec<GaussianComponent> {
    vec![GaussianComponent { weight: 1.0, mean }]
}

fn offset(m: &[f64], v: &[f64], sign: f64) -> Vec<f64> {
    m.iter().zip(v).map(|(a, b)| a + sign * b).collect()
}

impl AnalyticBackboneSpec {
    /// Binds the triplet prompts to `m0`, `m0 + v` and `m0 - v`.
    pub fn for_triplet(
        triplet: &ConceptTriplet,
        base_mean: Vec<f64>,
        direction: Vec<f64>,
        data_std: f64,
    ) -> Result<Self> {
        let mut spec = Self {
            dimension: base_mean.len(),
            base_mean,
            direction: direction.clone(),
            data_std,
            uncond_mean: None,
            conditions: BTreeMap::new(),
            embedding: None,
        };
        spec.add_direction(triplet, &direction)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Adds another slider direction sharing the same base.
    pub fn add_direction(&mut self, triplet: &ConceptTriplet, direction: &[f64]) -> Result<()> {
        if direction.len() != self.dimension {
            return Err(FslError::ShapeMismatch {
                left: vec![self.dimension],
                right: vec![direction.len()],
            });
        }
        let m0 = self.base_mean.clone();
        self.conditions
            .insert(triplet.base_prompt.clone(), single(m0.clone()));
        self.conditions.insert(
            triplet.positive_prompt.clone(),
            single(offset(&m0, direction, 1.0)),
        );
        self.conditions.insert(
            triplet.negative_prompt.clone(),
            single(offset(&m0, direction, -1.0)),
        );
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dimension;
        if d == 0 {
            return Err(FslError::BadConfig(
                "analytic dimension must be positive".into(),
            ));
        }
        if self.base_mean.len() != d || self.direction.len() != d {
            return Err(FslError::BadConfig(
                "base mean and direction must match the dimension".into(),
            ));
        }
        if self.direction.iter().map(|x| x * x).sum::<f64>() <= 0.0 {
            return Err(FslError::BadConfig(
                "concept direction must be non-zero".into(),
            ));
        }
        if !(self.data_std >= 0.0 && self.data_std.is_finite()) {
            return Err(FslError::BadConfig(
                "data std must be finite and >= 0".into(),
            ));
        }
        if self.uncond_mean.as_ref().is_some_and(|m| m.len() != d) {
            return Err(FslError::BadConfig(
                "uncond mean must match the dimension".into(),
            ));
        }
        for (text, comps) in &self.conditions {
            if comps.is_empty() || comps.iter().any(|c| c.mean.len() != d || !(c.weight > 0.0)) {
                return Err(FslError::BadConfig(format!(
                    "condition `{text}` has a bad mixture"
                )));
            }
        }
        if let Some(emb) = &self.embedding {
            if emb.matrix.len() != d || emb.offset.len() != d {
                return Err(FslError::BadConfig(
                    "embedding map must have one row per dimension".into(),
                ));
            }
            let k = emb.embedding_dim();
            if k == 0
                || emb.matrix.iter().any(|r| r.len() != k)
                || emb.texts.values().any(|e| e.len() != k)
            {
                return Err(FslError::BadConfig("embedding map has ragged rows".into()));
            }
        }
        Ok(())
    }

    fn components_for_text(&self, text: &str) -> Result<Vec<GaussianComponent>> {
        if let Some(c) = self.conditions.get(text) {
            return Ok(c.clone());
        }
        if text.is_empty() {
            return Ok(single(
                self.uncond_mean
                    .clone()
                    .unwrap_or_else(|| self.base_mean.clone()),
            ));
        }
        if let Some(emb) = &self.embedding {
            if let Some(e) = emb.texts.get(text) {
                return Ok(single(emb.mean_of(e)?));
            }
        }
        Err(FslError::UnknownCondition(text.to_string()))
    }
}

/// Noise prediction of a Gaussian mixture at `(alpha, sigma)`.
pub fn mixture_epsilon(
    x: &[f64],
    components: &[GaussianComponent],
    data_std: f64,
    alpha: f64,
    sigma: f64,
) -> Vec<f64> {
    let s2 = alpha * alpha * data_std * data_std + sigma * sigma;
    if let [only] = components {
        return x
            .iter()
            .zip(&only.mean)
            .map(|(xi, mi)| sigma * (xi - alpha * mi) / s2)
            .collect();
    }
    let logits: Vec<f64> = components
        .iter()
        .map(|c| {
            let sq: f64 = x
                .iter()
                .zip(&c.mean)
                .map(|(xi, mi)| (xi - alpha * mi).powi(2))
                .sum();
            c.weight.ln() - sq / (2.0 * s2)
        })
        .collect();
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut eps = vec![0.0; x.len()];
    for (c, w) in components.iter().zip(&weights) {
        let r = w / total;
        for (e, (xi, mi)) in eps.iter_mut().zip(x.iter().zip(&c.mean)) {
            *e += r * sigma * (xi - alpha * mi) / s2;
        }
    }
    eps
}

/// A denoiser whose predictions are the exact Gaussian noise predictions.
#[derive(Debug)]
pub struct AnalyticBackbone {
    spec: AnalyticBackboneSpec,
    vp: VpTrainSchedule,
    registry: RwLock<HashMap<String, Vec<GaussianComponent>>>,
    uncond: Vec<GaussianComponent>,
}

impl AnalyticBackbone {
    pub fn new(spec: AnalyticBackboneSpec) -> Result<Self> {
        spec.validate()?;
        let uncond = spec.components_for_text("")?;
        Ok(Self {
            spec,
            vp: VpTrainSchedule::default(),
            registry: RwLock::new(HashMap::new()),
            uncond,
        })
    }

    pub fn spec(&self) -> &AnalyticBackboneSpec {
        &self.spec
    }

    fn coefficients(&self, position: StepPosition) -> Result<(f64, f64)> {
        match position {
            StepPosition::Sigma(s) if s.is_finite() && s >= 0.0 => Ok((1.0, s)),
            StepPosition::Sigma(s) => Err(FslError::BadConfig(format!("invalid sigma {s}"))),
            StepPosition::Timestep(t) => self.vp.alpha_sigma(t),
        }
    }

    fn raw_epsilon(
        &self,
        x: &LatentTensor,
        components: &[GaussianComponent],
        position: StepPosition,
    ) -> Result<LatentTensor> {
        if x.len() != self.spec.dimension {
            return Err(FslError::ShapeMismatch {
                left: vec![self.spec.dimension],
                right: x.shape().to_vec(),
            });
        }
        let (alpha, sigma) = self.coefficients(position)?;
        let xs: Vec<f64> = x.values().iter().map(|&v| f64::from(v)).collect();
        let eps = mixture_epsilon(&xs, components, self.spec.data_std, alpha, sigma);
        LatentTensor::from_f64(x.shape().to_vec(), &eps)
    }

    /// Exact prediction for a text condition, without CFG.
    pub fn epsilon_for_text(
        &self,
        x: &LatentTensor,
        text: &str,
        position: StepPosition,
    ) -> Result<LatentTensor> {
        let comps = self.spec.components_for_text(text)?;
        self.raw_epsilon(x, &comps, position)
    }
}

impl Denoiser for AnalyticBackbone {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_cfg: true,
            supports_embedding_space: self.spec.embedding.is_some(),
        }
    }

    fn latent_shape(&self) -> Vec<usize> {
        vec![self.spec.dimension]
    }

    fn register_condition(&self, id: &str, spec: &ConditionSpec) -> Result<()> {
        let comps = match spec {
            ConditionSpec::Text(t) => self.spec.components_for_text(t)?,
            ConditionSpec::Embedding(e) => {
                let map = self.spec.embedding.as_ref().ok_or_else(|| {
                    FslError::Unsupported("analytic backbone has no embedding map".into())
                })?;
                single(map.mean_of(e.values())?)
            }
        };
        self.registry
            .write()
            .expect("registry lock poisoned")
            .insert(id.to_string(), comps);
        Ok(())
    }

    fn predict(&self, request: &GuidanceRequest<'_>) -> Result<LatentTensor> {
        request.validate()?;
        let comps = self
            .registry
            .read()
            .expect("registry lock poisoned")
            .get(request.condition_id)
            .cloned()
            .ok_or_else(|| FslError::UnknownCondition(request.condition_id.to_string()))?;
        let cond = self.raw_epsilon(request.latent, &comps, request.position)?;
        if !request.cfg.enabled {
            return Ok(cond);
        }
        let uncond = self.raw_epsilon(request.latent, &self.uncond, request.position)?;
        cfg_combine(&uncond, &cond, request.cfg.guidance)
    }

    fn text_embedding(&self, text: &str) -> Result<EmbeddingVector> {
        let map = self.spec.embedding.as_ref().ok_or_else(|| {
            FslError::Unsupported("analytic backbone has no embedding map".into())
        })?;
        let e = map
            .texts
            .get(text)
            .ok_or_else(|| FslError::UnknownCondition(text.to_string()))?;
        EmbeddingVector::new(e.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::CfgSetting;

    fn triplet() -> ConceptTriplet {
        ConceptTriplet::new(
            "smile",
            "a person",
            "a person, smiling",
            "a person, frowning",
        )
        .unwrap()
    }

    fn backbone(data_std: f64) -> AnalyticBackbone {
        let spec =
            AnalyticBackboneSpec::for_triplet(&triplet(), vec![0.0, 0.0], vec![1.0, 0.0], data_std)
                .unwrap();
        AnalyticBackbone::new(spec).unwrap()
    }

    fn x(v: &[f32]) -> LatentTensor {
        LatentTensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn hand_computed_positive_prediction() {
        // x=(3,0), m+=(1,0), alpha=sigma=sigma_x=1: eps = (3-1)/2 = 1
        let b = backbone(1.0);
        let eps = b
            .epsilon_for_text(
                &x(&[3.0, 0.0]),
                "a person, smiling",
                StepPosition::Sigma(1.0),
            )
            .unwrap();
        assert_eq!(eps.values(), &[1.0, 0.0]);
    }

    #[test]
    fn point_mass_data() {
        let b = backbone(0.0);
        let (alpha, sigma) = VpTrainSchedule::default().alpha_sigma(500.0).unwrap();
        let xs = [0.7f32, -1.3];
        let eps = b
            .epsilon_for_text(&x(&xs), "a person, smiling", StepPosition::Timestep(500.0))
            .unwrap();
        let mean = [1.0, 0.0];
        for i in 0..2 {
            let expect = (f64::from(xs[i]) - alpha * mean[i]) / sigma;
            assert!((f64::from(eps.values()[i]) - expect).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_at_the_mean() {
        let b = backbone(0.8);
        let eps = b
            .epsilon_for_text(
                &x(&[-1.0, 0.0]),
                "a person, frowning",
                StepPosition::Sigma(3.0),
            )
            .unwrap();
        assert_eq!(eps.values(), &[0.0, 0.0]);
    }

    #[test]
    fn unregistered_condition() {
        let b = backbone(1.0);
        let latent = x(&[0.0, 0.0]);
        let req = GuidanceRequest {
            latent: &latent,
            condition_id: "nope",
            position: StepPosition::Sigma(1.0),
            cfg: CfgSetting::OFF,
        };
        assert!(matches!(
            b.predict(&req),
            Err(FslError::UnknownCondition(_))
        ));
        assert!(b
            .register(&ConditionSpec::Text("unheard of".into()))
            .is_err());
    }

    #[test]
    fn cfg_is_a_no_op_with_default_uncond() {
        let b = backbone(1.0);
        let id = b.register(&ConditionSpec::Text("a person".into())).unwrap();
        let latent = x(&[0.4, -2.0]);
        let mk = |cfg| GuidanceRequest {
            latent: &latent,
            condition_id: &id,
            position: StepPosition::Sigma(2.0),
            cfg,
        };
        let plain = b.predict(&mk(CfgSetting::OFF)).unwrap();
        let guided = b.predict(&mk(CfgSetting::on(7.5))).unwrap();
        assert!(plain.bit_eq(&guided));
    }

    #[test]
    fn mixture_reduces_to_single_component() {
        let comps = vec![
            GaussianComponent {
                weight: 1.0,
                mean: vec![1.0, 2.0],
            },
            GaussianComponent {
                weight: 3.0,
                mean: vec![1.0, 2.0],
            },
        ];
        let xs = [0.3, -0.4];
        let a = mixture_epsilon(&xs, &comps, 0.5, 0.9, 0.4);
        let b = mixture_epsilon(&xs, &comps[..1], 0.5, 0.9, 0.4);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
