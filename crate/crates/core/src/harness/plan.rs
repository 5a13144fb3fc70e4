// SPDX-License-Identifier: MIT OR Apache-2.0

//! Benchmark plans and the backbone/scorer bindings they name.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::concepts::{entries_to_triplets, load_concept_specs, ConceptEntry};
use crate::astd::AstdConfig;
use crate::backends::{AnalyticBackbone, AnalyticBackboneSpec, Denoiser, ExternalDenoiser};
use crate::error::{FslError, Result};
use crate::metrics::{MetricConfig, OsSource};
use crate::protocol::client::{timeout_from_env, Endpoint, ProtocolClient};
use crate::rng::{RngStream, StreamKey};
use crate::scoring::{
    AlignmentScorer, AlignmentTransform, Aspect, EuclideanPerceptual, ExternalAligner,
    ExternalPerceptual, PerceptualScorer, ProjectionAligner,
};
use crate::types::{ConceptTriplet, SliderConfig};

/// Gaussian backbone whose slider direction is derived from the concept name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticBinding {
    pub dimension: usize,
    /// `|v|`
    pub direction_norm: f64,
    pub data_std: f64,
    /// Saturate the projection score with `tanh(p / scale)`.
    pub tanh_scale: Option<f64>,
    pub a_max: f64,
}

impl Default for AnalyticBinding {
    fn default() -> Self {
        AnalyticBinding {
            dimension: 4,
            direction_norm: 0.25,
            data_std: 1.0,
            tanh_scale: None,
            a_max: 1.0,
        }
    }
}

impl AnalyticBinding {
    /// `(m0, v)` for a concept: `m0 = 0` and `v` a fixed pseudo-random direction.
    pub fn geometry(&self, triplet: &ConceptTriplet) -> (Vec<f64>, Vec<f64>) {
        let digest = Sha256::digest(triplet.concept_name.as_bytes());
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"));
        let raw = RngStream::new(seed, StreamKey::new(0, 0, 0)).gaussian(self.dimension);
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let v = raw.iter().map(|x| x / norm * self.direction_norm).collect();
        (vec![0.0; self.dimension], v)
    }

    pub fn spec(&self, triplet: &ConceptTriplet) -> Result<AnalyticBackboneSpec> {
        let (m0, v) = self.geometry(triplet);
        AnalyticBackboneSpec::for_triplet(triplet, m0, v, self.data_std)
    }

    pub fn aligner(&self, triplet: &ConceptTriplet) -> ProjectionAligner {
        let (m0, v) = self.geometry(triplet);
        let transform = match self.tanh_scale {
            Some(scale) => AlignmentTransform::Tanh { scale },
            None => AlignmentTransform::Identity,
        };
        let mut aligner = ProjectionAligner::new(triplet, m0, v.clone())
            .with_transform(transform)
            .with_a_max(self.a_max);
        // Cache keys use the scorer name, so it must pin everything that changes a score.
        let mut h = Sha256::new();
        for x in v.iter().chain([&self.a_max]) {
            h.update(x.to_le_bytes());
        }
        aligner.name = format!(
            "{}-{}",
            aligner.name,
            crate::backends::hex_prefix(&h.finalize(), 6)
        );
        aligner
    }
}

fn default_connections() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneBinding {
    Analytic(AnalyticBinding),
    External {
        /// `host:port`, `tcp:host:port` or `cmd:PATH`.
        address: String,
        #[serde(default)]
        latent_shape: Option<Vec<usize>>,
        #[serde(default = "default_connections")]
        connections: usize,
    },
}

impl Default for BackboneBinding {
    fn default() -> Self {
        BackboneBinding::Analytic(AnalyticBinding::default())
    }
}

fn analytic() -> String {
    "analytic".to_string()
}

/// An aligner and a perceptual scorer, each `analytic` or `external:ADDR`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerBinding {
    #[serde(default)]
    pub aspect: Aspect,
    #[serde(default = "analytic")]
    pub aligner: String,
    #[serde(default = "analytic")]
    pub perceptual: String,
}

impl Default for ScorerBinding {
    fn default() -> Self {
        ScorerBinding {
            aspect: Aspect::Default,
            aligner: analytic(),
            perceptual: analytic(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConceptSource {
    File(PathBuf),
    Inline(Vec<ConceptEntry>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleSource {
    Explicit(Vec<f64>),
    /// One `{concept}.json` calibration per concept in this directory.
    Calibrations {
        calibrations: PathBuf,
    },
    /// Calibrate every concept before sweeping.
    Astd {
        astd: AstdConfig,
    },
}

impl Default for ScaleSource {
    fn default() -> Self {
        ScaleSource::Explicit(vec![-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0])
    }
}

fn default_plan_name() -> String {
    "slider".to_string()
}

fn default_sliders() -> usize {
    10
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkPlan {
    /// Column header in the markdown summary.
    #[serde(default = "default_plan_name")]
    pub name: String,
    pub concepts: ConceptSource,
    #[serde(default = "default_sliders")]
    pub sliders_per_concept: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub scales: ScaleSource,
    #[serde(default)]
    pub backbone: BackboneBinding,
    /// Empty means one analytic pair.
    #[serde(default)]
    pub scorers: Vec<ScorerBinding>,
    #[serde(default)]
    pub sampler: SliderConfig,
    #[serde(default)]
    pub metrics: MetricConfig,
    #[serde(default)]
    pub os_source: OsSource,
    /// Worker threads; defaults to the number of CPUs.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl BenchmarkPlan {
    pub fn from_yaml(text: &str) -> Result<Self> {
        serde_yaml::from_str(text).map_err(|e| FslError::Parse {
            line: e.location().map_or(1, |l| l.line()),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut plan = Self::from_yaml(&std::fs::read_to_string(path)?)?;
        plan.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(plan)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out)
    }

    pub fn scorer_bindings(&self) -> Vec<ScorerBinding> {
        if self.scorers.is_empty() {
            vec![ScorerBinding::default()]
        } else {
            self.scorers.clone()
        }
    }

    pub fn triplets(&self) -> Result<Vec<ConceptTriplet>> {
        match &self.concepts {
            ConceptSource::File(p) => load_concept_specs(&self.resolve(p)),
            ConceptSource::Inline(entries) => entries_to_triplets(entries.clone()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sliders_per_concept == 0 {
            return Err(FslError::BadConfig(
                "sliders_per_concept must be at least 1".into(),
            ));
        }
        if self.workers == Some(0) {
            return Err(FslError::BadConfig("workers must be at least 1".into()));
        }
        self.sampler.validate()?;
        self.metrics.validate()?;
        let bindings = self.scorer_bindings();
        let mut aspects: Vec<Aspect> = bindings.iter().map(|b| b.aspect).collect();
        aspects.sort();
        aspects.dedup();
        if aspects.len() != bindings.len() {
            return Err(FslError::BadConfig(
                "each scorer aspect may appear once".into(),
            ));
        }
        if bindings.len() > 1 {
            for a in [self.os_source.cr, self.os_source.sp, self.os_source.csm] {
                if !aspects.contains(&a) {
                    return Err(FslError::BadConfig(format!(
                        "os_source names aspect {a:?} with no scorer"
                    )));
                }
            }
        }
        let is_analytic = matches!(self.backbone, BackboneBinding::Analytic(_));
        for b in &bindings {
            if b.aligner == "analytic" && !is_analytic {
                return Err(FslError::BadConfig(
                    "the analytic aligner needs the analytic backbone".into(),
                ));
            }
            for s in [&b.aligner, &b.perceptual] {
                if s != "analytic" && !s.starts_with("external:") {
                    return Err(FslError::BadConfig(format!("unknown scorer `{s}`")));
                }
            }
        }
        if let ScaleSource::Astd { astd } = &self.scales {
            astd.validate()?;
        }
        Ok(())
    }
}

/// Everything needed to run and score one concept.
#[derive(Clone)]
pub struct ConceptRig {
    pub denoiser: Arc<dyn Denoiser>,
    pub scorers: Vec<(Aspect, Arc<dyn AlignmentScorer>, Arc<dyn PerceptualScorer>)>,
}

/// Builds a rig per concept.
pub trait RigFactory: Sync {
    fn rig(&self, triplet: &ConceptTriplet) -> Result<ConceptRig>;
}

/// The rigs a plan describes. External clients are shared across concepts.
pub struct PlanRigs {
    backbone: BackboneBinding,
    scorers: Vec<ScorerBinding>,
    timeout: Duration,
    clients: Mutex<Vec<(String, Arc<ProtocolClient>)>>,
    external_backbone: Mutex<Option<Arc<ExternalDenoiser>>>,
}

impl PlanRigs {
    pub fn new(plan: &BenchmarkPlan) -> Self {
        PlanRigs {
            backbone: plan.backbone.clone(),
            scorers: plan.scorer_bindings(),
            timeout: timeout_from_env(),
            clients: Mutex::new(Vec::new()),
            external_backbone: Mutex::new(None),
        }
    }

    fn client(&self, address: &str, connections: usize) -> Result<Arc<ProtocolClient>> {
        let mut clients = self.clients.lock().expect("client registry poisoned");
        if let Some((_, c)) = clients.iter().find(|(a, _)| a == address) {
            return Ok(Arc::clone(c));
        }
        let c = Arc::new(ProtocolClient::connect(
            Endpoint::parse(address)?,
            self.timeout,
            connections,
        )?);
        clients.push((address.to_string(), Arc::clone(&c)));
        Ok(c)
    }
}

impl RigFactory for PlanRigs {
    fn rig(&self, triplet: &ConceptTriplet) -> Result<ConceptRig> {
        let denoiser: Arc<dyn Denoiser> = match &self.backbone {
            BackboneBinding::Analytic(a) => Arc::new(AnalyticBackbone::new(a.spec(triplet)?)?),
            BackboneBinding::External {
                address,
                latent_shape,
                connections,
            } => {
                let mut slot = self
                    .external_backbone
                    .lock()
                    .expect("backbone slot poisoned");
                if slot.is_none() {
                    let client = self.client(address, *connections)?;
                    *slot = Some(Arc::new(ExternalDenoiser::new(
                        client,
                        latent_shape.clone(),
                    )?));
                }
                slot.clone().expect("just filled")
            }
        };
        let mut scorers = Vec::with_capacity(self.scorers.len());
        for b in &self.scorers {
            let aligner: Arc<dyn AlignmentScorer> = match (b.aligner.as_str(), &self.backbone) {
                ("analytic", BackboneBinding::Analytic(a)) => Arc::new(a.aligner(triplet)),
                ("analytic", _) => {
                    return Err(FslError::BadConfig(
                        "the analytic aligner needs the analytic backbone".into(),
                    ))
                }
                (s, _) => {
                    let addr = s.trim_start_matches("external:");
                    Arc::new(ExternalAligner::new(
                        s,
                        self.client(addr, default_connections())?,
                    ))
                }
            };
            let perceptual: Arc<dyn PerceptualScorer> = match b.perceptual.as_str() {
                "analytic" => Arc::new(EuclideanPerceptual),
                s => {
                    let addr = s.trim_start_matches("external:");
                    Arc::new(ExternalPerceptual::new(
                        s,
                        self.client(addr, default_connections())?,
                    ))
                }
            };
            scorers.push((b.aspect, aligner, perceptual));
        }
        Ok(ConceptRig { denoiser, scorers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_plan_uses_defaults() {
        let plan = BenchmarkPlan::from_yaml("concepts: concepts.yaml\n").unwrap();
        assert_eq!(plan.sliders_per_concept, 10);
        assert_eq!(plan.scales, ScaleSource::default());
        assert_eq!(plan.backbone, BackboneBinding::default());
        assert_eq!(plan.scorer_bindings().len(), 1);
        plan.validate().unwrap();
    }

    #[test]
    fn plan_variants_parse() {
        let text = r#"
name: ours
concepts:
  - base: a
    positive: b
    negative: c
sliders_per_concept: 2
scales: {astd: {n_seeds: 3}}
backbone: {kind: analytic, dimension: 3, tanh_scale: 0.5}
scorers:
  - {aspect: static}
  - {aspect: dynamic, perceptual: "external:127.0.0.1:9"}
sampler: {total_steps: 20, branch_step: 5}
"#;
        let plan = BenchmarkPlan::from_yaml(text).unwrap();
        plan.validate().unwrap();
        assert!(matches!(&plan.scales, ScaleSource::Astd { astd } if astd.n_seeds == 3));
        assert_eq!(plan.triplets().unwrap()[0].concept_name, "b");
        assert_eq!(plan.sampler.total_steps, 20);

        let bad = BenchmarkPlan::from_yaml("concepts: x\nsliders_per_concept: 0\n").unwrap();
        assert!(bad.validate().is_err());
        assert!(matches!(
            BenchmarkPlan::from_yaml("concepts: x\nbogus: 1\n"),
            Err(FslError::Parse { .. })
        ));
    }

    #[test]
    fn analytic_geometry_is_stable() {
        let t = ConceptTriplet::new("age", "a", "b", "c").unwrap();
        let b = AnalyticBinding::default();
        let (m0, v) = b.geometry(&t);
        assert_eq!(m0, vec![0.0; 4]);
        assert_eq!(v, b.geometry(&t).1);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 0.25).abs() < 1e-12);
    }
}
