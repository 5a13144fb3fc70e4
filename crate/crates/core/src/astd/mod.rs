// SPDX-License-Identifier: MIT OR Apache-2.0

//! Automatic saturation and traversal detection.
//!
//! A probe sweep measures, per scale, how much the target prompt is expressed
//! (`a`) against how far the sample drifted from neutral (`d`). The largest
//! scale whose ratio `a / d` still clears `r_ref` marks saturation. The
//! alignment curve up to that point is then fitted monotonically and inverted
//! so that output scales advance alignment in equal steps.

mod fit;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use fit::{
    fit_monotone_reparam, isotonic, resample_scales, CurveKind, Direction, MonotoneCurve,
    CHECK_POINTS,
};

use crate::backends::Denoiser;
use crate::error::{FslError, Result};
use crate::sampler::run_slider_sweep;
use crate::scoring::{score_sweep, AlignmentScorer, PerceptualScorer, ScoreCache};
use crate::types::{validate_grid, ConceptTriplet, ScaleGrid, SliderConfig};

/// Distances below this are treated as this, so `r` stays finite near 0.
pub const D_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioSample {
    pub scale: f64,
    pub alignment: f64,
    pub distance: f64,
    pub ratio: f64,
}

impl RatioSample {
    pub fn new(scale: f64, alignment: f64, distance: f64) -> Self {
        RatioSample {
            scale,
            alignment,
            distance,
            ratio: alignment / distance.max(D_FLOOR),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaturationRule {
    /// Largest probe anywhere with `r >= r_ref`.
    #[default]
    Global,
    /// Largest probe reached from 0 without dropping below `r_ref`.
    Contiguous,
}

/// Saturation of one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Saturation {
    /// Scale magnitude.
    pub magnitude: f64,
    /// No probe reached `r_ref`; `magnitude` is the smallest nonzero probe.
    pub fallback: bool,
}

/// Picks the saturation magnitude from samples of one direction.
///
/// Samples may come in any order and may include `eta = 0`, which is never a
/// candidate.
pub fn find_saturation(
    samples: &[RatioSample],
    r_ref: f64,
    rule: SaturationRule,
) -> Result<Saturation> {
    let mut probes: Vec<&RatioSample> = samples.iter().filter(|s| s.scale != 0.0).collect();
    if probes.is_empty() {
        return Err(FslError::DegenerateGrid("no nonzero probe scale".into()));
    }
    probes.sort_by(|a, b| a.scale.abs().total_cmp(&b.scale.abs()));
    let hit = match rule {
        SaturationRule::Global => probes.iter().rev().find(|s| s.ratio >= r_ref),
        SaturationRule::Contiguous => probes.iter().take_while(|s| s.ratio >= r_ref).last(),
    };
    Ok(match hit {
        Some(s) => Saturation {
            magnitude: s.scale.abs(),
            fallback: false,
        },
        None => Saturation {
            magnitude: probes[0].scale.abs(),
            fallback: true,
        },
    })
}

/// Alignment (toward the direction's own prompt) and distance of one probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeMeasurement {
    pub a_pos: f64,
    pub a_neg: f64,
    pub dist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionScan {
    pub saturation: Saturation,
    /// Seed-averaged samples ordered by magnitude, starting at `eta = 0`.
    pub samples: Vec<RatioSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanOutcome {
    pub positive: DirectionScan,
    pub negative: DirectionScan,
}

impl ScanOutcome {
    pub fn direction(&self, d: Direction) -> &DirectionScan {
        match d {
            Direction::Positive => &self.positive,
            Direction::Negative => &self.negative,
        }
    }
}

/// Averages per-seed measurements and locates saturation in both directions.
///
/// `evaluate(seed)` returns one measurement per scale of `probe`, in grid
/// order. Seeds are evaluated in parallel; the reduction is in seed order.
pub fn saturation_scan<F>(
    probe: &ScaleGrid,
    seeds: &[u64],
    r_ref: f64,
    rule: SaturationRule,
    evaluate: F,
) -> Result<ScanOutcome>
where
    F: Fn(u64) -> Result<Vec<ProbeMeasurement>> + Sync,
{
    if seeds.is_empty() {
        return Err(FslError::BadConfig(
            "saturation scan needs at least one seed".into(),
        ));
    }
    let scales = probe.scales();
    for d in [Direction::Positive, Direction::Negative] {
        let n = scales.iter().filter(|&&s| s * d.sign() > 0.0).count();
        if n < 2 {
            return Err(FslError::DegenerateGrid(format!(
                "probe grid needs two {} scales, has {n}",
                d.label()
            )));
        }
    }
    let per_seed = seeds
        .par_iter()
        .map(|&s| evaluate(s))
        .collect::<Result<Vec<_>>>()?;
    for m in &per_seed {
        if m.len() != scales.len() {
            return Err(FslError::BadConfig(format!(
                "evaluator returned {} measurements for {} probe scales",
                m.len(),
                scales.len()
            )));
        }
    }
    let n = seeds.len() as f64;
    let scan = |d: Direction| -> Result<DirectionScan> {
        let mut samples: Vec<RatioSample> = scales
            .iter()
            .enumerate()
            .filter(|(_, &s)| s * d.sign() >= 0.0)
            .map(|(i, &s)| {
                let pick = |m: &ProbeMeasurement| match d {
                    Direction::Positive => m.a_pos,
                    Direction::Negative => m.a_neg,
                };
                let a = per_seed.iter().map(|m| pick(&m[i])).sum::<f64>() / n;
                let dist = per_seed.iter().map(|m| m[i].dist).sum::<f64>() / n;
                RatioSample::new(s, a, dist)
            })
            .collect();
        samples.sort_by(|a, b| a.scale.abs().total_cmp(&b.scale.abs()));
        let saturation = find_saturation(&samples, r_ref, rule)?;
        if saturation.fallback {
            log::warn!(
                "no {} probe reached r_ref = {r_ref}; using {}",
                d.label(),
                saturation.magnitude
            );
        }
        Ok(DirectionScan {
            saturation,
            samples,
        })
    };
    Ok(ScanOutcome {
        positive: scan(Direction::Positive)?,
        negative: scan(Direction::Negative)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AstdConfig {
    /// Probe magnitudes; mirrored to negative scales.
    pub probe: Vec<f64>,
    pub r_ref: f64,
    pub n_seeds: usize,
    pub base_seed: u64,
    /// Size of the merged output grid target; each direction gets `ceil(n_out / 2)` points including 0.
    pub n_out: usize,
    pub rule: SaturationRule,
}

impl Default for AstdConfig {
    fn default() -> Self {
        AstdConfig {
            probe: vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0],
            r_ref: 1.0,
            n_seeds: 30,
            base_seed: 0,
            n_out: 7,
            rule: SaturationRule::Global,
        }
    }
}

impl AstdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 {
            return Err(FslError::BadConfig("n_seeds must be at least 1".into()));
        }
        if self.n_out < 2 {
            return Err(FslError::BadConfig(format!(
                "n_out must be at least 2, got {}",
                self.n_out
            )));
        }
        if !self.r_ref.is_finite() && self.r_ref != f64::INFINITY {
            return Err(FslError::BadConfig(format!("invalid r_ref {}", self.r_ref)));
        }
        if self.probe.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(FslError::BadConfig(
                "probe magnitudes must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// The signed probe grid, e.g. 13 scales for the default magnitudes.
    pub fn probe_grid(&self) -> Result<ScaleGrid> {
        let signed: Vec<f64> = self.probe.iter().flat_map(|&p| [p, -p]).collect();
        validate_grid(&signed)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64)
            .map(|i| self.base_seed.wrapping_add(i))
            .collect()
    }

    /// Samples generated by [`calibrate`]: one per probe scale per seed.
    pub fn generation_count(&self) -> Result<usize> {
        Ok(self.probe_grid()?.len() * self.n_seeds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerDirection<T> {
    pub positive: T,
    pub negative: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AstdCalibration {
    pub concept: String,
    /// Saturation magnitudes.
    pub saturation_pos: f64,
    pub saturation_neg: f64,
    pub probe_samples: PerDirection<Vec<RatioSample>>,
    /// `None` where too few probes lie inside the saturation range to fit.
    pub curve: PerDirection<Option<MonotoneCurve>>,
    pub resampled_scales: Vec<f64>,
    pub r_ref: f64,
    pub n_seeds: usize,
    pub generations: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl AstdCalibration {
    pub fn grid(&self) -> Result<ScaleGrid> {
        validate_grid(&self.resampled_scales)
    }

    /// Hex SHA-256 of the JSON form; recorded next to results that used it.
    pub fn content_hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self)?;
        Ok(crate::backends::hex_prefix(&Sha256::digest(&json), 32))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Fits and resamples one direction; returns magnitudes starting at 0.
fn calibrate_direction(
    scan: &DirectionScan,
    per_direction: usize,
    direction: Direction,
    warnings: &mut Vec<String>,
) -> Result<(Option<MonotoneCurve>, Vec<f64>)> {
    let sat = scan.saturation.magnitude;
    if scan.saturation.fallback {
        warnings.push(format!(
            "{}: no probe reached r_ref; saturation set to {sat}",
            direction.label()
        ));
    }
    let points: Vec<(f64, f64)> = scan
        .samples
        .iter()
        .filter(|s| s.scale.abs() <= sat)
        .map(|s| (s.scale.abs(), s.alignment))
        .collect();
    if points.len() < 3 {
        warnings.push(format!(
            "{}: only {} probes up to saturation; spacing linearly",
            direction.label(),
            points.len()
        ));
        let n = per_direction.max(2);
        return Ok((
            None,
            (0..n).map(|i| sat * i as f64 / (n - 1) as f64).collect(),
        ));
    }
    let curve = fit_monotone_reparam(&points, direction)?;
    let scales = resample_scales(&curve, per_direction.max(2))?;
    Ok((Some(curve), scales))
}

/// Turns a scan into a calibration. Split out so synthetic scans can be calibrated directly.
pub fn calibration_from_scan(
    concept: &str,
    scan: &ScanOutcome,
    cfg: &AstdConfig,
) -> Result<AstdCalibration> {
    let per_direction = cfg.n_out.div_ceil(2);
    let mut warnings = Vec::new();
    let mut run = |d: Direction| {
        calibrate_direction(scan.direction(d), per_direction, d, &mut warnings).map_err(|e| {
            FslError::InDirection {
                direction: d.label(),
                source: Box::new(e),
            }
        })
    };
    let (curve_pos, pos) = run(Direction::Positive)?;
    let (curve_neg, neg) = run(Direction::Negative)?;
    let mut merged: Vec<f64> = neg
        .iter()
        .rev()
        .map(|m| -m)
        .chain(pos.iter().copied())
        .collect();
    merged.sort_by(f64::total_cmp);
    merged.dedup();
    let grid = validate_grid(&merged)?;
    Ok(AstdCalibration {
        concept: concept.to_string(),
        saturation_pos: scan.positive.saturation.magnitude,
        saturation_neg: scan.negative.saturation.magnitude,
        probe_samples: PerDirection {
            positive: scan.positive.samples.clone(),
            negative: scan.negative.samples.clone(),
        },
        curve: PerDirection {
            positive: curve_pos,
            negative: curve_neg,
        },
        resampled_scales: grid.scales().to_vec(),
        r_ref: cfg.r_ref,
        n_seeds: cfg.n_seeds,
        generations: cfg.generation_count()?,
        warnings,
    })
}

/// Probes a concept over `cfg.probe` and returns a calibrated scale grid.
///
/// Each seed runs one sweep over the whole signed probe grid, so the neutral
/// prefix is shared by all probes of that seed.
pub fn calibrate(
    denoiser: &dyn Denoiser,
    triplet: &ConceptTriplet,
    aligner: &dyn AlignmentScorer,
    perceptual: &dyn PerceptualScorer,
    slider: &SliderConfig,
    cfg: &AstdConfig,
    cache: Option<&ScoreCache>,
) -> Result<AstdCalibration> {
    cfg.validate()?;
    let grid = cfg.probe_grid()?;
    let scan = saturation_scan(&grid, &cfg.seeds(), cfg.r_ref, cfg.rule, |seed| {
        let sweep = run_slider_sweep(denoiser, triplet, &grid, slider, seed)?;
        let table = score_sweep(&sweep, aligner, perceptual, cache)?;
        Ok(table
            .records
            .iter()
            .map(|r| ProbeMeasurement {
                a_pos: r.a_pos,
                a_neg: r.a_neg,
                dist: r.dist,
            })
            .collect())
    })?;
    calibration_from_scan(&triplet.concept_name, &scan, cfg)
}
