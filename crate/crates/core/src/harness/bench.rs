// SPDX-License-Identifier: MIT OR Apache-2.0

//! Running a benchmark plan: sliders per concept, scored and aggregated.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plan::{BenchmarkPlan, ConceptRig, PlanRigs, RigFactory, ScaleSource};
use crate::astd::{calibrate, AstdCalibration};
use crate::error::{FslError, Result};
use crate::metrics::{
    aggregate_benchmark, combined_os, compute_report, BenchmarkAggregate, MetricConfig,
    MetricReport, OsSource,
};
use crate::sampler::run_slider_sweep;
use crate::scoring::{score_sweep, Aspect, ScoreCache, ScoreTable};
use crate::types::{validate_grid, ConceptTriplet, ScaleGrid, SliderConfig};

/// One CSV row: the metrics of one slider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliderRow {
    pub concept: String,
    pub seed: u64,
    pub cr_pos: f64,
    pub cr_neg: f64,
    pub cr: f64,
    pub csm: f64,
    pub sp: f64,
    pub delta_clip: f64,
    pub os: f64,
}

impl SliderRow {
    pub fn new(concept: &str, seed: u64, r: &MetricReport) -> Self {
        SliderRow {
            concept: concept.to_string(),
            seed,
            cr_pos: r.cr_pos,
            cr_neg: r.cr_neg,
            cr: r.cr,
            csm: r.csm,
            sp: r.sp,
            delta_clip: r.delta_clip,
            os: r.os,
        }
    }

    pub fn report(&self) -> MetricReport {
        MetricReport {
            cr_pos: self.cr_pos,
            cr_neg: self.cr_neg,
            cr: self.cr,
            csm: self.csm,
            sp: self.sp,
            delta_clip: self.delta_clip,
            os: self.os,
            aspect: Aspect::Default,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliderFailure {
    pub concept: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub concepts: Vec<String>,
    pub sliders_planned: usize,
    pub sliders_completed: usize,
    pub sliders_failed: usize,
    pub failures: Vec<SliderFailure>,
    /// `explicit` or `calibration`.
    pub scale_source: String,
    /// SHA-256 of each calibration used, by concept.
    pub calibration_hashes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub name: String,
    pub header: ReportHeader,
    pub metric_config: MetricConfig,
    pub os_source: OsSource,
    pub sliders: Vec<SliderRow>,
    pub aggregate: BenchmarkAggregate,
}

/// What gets written under `out/{concept}/{seed}/metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliderMetricsFile {
    pub concept: String,
    pub seed: u64,
    /// The values entering aggregation.
    pub report: MetricReport,
    /// One report per scorer aspect.
    pub aspects: Vec<MetricReport>,
}

/// Metrics of one slider from its per-aspect tables.
///
/// With several aspects, CR, SP and CSM come from the aspects named in
/// `source`; ΔCLIP follows CR.
pub fn slider_report(
    tables: &[ScoreTable],
    cfg: &MetricConfig,
    source: &OsSource,
) -> Result<(MetricReport, Vec<MetricReport>)> {
    let aspects = tables
        .iter()
        .map(|t| compute_report(t, cfg))
        .collect::<Result<Vec<_>>>()?;
    let primary = match aspects.as_slice() {
        [] => return Err(FslError::EmptyGroup("no score tables".into())),
        [only] => *only,
        many => {
            let pick = |a: Aspect| {
                many.iter()
                    .find(|r| r.aspect == a)
                    .ok_or_else(|| FslError::EmptyGroup(format!("{a:?}").to_lowercase()))
            };
            let cr = pick(source.cr)?;
            MetricReport {
                cr_pos: cr.cr_pos,
                cr_neg: cr.cr_neg,
                cr: cr.cr,
                csm: pick(source.csm)?.csm,
                sp: pick(source.sp)?.sp,
                delta_clip: cr.delta_clip,
                os: combined_os(many, source, cfg)?,
                aspect: Aspect::Default,
            }
        }
    };
    Ok((primary, aspects))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Scales for each concept plus calibration hashes where ASTD was used.
fn resolve_scales(
    plan: &BenchmarkPlan,
    triplets: &[ConceptTriplet],
    rigs: &[ConceptRig],
    cache: Option<&ScoreCache>,
) -> Result<(Vec<ScaleGrid>, BTreeMap<String, String>)> {
    let mut hashes = BTreeMap::new();
    let grids = match &plan.scales {
        ScaleSource::Explicit(s) => {
            let g = validate_grid(s)?;
            vec![g; triplets.len()]
        }
        ScaleSource::Calibrations { calibrations } => {
            let dir = plan.resolve(calibrations);
            let mut grids = Vec::new();
            for t in triplets {
                let path = dir.join(format!("{}.json", t.concept_name));
                let cal = AstdCalibration::load(&path).map_err(|e| {
                    FslError::BadConfig(format!(
                        "calibration for `{}` at {}: {e}",
                        t.concept_name,
                        path.display()
                    ))
                })?;
                hashes.insert(t.concept_name.clone(), cal.content_hash()?);
                grids.push(cal.grid()?);
            }
            grids
        }
        ScaleSource::Astd { astd } => {
            let out = plan.out_dir();
            let mut grids = Vec::new();
            for (t, rig) in triplets.iter().zip(rigs) {
                let (_, aligner, perceptual) = rig
                    .scorers
                    .iter()
                    .find(|(a, _, _)| *a == plan.os_source.cr)
                    .or_else(|| rig.scorers.first())
                    .ok_or_else(|| FslError::BadConfig("no scorers bound".into()))?;
                let cal = calibrate(
                    rig.denoiser.as_ref(),
                    t,
                    aligner.as_ref(),
                    perceptual.as_ref(),
                    &plan.sampler,
                    astd,
                    cache,
                )?;
                let dir = out.join(&t.concept_name);
                std::fs::create_dir_all(&dir)?;
                write_json(&dir.join("calibration.json"), &cal)?;
                hashes.insert(t.concept_name.clone(), cal.content_hash()?);
                grids.push(cal.grid()?);
            }
            grids
        }
    };
    Ok((grids, hashes))
}

struct Job<'a> {
    index: usize,
    triplet: &'a ConceptTriplet,
    seed: u64,
}

fn run_slider(
    job: &Job<'_>,
    rig: &ConceptRig,
    grid: &ScaleGrid,
    sampler: &SliderConfig,
    plan: &BenchmarkPlan,
    cache: Option<&ScoreCache>,
    out: &Path,
) -> Result<SliderMetricsFile> {
    let sweep = run_slider_sweep(rig.denoiser.as_ref(), job.triplet, grid, sampler, job.seed)?;
    let mut tables = Vec::with_capacity(rig.scorers.len());
    for (aspect, aligner, perceptual) in &rig.scorers {
        let mut t = score_sweep(&sweep, aligner.as_ref(), perceptual.as_ref(), cache)?;
        t.aspect = *aspect;
        tables.push(t);
    }
    let (report, aspects) = slider_report(&tables, &plan.metrics, &plan.os_source)?;
    let file = SliderMetricsFile {
        concept: job.triplet.concept_name.clone(),
        seed: job.seed,
        report,
        aspects,
    };
    let dir = out
        .join(&job.triplet.concept_name)
        .join(job.seed.to_string());
    std::fs::create_dir_all(&dir)?;
    write_json(&dir.join("sweep.json"), &sweep)?;
    write_json(&dir.join("scores.json"), &tables)?;
    write_json(&dir.join("metrics.json"), &file)?;
    Ok(file)
}

/// Runs `plan` with rigs from `factory`; writes per-slider files but not the summary.
pub fn run_benchmark_with(
    plan: &BenchmarkPlan,
    triplets: &[ConceptTriplet],
    factory: &dyn RigFactory,
    cache: Option<&ScoreCache>,
) -> Result<BenchmarkReport> {
    plan.validate()?;
    let workers = plan
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| FslError::BadConfig(format!("worker pool: {e}")))?;
    let out = plan.out_dir();
    std::fs::create_dir_all(&out)?;

    let rigs = triplets
        .iter()
        .map(|t| factory.rig(t))
        .collect::<Result<Vec<_>>>()?;
    let (grids, calibration_hashes) =
        pool.install(|| resolve_scales(plan, triplets, &rigs, cache))?;

    let jobs: Vec<Job> = triplets
        .iter()
        .enumerate()
        .flat_map(|(index, triplet)| {
            (0..plan.sliders_per_concept as u64).map(move |k| Job {
                index,
                triplet,
                seed: plan.base_seed.wrapping_add(k),
            })
        })
        .collect();
    let results: Vec<Result<SliderMetricsFile>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                run_slider(
                    job,
                    &rigs[job.index],
                    &grids[job.index],
                    &plan.sampler,
                    plan,
                    cache,
                    &out,
                )
            })
            .collect()
    });

    let mut sliders = Vec::new();
    let mut failures = Vec::new();
    let mut groups: BTreeMap<String, Vec<MetricReport>> = BTreeMap::new();
    for (job, result) in jobs.iter().zip(results) {
        match result {
            Ok(file) => {
                groups
                    .entry(file.concept.clone())
                    .or_default()
                    .push(file.report);
                sliders.push(SliderRow::new(&file.concept, file.seed, &file.report));
            }
            Err(e) if e.is_config_error() => return Err(e),
            Err(e) => {
                log::warn!(
                    "slider {}/{} failed: {e}",
                    job.triplet.concept_name,
                    job.seed
                );
                failures.push(SliderFailure {
                    concept: job.triplet.concept_name.clone(),
                    seed: job.seed,
                    error: e.to_string(),
                });
            }
        }
    }
    let aggregate = aggregate_benchmark(&groups, &plan.metrics)?;
    Ok(BenchmarkReport {
        name: plan.name.clone(),
        header: ReportHeader {
            concepts: triplets.iter().map(|t| t.concept_name.clone()).collect(),
            sliders_planned: jobs.len(),
            sliders_completed: sliders.len(),
            sliders_failed: failures.len(),
            failures,
            scale_source: match plan.scales {
                ScaleSource::Explicit(_) => "explicit".into(),
                _ => "calibration".into(),
            },
            calibration_hashes,
        },
        metric_config: plan.metrics,
        os_source: plan.os_source,
        sliders,
        aggregate,
    })
}

/// Runs a plan end to end and writes the summary files.
pub fn run_benchmark(plan: &BenchmarkPlan) -> Result<BenchmarkReport> {
    plan.validate()?;
    let triplets = plan.triplets()?;
    let rigs = PlanRigs::new(plan);
    let cache = ScoreCache::from_env()?;
    let report = run_benchmark_with(plan, &triplets, &rigs, Some(&cache))?;
    super::report::emit_report(&report, &plan.out_dir())?;
    Ok(report)
}
