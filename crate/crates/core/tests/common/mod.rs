// SPDX-License-Identifier: MIT OR Apache-2.0

// Shared oracle studies for the integration tests and the acceptance target.
#![allow(dead_code)]

use fsl_core::backends::analytic::{AnalyticBackbone, AnalyticBackboneSpec};
use fsl_core::rng::{RngStream, StreamKey};
use fsl_core::sampler::{integrator_step, run_slider_sweep};
use fsl_core::schedule::{build_schedule, NoiseLevel};
use fsl_core::{
    validate_grid, ConceptTriplet, LatentTensor, SamplerKind, ScheduleKind, SliderConfig,
};

pub fn triplet(name: &str) -> ConceptTriplet {
    ConceptTriplet::new(
        name,
        format!("a photo of a {name}"),
        format!("a very {name}"),
        format!("a barely {name}"),
    )
    .unwrap()
}

pub fn gaussian_backbone(
    t: &ConceptTriplet,
    m0: &[f64],
    v: &[f64],
    sigma_x: f64,
) -> AnalyticBackbone {
    let spec = AnalyticBackboneSpec::for_triplet(t, m0.to_vec(), v.to_vec(), sigma_x).unwrap();
    AnalyticBackbone::new(spec).unwrap()
}

pub fn karras(steps: usize, sampler: SamplerKind) -> SliderConfig {
    SliderConfig {
        total_steps: steps,
        branch_step: 0,
        guidance: 1.0,
        schedule_kind: ScheduleKind::KarrasSigma,
        sampler_kind: sampler,
        sigma_min: 0.3,
        sigma_max: 500.0,
        rho: 3.0,
        s_churn: 0.0,
        ..SliderConfig::default()
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub struct HeunStudy {
    pub steps: Vec<usize>,
    pub errors: Vec<f64>,
    pub order: f64,
}

/// Heun on the exact Gaussian flow: integrate from `sigma_max` down to
/// `sigma_min` and compare with the closed-form solution
/// `x(s) - m = (x_T - m) * sqrt(sx^2 + s^2) / sqrt(sx^2 + s_T^2)`.
pub fn heun_study(steps: &[usize]) -> HeunStudy {
    let t = triplet("heun");
    let m = [0.7, -0.4, 0.2];
    let sigma_x = 1.0;
    let backbone = gaussian_backbone(&t, &m, &[0.1, 0.0, 0.0], sigma_x);
    let mut errors = Vec::new();
    for &n in steps {
        let cfg = karras(n, SamplerKind::Heun);
        let schedule = build_schedule(&cfg).unwrap();
        let denoise = |x: &LatentTensor, level: &NoiseLevel| {
            backbone.epsilon_for_text(x, &t.base_prompt, level.position)
        };
        let mut worst: f64 = 0.0;
        for seed in 0..8u64 {
            let z = RngStream::new(seed, StreamKey::initial()).gaussian(m.len());
            let start: Vec<f64> = z.iter().map(|v| v * cfg.sigma_max).collect();
            let mut x = LatentTensor::from_f64(vec![m.len()], &start).unwrap();
            let start: Vec<f64> = x.values().iter().map(|&v| f64::from(v)).collect();
            let unused = RngStream::new(seed, StreamKey::new(0, 0, 0));
            for step in 0..n - 1 {
                x = integrator_step(
                    &denoise,
                    &x,
                    step,
                    &schedule,
                    SamplerKind::Heun,
                    0.0,
                    &unused,
                )
                .unwrap();
            }
            let ratio = (sigma_x * sigma_x + cfg.sigma_min * cfg.sigma_min).sqrt()
                / (sigma_x * sigma_x + cfg.sigma_max * cfg.sigma_max).sqrt();
            for ((xi, si), mi) in x.values().iter().zip(&start).zip(&m) {
                let exact = mi + (si - mi) * ratio;
                worst = worst.max((f64::from(*xi) - exact).abs());
            }
        }
        errors.push(worst);
    }
    let lx: Vec<f64> = steps.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    HeunStudy {
        steps: steps.to_vec(),
        errors,
        order: -slope(&lx, &ly),
    }
}

pub struct MeanShiftStudy {
    pub scales: Vec<f64>,
    /// Empirical terminal mean per scale.
    pub means: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    /// `|mean - target| / max(|target|, 2|v|)` per scale.
    pub rel_errors: Vec<f64>,
    /// Slope of the displacement along `v / |v|` against the scale.
    pub slope: f64,
    pub slope_target: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Terminal means of a slider sweep on the Gaussian backbone, `seeds` seeds per scale.
pub fn mean_shift_study(
    m0: &[f64],
    v: &[f64],
    sigma_x: f64,
    scales: &[f64],
    seeds: u64,
    cfg: &SliderConfig,
) -> MeanShiftStudy {
    let t = triplet("shift");
    let backbone = gaussian_backbone(&t, m0, v, sigma_x);
    let grid = validate_grid(scales).unwrap();
    let d = m0.len();
    let mut sums = vec![vec![0.0; d]; grid.len()];
    for seed in 0..seeds {
        let sweep = run_slider_sweep(&backbone, &t, &grid, cfg, seed).unwrap();
        for (acc, s) in sums.iter_mut().zip(&sweep.samples) {
            for (a, &x) in acc.iter_mut().zip(s.latent.values()) {
                *a += f64::from(x);
            }
        }
    }
    let means: Vec<Vec<f64>> = sums
        .into_iter()
        .map(|s| s.into_iter().map(|x| x / seeds as f64).collect())
        .collect();
    let vn = norm(v);
    let floor = 2.0 * vn;
    let targets: Vec<Vec<f64>> = grid
        .scales()
        .iter()
        .map(|mu| m0.iter().zip(v).map(|(m, vi)| m + 2.0 * mu * vi).collect())
        .collect();
    let rel_errors = means
        .iter()
        .zip(&targets)
        .map(|(mean, target)| {
            let diff: Vec<f64> = mean.iter().zip(target).map(|(a, b)| a - b).collect();
            norm(&diff) / norm(target).max(floor)
        })
        .collect();
    let along: Vec<f64> = means
        .iter()
        .map(|mean| {
            mean.iter()
                .zip(m0)
                .zip(v)
                .map(|((x, m), vi)| (x - m) * vi / vn)
                .sum()
        })
        .collect();
    MeanShiftStudy {
        scales: grid.scales().to_vec(),
        slope: slope(grid.scales(), &along),
        slope_target: 2.0 * vn,
        means,
        targets,
        rel_errors,
    }
}

/// Deterministic uniforms on `[0, 1)` for randomized oracle cases.
pub struct Uniforms {
    stream: RngStream,
    counter: u64,
}

impl Uniforms {
    pub fn new(case: u32) -> Self {
        Uniforms {
            stream: RngStream::new(0xA57D, StreamKey::new(case, 0, 0)),
            counter: 0,
        }
    }

    pub fn next(&mut self) -> f64 {
        self.counter += 1;
        (self.stream.word(self.counter) >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next()
    }

    pub fn pick<T: Copy>(&mut self, items: &[T]) -> T {
        items[((self.next() * items.len() as f64) as usize).min(items.len() - 1)]
    }
}

use fsl_core::astd::{
    calibration_from_scan, saturation_scan, AstdConfig, ProbeMeasurement, ScanOutcome, D_FLOOR,
};
use fsl_core::metrics::{conceptual_smoothness, MetricConfig};
use fsl_core::scoring::{ScoreRecord, ScoreTable};

/// Random per-probe measurements on the default signed probe grid.
pub fn random_measurements(u: &mut Uniforms, scales: &[f64]) -> Vec<ProbeMeasurement> {
    scales
        .iter()
        .map(|&s| ProbeMeasurement {
            a_pos: if s >= 0.0 { u.range(0.0, 1.0) } else { 0.0 },
            a_neg: if s <= 0.0 { u.range(0.0, 1.0) } else { 0.0 },
            dist: if s == 0.0 { 0.0 } else { u.range(0.0, 1.5) },
        })
        .collect()
}

/// Largest probe magnitude with `a / max(d, floor) >= r_ref`, else the smallest one.
pub fn brute_saturation(scales: &[f64], a: &[f64], d: &[f64], r_ref: f64) -> (f64, bool) {
    let mut best: Option<f64> = None;
    let mut smallest = f64::INFINITY;
    for i in 0..scales.len() {
        let m = scales[i].abs();
        if m == 0.0 {
            continue;
        }
        smallest = smallest.min(m);
        if a[i] / d[i].max(D_FLOOR) >= r_ref && best.map_or(true, |b| m > b) {
            best = Some(m);
        }
    }
    match best {
        Some(m) => (m, false),
        None => (smallest, true),
    }
}

/// One randomized saturation case; returns whether the scan agrees with brute force.
pub fn saturation_case(case: u32) -> bool {
    let cfg = AstdConfig::default();
    let grid = cfg.probe_grid().unwrap();
    let mut u = Uniforms::new(case);
    let r_ref = u.range(0.5, 2.0);
    let m = random_measurements(&mut u, grid.scales());
    let scan = saturation_scan(&grid, &[0], r_ref, cfg.rule, |_| Ok(m.clone())).unwrap();
    [(1.0, &scan.positive), (-1.0, &scan.negative)]
        .iter()
        .all(|(sign, got)| {
            let idx: Vec<usize> = (0..grid.len())
                .filter(|&i| grid.scales()[i] * sign > 0.0)
                .collect();
            let scales: Vec<f64> = idx.iter().map(|&i| grid.scales()[i]).collect();
            let a: Vec<f64> = idx
                .iter()
                .map(|&i| if *sign > 0.0 { m[i].a_pos } else { m[i].a_neg })
                .collect();
            let d: Vec<f64> = idx.iter().map(|&i| m[i].dist).collect();
            let (mag, fallback) = brute_saturation(&scales, &a, &d, r_ref);
            got.saturation.magnitude == mag && got.saturation.fallback == fallback
        })
}

/// A strictly concave or convex increasing alignment curve on `[0, 16]`.
#[derive(Debug, Clone, Copy)]
pub enum Curve {
    Concave { amp: f64, tau: f64 },
    Convex { amp: f64, power: f64 },
}

impl Curve {
    pub fn random(u: &mut Uniforms, sat: f64) -> Self {
        if u.next() < 0.5 {
            Curve::Concave {
                amp: u.range(0.3, 1.0),
                tau: sat * u.range(0.2, 2.0),
            }
        } else {
            Curve::Convex {
                amp: u.range(0.3, 1.0),
                power: u.range(1.3, 3.0),
            }
        }
    }

    pub fn eval(self, eta: f64) -> f64 {
        match self {
            Curve::Concave { amp, tau } => amp * (1.0 - (-eta / tau).exp()),
            Curve::Convex { amp, power } => amp * (eta / 16.0).powf(power),
        }
    }
}

pub struct ImprovementCase {
    pub curves: (Curve, Curve),
    pub saturation: (f64, f64),
    pub astd_grid: Vec<f64>,
    pub default_grid: Vec<f64>,
    pub csm_astd: f64,
    pub csm_default: f64,
}

/// The integer grid `[-3..3]` stretched so that -3 and 3 land on the span ends.
pub fn default_grid_on_span(neg: f64, pos: f64) -> Vec<f64> {
    (-3..=3)
        .map(|k| {
            let k = f64::from(k);
            if k < 0.0 {
                k * neg / 3.0
            } else {
                k * pos / 3.0
            }
        })
        .collect()
}

fn synthetic_table(scales: &[f64], pos: Curve, neg: Curve) -> ScoreTable {
    ScoreTable {
        records: scales
            .iter()
            .map(|&s| ScoreRecord {
                scale: s,
                a_pos: if s >= 0.0 { pos.eval(s) } else { 0.0 },
                a_neg: if s <= 0.0 { neg.eval(-s) } else { 0.0 },
                dist: s.abs() * 0.01,
            })
            .collect(),
        aligner: "synthetic".into(),
        perceptual: "synthetic".into(),
        a_max: 1.0,
        aspect: Default::default(),
    }
}

/// Calibrates a random pair of curves and scores both grids with CSM.
///
/// Distances are shaped so that the ratio sits at 2 up to a chosen probe and at
/// 0.5 beyond it, which places saturation there.
pub fn improvement_case(case: u32) -> ImprovementCase {
    let cfg = AstdConfig::default();
    let grid = cfg.probe_grid().unwrap();
    let mut u = Uniforms::new(10_000 + case);
    let sat_pos = u.pick(&[1.0, 2.0, 4.0, 8.0, 16.0]);
    let sat_neg = u.pick(&[1.0, 2.0, 4.0, 8.0, 16.0]);
    let pos = Curve::random(&mut u, sat_pos);
    let neg = Curve::random(&mut u, sat_neg);
    let shaped = |a: f64, m: f64, sat: f64| if m <= sat { a / 2.0 } else { a * 2.0 };
    let m: Vec<ProbeMeasurement> = grid
        .scales()
        .iter()
        .map(|&s| {
            let (a, sat) = if s >= 0.0 {
                (pos.eval(s), sat_pos)
            } else {
                (neg.eval(-s), sat_neg)
            };
            ProbeMeasurement {
                a_pos: if s >= 0.0 { a } else { 0.0 },
                a_neg: if s <= 0.0 { a } else { 0.0 },
                dist: if s == 0.0 {
                    0.0
                } else {
                    shaped(a, s.abs(), sat)
                },
            }
        })
        .collect();
    let scan: ScanOutcome =
        saturation_scan(&grid, &[0], cfg.r_ref, cfg.rule, |_| Ok(m.clone())).unwrap();
    let cal = calibration_from_scan("synthetic", &scan, &cfg).unwrap();
    let default_grid = default_grid_on_span(cal.saturation_neg, cal.saturation_pos);
    let metric = MetricConfig::default();
    ImprovementCase {
        curves: (pos, neg),
        saturation: (cal.saturation_pos, cal.saturation_neg),
        csm_astd: conceptual_smoothness(&synthetic_table(&cal.resampled_scales, pos, neg), &metric)
            .unwrap(),
        csm_default: conceptual_smoothness(&synthetic_table(&default_grid, pos, neg), &metric)
            .unwrap(),
        astd_grid: cal.resampled_scales,
        default_grid,
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fsl_core::harness::{run_benchmark, BenchmarkPlan, BenchmarkReport};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// The analytic benchmark over the image concept set with the default 7-point grid.
pub fn image_plan(out: &Path, sliders: usize, workers: usize) -> BenchmarkPlan {
    let text = format!(
        "name: analytic\nconcepts: {}\nsliders_per_concept: {sliders}\nworkers: {workers}\nout: {}\n",
        fixture("image_concepts.yaml").display(),
        out.display()
    );
    BenchmarkPlan::from_yaml(&text).unwrap()
}

pub fn run_plan(plan: &BenchmarkPlan) -> BenchmarkReport {
    run_benchmark(plan).unwrap()
}

/// Every file below `dir`, keyed by relative path.
pub fn tree_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
