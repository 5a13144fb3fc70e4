// SPDX-License-Identifier: MIT OR Apache-2.0

//! Slider-quality metrics computed from a [`ScoreTable`].
//!
//! * SP: mean perceptual distance of the non-neutral samples to the neutral one.
//! * CR: alignment gained between the two ends of the grid, per prompt.
//! * CSM: spread of the alignment increments along each half of the slider.
//! * ΔCLIP: mean absolute change of positive alignment away from the neutral.
//! * OS: `cr / (eps + sp) + (1 - csm)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{FslError, Result};
use crate::scoring::{Aspect, ScoreRecord, ScoreTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapPooling {
    /// One std over the gaps of both halves together.
    #[default]
    Pooled,
    /// Std of each half, averaged.
    PerSubsetMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdKind {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub os_epsilon: f64,
    pub csm_gap_pooling: GapPooling,
    /// Whether the neutral sample anchors both halves of the slider.
    pub include_zero_in_subsets: bool,
    pub std_kind: StdKind,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            os_epsilon: 1.0,
            csm_gap_pooling: GapPooling::Pooled,
            include_zero_in_subsets: true,
            std_kind: StdKind::Population,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.os_epsilon > 0.0 && self.os_epsilon.is_finite()) {
            return Err(FslError::BadConfig(format!(
                "os_epsilon must be positive, got {}",
                self.os_epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cr_pos: f64,
    pub cr_neg: f64,
    pub cr: f64,
    pub csm: f64,
    pub sp: f64,
    pub delta_clip: f64,
    pub os: f64,
    #[serde(default)]
    pub aspect: Aspect,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard deviation; a single value has spread 0 under either convention.
pub fn std_dev(values: &[f64], kind: StdKind) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    let denom = match kind {
        StdKind::Population => n as f64,
        StdKind::Sample => (n - 1) as f64,
    };
    (ss / denom).sqrt()
}

fn nonzero(table: &ScoreTable) -> Result<Vec<&ScoreRecord>> {
    let rows: Vec<_> = table.records.iter().filter(|r| r.scale != 0.0).collect();
    if rows.is_empty() {
        return Err(FslError::DegenerateGrid("no nonzero scale".into()));
    }
    Ok(rows)
}

/// SP: mean `d(x_eta, x_0)` over the nonzero scales.
pub fn semantic_preservation(table: &ScoreTable) -> Result<f64> {
    let d: Vec<f64> = nonzero(table)?.iter().map(|r| r.dist).collect();
    Ok(mean(&d))
}

/// CR as `(cr_pos, cr_neg, cr)`.
pub fn conceptual_range(table: &ScoreTable) -> Result<(f64, f64, f64)> {
    let by_scale = |a: &&ScoreRecord, b: &&ScoreRecord| a.scale.total_cmp(&b.scale);
    let lo = table.records.iter().min_by(by_scale);
    let hi = table.records.iter().max_by(by_scale);
    let (lo, hi) = match (lo, hi) {
        (Some(lo), Some(hi)) if lo.scale < hi.scale => (lo, hi),
        _ => return Err(FslError::DegenerateGrid("need two distinct scales".into())),
    };
    let cr_pos = hi.a_pos - lo.a_pos;
    let cr_neg = lo.a_neg - hi.a_neg;
    Ok((cr_pos, cr_neg, 0.5 * (cr_pos + cr_neg)))
}

fn gaps(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] - w[0]).collect()
}

/// CSM: std of consecutive normalized alignment gaps along both halves.
///
/// The positive half walks `eta >= 0` upward scoring against `c+`; the
/// negative half walks `eta <= 0` downward scoring against `c-`.
pub fn conceptual_smoothness(table: &ScoreTable, cfg: &MetricConfig) -> Result<f64> {
    if !(table.a_max > 0.0 && table.a_max.is_finite()) {
        return Err(FslError::DegenerateGrid(format!(
            "a_max must be positive, got {}",
            table.a_max
        )));
    }
    let norm = |a: f64| (a / table.a_max).max(0.0);
    let keep_zero = cfg.include_zero_in_subsets;
    let mut pos: Vec<&ScoreRecord> = table
        .records
        .iter()
        .filter(|r| r.scale > 0.0 || (keep_zero && r.scale == 0.0))
        .collect();
    pos.sort_by(|a, b| a.scale.total_cmp(&b.scale));
    let mut neg: Vec<&ScoreRecord> = table
        .records
        .iter()
        .filter(|r| r.scale < 0.0 || (keep_zero && r.scale == 0.0))
        .collect();
    neg.sort_by(|a, b| b.scale.total_cmp(&a.scale));
    if pos.len() < 2 || neg.len() < 2 {
        return Err(FslError::DegenerateGrid(format!(
            "each half needs two points, got {} positive and {} negative",
            pos.len(),
            neg.len()
        )));
    }
    let pos_gaps = gaps(&pos.iter().map(|r| norm(r.a_pos)).collect::<Vec<_>>());
    let neg_gaps = gaps(&neg.iter().map(|r| norm(r.a_neg)).collect::<Vec<_>>());
    Ok(match cfg.csm_gap_pooling {
        GapPooling::Pooled => {
            let all: Vec<f64> = pos_gaps.iter().chain(&neg_gaps).copied().collect();
            std_dev(&all, cfg.std_kind)
        }
        GapPooling::PerSubsetMean => {
            0.5 * (std_dev(&pos_gaps, cfg.std_kind) + std_dev(&neg_gaps, cfg.std_kind))
        }
    })
}

/// ΔCLIP: mean `|a(x_eta, c+) - a(x_0, c+)|` over the nonzero scales.
pub fn delta_clip(table: &ScoreTable) -> Result<f64> {
    let base = table
        .neutral()
        .ok_or_else(|| FslError::DegenerateGrid("no neutral record".into()))?
        .a_pos;
    let deltas: Vec<f64> = nonzero(table)?
        .iter()
        .map(|r| (r.a_pos - base).abs())
        .collect();
    Ok(mean(&deltas))
}

pub fn overall_score(cr: f64, sp: f64, csm: f64, cfg: &MetricConfig) -> f64 {
    cr / (cfg.os_epsilon + sp) + (1.0 - csm)
}

/// All metrics of one slider.
pub fn compute_report(table: &ScoreTable, cfg: &MetricConfig) -> Result<MetricReport> {
    cfg.validate()?;
    let (cr_pos, cr_neg, cr) = conceptual_range(table)?;
    let csm = conceptual_smoothness(table, cfg)?;
    let sp = semantic_preservation(table)?;
    let delta_clip = delta_clip(table)?;
    Ok(MetricReport {
        cr_pos,
        cr_neg,
        cr,
        csm,
        sp,
        delta_clip,
        os: overall_score(cr, sp, csm, cfg),
        aspect: table.aspect,
    })
}

/// Which aspect supplies each OS input when a sample is scored more than once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OsSource {
    pub cr: Aspect,
    pub sp: Aspect,
    pub csm: Aspect,
}

impl Default for OsSource {
    fn default() -> Self {
        OsSource {
            cr: Aspect::Static,
            sp: Aspect::Static,
            csm: Aspect::Static,
        }
    }
}

/// OS from per-aspect reports of the same slider.
pub fn combined_os(reports: &[MetricReport], source: &OsSource, cfg: &MetricConfig) -> Result<f64> {
    let pick = |aspect: Aspect| {
        reports
            .iter()
            .find(|r| r.aspect == aspect)
            .ok_or_else(|| FslError::EmptyGroup(format!("{aspect:?}").to_lowercase()))
    };
    Ok(overall_score(
        pick(source.cr)?.cr,
        pick(source.sp)?.sp,
        pick(source.csm)?.csm,
        cfg,
    ))
}

/// Per-metric values without an aspect tag.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub cr_pos: f64,
    pub cr_neg: f64,
    pub cr: f64,
    pub csm: f64,
    pub sp: f64,
    pub delta_clip: f64,
    pub os: f64,
}

impl MetricSummary {
    fn columns(&self) -> [f64; 6] {
        [
            self.cr_pos,
            self.cr_neg,
            self.cr,
            self.csm,
            self.sp,
            self.delta_clip,
        ]
    }

    fn from_columns(c: [f64; 6], os: f64) -> Self {
        MetricSummary {
            cr_pos: c[0],
            cr_neg: c[1],
            cr: c[2],
            csm: c[3],
            sp: c[4],
            delta_clip: c[5],
            os,
        }
    }
}

impl From<&MetricReport> for MetricSummary {
    fn from(r: &MetricReport) -> Self {
        MetricSummary {
            cr_pos: r.cr_pos,
            cr_neg: r.cr_neg,
            cr: r.cr,
            csm: r.csm,
            sp: r.sp,
            delta_clip: r.delta_clip,
            os: r.os,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkAggregate {
    /// Mean over the sliders of each concept; OS from those means.
    pub per_concept: BTreeMap<String, MetricSummary>,
    /// Unweighted mean over concepts; OS from the mean CR, SP and CSM.
    pub mean: MetricSummary,
    /// Spread over concepts of each per-concept value.
    pub std: MetricSummary,
}

/// Averages within each concept, then across concepts with equal weight.
pub fn aggregate_benchmark(
    groups: &BTreeMap<String, Vec<MetricReport>>,
    cfg: &MetricConfig,
) -> Result<BenchmarkAggregate> {
    cfg.validate()?;
    if groups.is_empty() {
        return Err(FslError::EmptyGroup("no concepts".into()));
    }
    let mut per_concept = BTreeMap::new();
    for (name, reports) in groups {
        if reports.is_empty() {
            return Err(FslError::EmptyGroup(name.clone()));
        }
        let mut cols = [0.0; 6];
        for (i, c) in cols.iter_mut().enumerate() {
            let vals: Vec<f64> = reports
                .iter()
                .map(|r| MetricSummary::from(r).columns()[i])
                .collect();
            *c = mean(&vals);
        }
        let os = overall_score(cols[2], cols[4], cols[3], cfg);
        per_concept.insert(name.clone(), MetricSummary::from_columns(cols, os));
    }
    let concepts: Vec<&MetricSummary> = per_concept.values().collect();
    let mut means = [0.0; 6];
    let mut stds = [0.0; 6];
    for i in 0..6 {
        let vals: Vec<f64> = concepts.iter().map(|s| s.columns()[i]).collect();
        means[i] = mean(&vals);
        stds[i] = std_dev(&vals, cfg.std_kind);
    }
    let os_vals: Vec<f64> = concepts.iter().map(|s| s.os).collect();
    Ok(BenchmarkAggregate {
        mean: MetricSummary::from_columns(means, overall_score(means[2], means[4], means[3], cfg)),
        std: MetricSummary::from_columns(stds, std_dev(&os_vals, cfg.std_kind)),
        per_concept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn table(rows: &[(f64, f64, f64, f64)]) -> ScoreTable {
        ScoreTable {
            records: rows
                .iter()
                .map(|&(scale, a_pos, a_neg, dist)| ScoreRecord {
                    scale,
                    a_pos,
                    a_neg,
                    dist,
                })
                .collect(),
            aligner: "test".into(),
            perceptual: "test".into(),
            a_max: 1.0,
            aspect: Aspect::Default,
        }
    }

    #[test]
    fn sp_examples() {
        let t = table(&[
            (-1.0, 0.0, 0.0, 0.3),
            (0.0, 0.0, 0.0, 0.0),
            (1.0, 0.0, 0.0, 0.1),
        ]);
        assert_abs_diff_eq!(semantic_preservation(&t).unwrap(), 0.2, epsilon = 1e-12);
        let t = table(&[
            (-2.0, 0.0, 0.0, 0.4),
            (-1.0, 0.0, 0.0, 0.2),
            (0.0, 0.0, 0.0, 0.0),
            (1.0, 0.0, 0.0, 0.1),
            (2.0, 0.0, 0.0, 0.3),
        ]);
        assert_abs_diff_eq!(semantic_preservation(&t).unwrap(), 0.25, epsilon = 1e-12);
        let only_zero = table(&[(0.0, 0.1, 0.1, 0.0)]);
        assert!(matches!(
            semantic_preservation(&only_zero),
            Err(FslError::DegenerateGrid(_))
        ));
    }

    #[test]
    fn cr_examples() {
        let t = table(&[
            (-1.0, 0.2, 0.5, 0.0),
            (0.0, 0.4, 0.3, 0.0),
            (1.0, 0.6, 0.1, 0.0),
        ]);
        let (p, n, c) = conceptual_range(&t).unwrap();
        assert_abs_diff_eq!(p, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(n, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(c, 0.4, epsilon = 1e-12);
        let flat = table(&[
            (-1.0, 0.3, 0.3, 0.0),
            (0.0, 0.3, 0.3, 0.0),
            (1.0, 0.3, 0.3, 0.0),
        ]);
        assert_eq!(conceptual_range(&flat).unwrap(), (0.0, 0.0, 0.0));
        assert!(conceptual_range(&table(&[(0.0, 0.0, 0.0, 0.0)])).is_err());
    }

    #[test]
    fn csm_hand_case() {
        // Positive half 0.2, 0.4, 0.8; negative half 0.1, 0.3.
        let t = table(&[
            (-1.0, 0.0, 0.3, 0.0),
            (0.0, 0.2, 0.1, 0.0),
            (1.0, 0.4, 0.0, 0.0),
            (2.0, 0.8, 0.0, 0.0),
        ]);
        let csm = conceptual_smoothness(&t, &MetricConfig::default()).unwrap();
        assert_abs_diff_eq!(csm, 0.0943, epsilon = 1e-4);
        let expected = (8.0f64 / 900.0).sqrt();
        assert_abs_diff_eq!(csm, expected, epsilon = 1e-12);
    }

    #[test]
    fn csm_equal_gaps_and_pooling() {
        let t = table(&[
            (-2.0, 0.0, 0.6, 0.0),
            (-1.0, 0.0, 0.4, 0.0),
            (0.0, 0.2, 0.2, 0.0),
            (1.0, 0.4, 0.0, 0.0),
            (2.0, 0.6, 0.0, 0.0),
        ]);
        assert_abs_diff_eq!(
            conceptual_smoothness(&t, &MetricConfig::default()).unwrap(),
            0.0,
            epsilon = 1e-12
        );

        // Constant positive half, one gap of 0.5 on the negative half.
        let t = table(&[
            (-1.0, 0.0, 0.5, 0.0),
            (0.0, 0.3, 0.0, 0.0),
            (1.0, 0.3, 0.0, 0.0),
            (2.0, 0.3, 0.0, 0.0),
        ]);
        let pooled = [0.0, 0.0, 0.5];
        assert_abs_diff_eq!(
            conceptual_smoothness(&t, &MetricConfig::default()).unwrap(),
            std_dev(&pooled, StdKind::Population),
            epsilon = 1e-12
        );
        let per = MetricConfig {
            csm_gap_pooling: GapPooling::PerSubsetMean,
            ..MetricConfig::default()
        };
        assert_abs_diff_eq!(
            conceptual_smoothness(&t, &per).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn csm_clamps_and_needs_two_per_half() {
        let t = table(&[
            (-1.0, 0.0, -0.5, 0.0),
            (0.0, 0.0, 0.0, 0.0),
            (1.0, 0.5, 0.0, 0.0),
        ]);
        // Negative half clamps to [0, 0]; gaps {0.5, 0}.
        assert_abs_diff_eq!(
            conceptual_smoothness(&t, &MetricConfig::default()).unwrap(),
            0.25,
            epsilon = 1e-12
        );
        let no_zero = MetricConfig {
            include_zero_in_subsets: false,
            ..MetricConfig::default()
        };
        assert!(conceptual_smoothness(&t, &no_zero).is_err());
    }

    #[test]
    fn delta_clip_examples() {
        let t = table(&[
            (-1.0, 0.2, 0.0, 0.0),
            (0.0, 0.3, 0.0, 0.0),
            (1.0, 0.5, 0.0, 0.0),
        ]);
        assert_abs_diff_eq!(delta_clip(&t).unwrap(), 0.15, epsilon = 1e-12);
        let t = table(&[
            (-1.0, -1.0, 0.0, 0.0),
            (0.0, 0.0, 0.0, 0.0),
            (1.0, 1.0, 0.0, 0.0),
        ]);
        assert_abs_diff_eq!(delta_clip(&t).unwrap(), 1.0, epsilon = 1e-12);
        let t = table(&[(-1.0, 0.4, 0.0, 0.0), (1.0, 0.4, 0.0, 0.0)]);
        assert!(delta_clip(&t).is_err());
    }

    #[test]
    fn os_examples() {
        let cfg = MetricConfig::default();
        assert_abs_diff_eq!(
            overall_score(2.54, 0.062, 0.276, &cfg),
            3.11,
            epsilon = 0.01
        );
        assert_abs_diff_eq!(
            overall_score(0.927, 0.019, 0.285, &cfg),
            1.62,
            epsilon = 0.01
        );
        assert_eq!(overall_score(0.0, 0.0, 0.0, &cfg), 1.0);
        let bad = MetricConfig {
            os_epsilon: 0.0,
            ..cfg
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn video_os_picks_configured_aspect() {
        let mk = |cr, sp, csm, aspect| MetricReport {
            cr_pos: cr,
            cr_neg: cr,
            cr,
            csm,
            sp,
            delta_clip: 0.0,
            os: 0.0,
            aspect,
        };
        let reports = [
            mk(2.0, 1.0, 0.5, Aspect::Static),
            mk(4.0, 0.0, 0.0, Aspect::Dynamic),
        ];
        let cfg = MetricConfig::default();
        assert_abs_diff_eq!(
            combined_os(&reports, &OsSource::default(), &cfg).unwrap(),
            1.5,
            epsilon = 1e-12
        );
        let mixed = OsSource {
            cr: Aspect::Dynamic,
            ..OsSource::default()
        };
        assert_abs_diff_eq!(
            combined_os(&reports, &mixed, &cfg).unwrap(),
            2.5,
            epsilon = 1e-12
        );
        assert!(combined_os(&reports[..1], &mixed, &cfg).is_err());
    }

    fn report(cr: f64) -> MetricReport {
        MetricReport {
            cr_pos: cr,
            cr_neg: cr,
            cr,
            csm: 0.1,
            sp: 0.5,
            delta_clip: 0.2,
            os: 0.0,
            aspect: Aspect::Default,
        }
    }

    #[test]
    fn aggregate_weights_concepts_equally() {
        let mut groups = BTreeMap::new();
        groups.insert("a".to_string(), vec![report(2.0)]);
        groups.insert("b".to_string(), vec![report(3.0), report(5.0), report(4.0)]);
        let agg = aggregate_benchmark(&groups, &MetricConfig::default()).unwrap();
        assert_abs_diff_eq!(agg.mean.cr, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(agg.std.cr, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(agg.mean.os, 3.0 / 1.5 + 0.9, epsilon = 1e-12);

        groups.insert("c".to_string(), vec![]);
        assert!(matches!(
            aggregate_benchmark(&groups, &MetricConfig::default()),
            Err(FslError::EmptyGroup(name)) if name == "c"
        ));
    }

    #[test]
    fn aggregate_of_one_is_identity() {
        let mut r = report(1.5);
        r.os = overall_score(r.cr, r.sp, r.csm, &MetricConfig::default());
        let groups = BTreeMap::from([("x".to_string(), vec![r])]);
        let agg = aggregate_benchmark(&groups, &MetricConfig::default()).unwrap();
        assert_eq!(agg.mean, MetricSummary::from(&r));
        assert_eq!(agg.std, MetricSummary::default());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn os_is_monotone(cr in 0.01f64..10.0, sp in 0.0f64..5.0, csm in 0.0f64..1.0, d in 0.001f64..1.0) {
            let cfg = MetricConfig::default();
            let os = overall_score(cr, sp, csm, &cfg);
            prop_assert!(overall_score(cr + d, sp, csm, &cfg) > os);
            prop_assert!(overall_score(cr, sp + d, csm, &cfg) < os);
            prop_assert!(overall_score(cr, sp, csm + d, &cfg) < os);
        }

        #[test]
        fn csm_ignores_offsets_per_half(
            pos in prop::collection::vec(0.0f64..0.5, 3),
            neg in prop::collection::vec(0.0f64..0.5, 3),
            shift in 0.0f64..0.4,
        ) {
            let cfg = MetricConfig { include_zero_in_subsets: false, ..MetricConfig::default() };
            let rows = |s: f64| vec![
                (-3.0, 0.0, neg[2] + s, 0.0), (-2.0, 0.0, neg[1] + s, 0.0), (-1.0, 0.0, neg[0] + s, 0.0),
                (1.0, pos[0], 0.0, 0.0), (2.0, pos[1], 0.0, 0.0), (3.0, pos[2], 0.0, 0.0),
            ];
            let a = conceptual_smoothness(&table(&rows(0.0)), &cfg).unwrap();
            let b = conceptual_smoothness(&table(&rows(shift)), &cfg).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn csm_scale_law(vals in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 5), k in 0.1f64..100.0) {
            let rows: Vec<_> = vals.iter().enumerate().map(|(i, &(p, n))| (i as f64 - 2.0, p, n, 0.0)).collect();
            let t = table(&rows);
            let mut scaled = t.clone();
            scaled.a_max *= k;
            for r in &mut scaled.records {
                r.a_pos *= k;
                r.a_neg *= k;
            }
            let cfg = MetricConfig::default();
            let a = conceptual_smoothness(&t, &cfg).unwrap();
            let b = conceptual_smoothness(&scaled, &cfg).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn cr_is_symmetric_under_role_swap(vals in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..8)) {
            let rows: Vec<_> = vals.iter().enumerate().map(|(i, &(p, n))| (i as f64, p, n, 0.0)).collect();
            let swapped: Vec<_> = rows.iter().map(|&(s, p, n, d)| (-s, n, p, d)).rev().collect();
            let (_, _, a) = conceptual_range(&table(&rows)).unwrap();
            let (_, _, b) = conceptual_range(&table(&swapped)).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn sp_ignores_order(dists in prop::collection::vec(0.0f64..3.0, 1..10), rot in 0usize..10) {
            let rows: Vec<_> = dists.iter().enumerate().map(|(i, &d)| (i as f64 + 1.0, 0.0, 0.0, d)).collect();
            let mut shuffled: Vec<_> = dists.clone();
            let len = shuffled.len();
            shuffled.rotate_left(rot % len);
            shuffled.reverse();
            let other: Vec<_> = shuffled.iter().enumerate().map(|(i, &d)| (i as f64 + 1.0, 0.0, 0.0, d)).collect();
            let a = semantic_preservation(&table(&rows)).unwrap();
            let b = semantic_preservation(&table(&other)).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn delta_clip_zero_iff_flat(base in -1.0f64..1.0, bumps in prop::collection::vec(prop_oneof![Just(0.0), -1.0f64..1.0], 4)) {
            let mut rows = vec![(0.0, base, 0.0, 0.0)];
            rows.extend(bumps.iter().enumerate().map(|(i, &b)| (i as f64 + 1.0, base + b, 0.0, 0.0)));
            let dc = delta_clip(&table(&rows)).unwrap();
            prop_assert!(dc >= 0.0);
            let flat = rows.iter().all(|r| r.1 == base);
            prop_assert_eq!(dc == 0.0, flat);
        }
    }
}
