// SPDX-License-Identifier: MIT OR Apache-2.0

//! Summary files and their independent re-verification.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::bench::{slider_report, BenchmarkReport, SliderMetricsFile, SliderRow};
use crate::error::Result;
use crate::metrics::{aggregate_benchmark, MetricReport, MetricSummary};
use crate::scoring::ScoreTable;

/// Table-style number: `.776`, `2.54`, `27.3`, `128`.
pub fn format_number(x: f64) -> String {
    let a = x.abs();
    if a < 1.0 {
        let s = format!("{x:.3}");
        if let Some(rest) = s.strip_prefix("-0.") {
            format!("-.{rest}")
        } else if let Some(rest) = s.strip_prefix("0.") {
            format!(".{rest}")
        } else {
            s
        }
    } else if a < 10.0 {
        format!("{x:.2}")
    } else if a < 100.0 {
        format!("{x:.1}")
    } else {
        format!("{x:.0}")
    }
}

/// `mean ± std` in table style.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{} ± {}", format_number(mean), format_number(std))
}

const ROWS: [(&str, fn(&MetricSummary) -> f64); 7] = [
    ("CR", |s| s.cr),
    ("CR+", |s| s.cr_pos),
    ("CR-", |s| s.cr_neg),
    ("CSM", |s| s.csm),
    ("SP", |s| s.sp),
    ("ΔCLIP", |s| s.delta_clip),
    ("OS", |s| s.os),
];

pub fn render_markdown(report: &BenchmarkReport) -> String {
    let h = &report.header;
    let mut md = String::new();
    let _ = writeln!(md, "# {}\n", report.name);
    let _ = writeln!(
        md,
        "{} of {} sliders over {} concepts; {} failed.\n",
        h.sliders_completed,
        h.sliders_planned,
        report.aggregate.per_concept.len(),
        h.sliders_failed
    );
    let _ = writeln!(md, "| Metric | {} |", report.name);
    let _ = writeln!(md, "| --- | --- |");
    for (label, get) in ROWS {
        let _ = writeln!(
            md,
            "| {label} | {} |",
            format_cell(get(&report.aggregate.mean), get(&report.aggregate.std))
        );
    }
    let _ = writeln!(md, "\n## Per concept\n");
    let _ = writeln!(md, "| Concept | {} |", ROWS.map(|r| r.0).join(" | "));
    let _ = writeln!(md, "| --- |{}", " --- |".repeat(ROWS.len()));
    for (name, s) in &report.aggregate.per_concept {
        let cells: Vec<String> = ROWS.iter().map(|(_, get)| format_number(get(s))).collect();
        let _ = writeln!(md, "| {name} | {} |", cells.join(" | "));
    }
    md
}

pub fn write_csv(rows: &[SliderRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<SliderRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<SliderRow>, _>>()?;
    Ok(rows)
}

/// Writes `summary.json`, `summary.csv` and `summary.md` into `dir`.
pub fn emit_report(report: &BenchmarkReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    std::fs::write(dir.join("summary.json"), json)?;
    write_csv(&report.sliders, &dir.join("summary.csv"))?;
    std::fs::write(dir.join("summary.md"), render_markdown(report))?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyOutcome {
    pub checks: usize,
    pub mismatches: Vec<String>,
}

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.mismatches.push(what());
        }
    }
}

/// Recomputes a written report from its CSV and per-slider files.
///
/// Every comparison is exact: the files store shortest round-trip decimals.
pub fn verify_report(dir: &Path) -> Result<VerifyOutcome> {
    let report: BenchmarkReport =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json"))?)?;
    let rows = read_csv(&dir.join("summary.csv"))?;
    let mut out = VerifyOutcome::default();

    out.check(rows == report.sliders, || {
        "summary.csv differs from the slider rows in summary.json".into()
    });

    let mut groups: BTreeMap<String, Vec<MetricReport>> = BTreeMap::new();
    for r in &rows {
        groups
            .entry(r.concept.clone())
            .or_default()
            .push(r.report());
    }
    let recomputed = aggregate_benchmark(&groups, &report.metric_config)?;
    for (name, s) in &report.aggregate.per_concept {
        out.check(recomputed.per_concept.get(name) == Some(s), || {
            format!("concept `{name}` means do not match the CSV")
        });
    }
    out.check(
        recomputed.per_concept.len() == report.aggregate.per_concept.len(),
        || "concept set differs from the CSV".into(),
    );
    out.check(recomputed.mean == report.aggregate.mean, || {
        "summary means do not match the CSV".into()
    });
    out.check(recomputed.std == report.aggregate.std, || {
        "summary spreads do not match the CSV".into()
    });

    for row in &rows {
        let slider_dir = dir.join(&row.concept).join(row.seed.to_string());
        let metrics_path = slider_dir.join("metrics.json");
        if !metrics_path.exists() {
            out.check(false, || format!("{} is missing", metrics_path.display()));
            continue;
        }
        let file: SliderMetricsFile =
            serde_json::from_str(&std::fs::read_to_string(&metrics_path)?)?;
        out.check(
            SliderRow::new(&file.concept, file.seed, &file.report) == *row,
            || format!("{} disagrees with its CSV row", metrics_path.display()),
        );
        let scores_path = slider_dir.join("scores.json");
        if scores_path.exists() {
            let tables: Vec<ScoreTable> =
                serde_json::from_str(&std::fs::read_to_string(&scores_path)?)?;
            let (primary, aspects) =
                slider_report(&tables, &report.metric_config, &report.os_source)?;
            out.check(primary == file.report && aspects == file.aspects, || {
                format!(
                    "{} does not follow from {}",
                    metrics_path.display(),
                    scores_path.display()
                )
            });
        }
    }

    let md_path = dir.join("summary.md");
    if md_path.exists() {
        out.check(
            std::fs::read_to_string(&md_path)? == render_markdown(&report),
            || "summary.md does not match summary.json".into(),
        );
    }
    Ok(out)
}
