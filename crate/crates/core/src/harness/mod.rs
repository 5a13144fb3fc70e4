// SPDX-License-Identifier: MIT OR Apache-2.0

//! Benchmark orchestration, reports and adapter conformance.

pub mod bench;
pub mod concepts;
pub mod conformance;
pub mod plan;
pub mod report;

pub use bench::{
    run_benchmark, run_benchmark_with, slider_report, BenchmarkReport, SliderMetricsFile, SliderRow,
};
pub use concepts::{load_concept_specs, parse_concept_specs, slug};
pub use conformance::{protocol_check, ConformanceVerdict, FixtureResult};
pub use plan::{
    AnalyticBinding, BackboneBinding, BenchmarkPlan, ConceptRig, PlanRigs, RigFactory, ScaleSource,
    ScorerBinding,
};
pub use report::{
    emit_report, format_cell, format_number, render_markdown, verify_report, VerifyOutcome,
};
