// SPDX-License-Identifier: MIT OR Apache-2.0

use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fsl_core::astd::{calibrate, AstdConfig};
use fsl_core::backends::{AnalyticBackbone, AnalyticBackboneSpec, Denoiser, ExternalDenoiser};
use fsl_core::harness::{
    load_concept_specs, protocol_check, run_benchmark, verify_report, AnalyticBinding,
    BenchmarkPlan,
};
use fsl_core::metrics::{compute_report, MetricConfig};
use fsl_core::protocol::client::{timeout_from_env, Endpoint, ProtocolClient};
use fsl_core::protocol::mock::{self, MockAdapterConfig, MockMode};
use fsl_core::sampler::run_slider_sweep;
use fsl_core::scoring::{
    score_sweep, AlignmentScorer, EuclideanPerceptual, ExternalAligner, ExternalPerceptual,
    PerceptualScorer, ScoreCache,
};
use fsl_core::{
    validate_grid, ConceptTriplet, FslError, GuidanceMode, SamplerKind, ScheduleKind, SliderConfig,
    SweepResult,
};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
    Conformance(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Runtime(m) | CliError::Conformance(m) => f.write_str(m),
        }
    }
}

impl From<FslError> for CliError {
    fn from(e: FslError) -> Self {
        if e.is_config_error() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Treats any failure as a configuration problem (bad paths, unreadable inputs).
fn config<T>(r: fsl_core::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::Config(e.to_string()))
}

fn io<T>(r: std::io::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::Runtime(e.to_string()))
}

#[derive(Parser, Debug)]
#[command(
    name = "fsl",
    version,
    about = "Training-free concept sliders for diffusion models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate one slider sweep per concept.
    Sweep(SweepArgs),
    /// Find saturation and a uniform scale grid for one concept.
    Calibrate(CalibrateArgs),
    /// Score a stored sweep and compute its metrics.
    Evaluate(EvaluateArgs),
    /// Run a benchmark plan.
    Bench {
        #[arg(long)]
        plan: PathBuf,
        /// Override the plan's worker count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Recompute a benchmark report from its files.
    VerifyReport { dir: PathBuf },
    /// Run the adapter conformance fixtures.
    ProtocolCheck { address: String },
    /// Serve the bundled mock adapter.
    #[command(hide = true)]
    MockAdapter(MockArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SamplerArg {
    Euler,
    Heun,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScheduleArg {
    Vp,
    Karras,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Score,
    Embedding,
}

#[derive(Args, Debug)]
pub struct SamplingArgs {
    /// `analytic`, `external:HOST:PORT` or `cmd:PROGRAM`.
    #[arg(long, default_value = "analytic")]
    backend: String,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    branch_step: Option<usize>,
    #[arg(long)]
    guidance: Option<f64>,
    #[arg(long, value_enum)]
    sampler: Option<SamplerArg>,
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

impl SamplingArgs {
    fn slider_config(&self) -> CliResult<SliderConfig> {
        let mut c = SliderConfig::default();
        if let Some(v) = self.steps {
            c.total_steps = v;
        }
        if let Some(v) = self.branch_step {
            c.branch_step = v;
        }
        if let Some(v) = self.guidance {
            c.guidance = v;
        }
        if let Some(v) = self.sampler {
            c.sampler_kind = match v {
                SamplerArg::Euler => SamplerKind::Euler,
                SamplerArg::Heun => SamplerKind::Heun,
            };
        }
        if let Some(v) = self.schedule {
            c.schedule_kind = match v {
                ScheduleArg::Vp => ScheduleKind::VpDiscrete,
                ScheduleArg::Karras => ScheduleKind::KarrasSigma,
            };
        }
        if let Some(v) = self.mode {
            c.guidance_mode = match v {
                ModeArg::Score => GuidanceMode::ScoreSpace,
                ModeArg::Embedding => GuidanceMode::EmbeddingSpace,
            };
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    concepts: PathBuf,
    /// Concept to sweep; all concepts when omitted.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value = "-3,-2,-1,0,1,2,3", allow_hyphen_values = true)]
    scales: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long)]
    concepts: PathBuf,
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value = "0,0.5,1,2,4,8,16")]
    probe: String,
    #[arg(long, default_value_t = 1.0)]
    r_ref: f64,
    #[arg(long, default_value_t = 30)]
    seeds: usize,
    #[arg(long, default_value_t = 7)]
    n_out: usize,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// `analytic` or `external:ADDR`.
    #[arg(long, default_value = "analytic")]
    aligner: String,
    #[arg(long, default_value = "analytic")]
    perceptual: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Directory holding `sweep.json`, or the file itself.
    #[arg(long)]
    sweep: PathBuf,
    #[arg(long, default_value = "analytic")]
    aligner: String,
    #[arg(long, default_value = "analytic")]
    perceptual: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MockModeArg {
    Analytic,
    Echo,
    Byteswap,
    Hang,
    Nan,
}

#[derive(Args, Debug)]
pub struct MockArgs {
    #[arg(long, value_enum, default_value = "echo")]
    mode: MockModeArg,
    /// Analytic backbone JSON (analytic mode).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Full adapter configuration JSON; overrides `--mode` and `--spec`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `stdio` or `tcp:HOST:PORT`.
    #[arg(long, default_value = "stdio")]
    transport: String,
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Sweep(a) => sweep(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Bench { plan, workers } => bench(&plan, workers),
        Command::VerifyReport { dir } => verify(&dir),
        Command::ProtocolCheck { address } => check(&address),
        Command::MockAdapter(a) => mock_adapter(a),
    }
}

fn parse_list(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("bad number `{t}`: {e}")))
        })
        .collect()
}

fn select_concepts(path: &Path, name: Option<&str>) -> CliResult<Vec<ConceptTriplet>> {
    let all = config(load_concept_specs(path))?;
    match name {
        None => Ok(all),
        Some(n) => {
            let hit: Vec<_> = all.into_iter().filter(|t| t.concept_name == n).collect();
            if hit.is_empty() {
                return Err(CliError::Config(format!(
                    "no concept named `{n}` in {}",
                    path.display()
                )));
            }
            Ok(hit)
        }
    }
}

fn client(address: &str) -> CliResult<Arc<ProtocolClient>> {
    let endpoint = config(Endpoint::parse(address))?;
    Ok(Arc::new(ProtocolClient::connect(
        endpoint,
        timeout_from_env(),
        4,
    )?))
}

fn denoiser_for(backend: &str, triplet: &ConceptTriplet) -> CliResult<Box<dyn Denoiser>> {
    if backend == "analytic" {
        let spec = AnalyticBinding::default().spec(triplet)?;
        return Ok(Box::new(AnalyticBackbone::new(spec)?));
    }
    Ok(Box::new(ExternalDenoiser::new(client(backend)?, None)?))
}

fn aligner_for(source: &str, triplet: &ConceptTriplet) -> CliResult<Box<dyn AlignmentScorer>> {
    if source == "analytic" {
        return Ok(Box::new(AnalyticBinding::default().aligner(triplet)));
    }
    let addr = source.strip_prefix("external:").unwrap_or(source);
    Ok(Box::new(ExternalAligner::new(source, client(addr)?)))
}

fn perceptual_for(source: &str) -> CliResult<Box<dyn PerceptualScorer>> {
    if source == "analytic" {
        return Ok(Box::new(EuclideanPerceptual));
    }
    let addr = source.strip_prefix("external:").unwrap_or(source);
    Ok(Box::new(ExternalPerceptual::new(source, client(addr)?)))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        io(std::fs::create_dir_all(dir))?;
    }
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    bytes.push(b'\n');
    io(std::fs::write(path, bytes))
}

fn sweep(a: SweepArgs) -> CliResult {
    let triplets = select_concepts(&a.concepts, a.name.as_deref())?;
    let grid = validate_grid(&parse_list(&a.scales)?)?;
    let cfg = a.sampling.slider_config()?;
    for t in &triplets {
        let denoiser = denoiser_for(&a.sampling.backend, t)?;
        let result = run_slider_sweep(denoiser.as_ref(), t, &grid, &cfg, a.seed)?;
        let path = a
            .out
            .join(&t.concept_name)
            .join(a.seed.to_string())
            .join("sweep.json");
        write_json(&path, &result)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn calibrate_cmd(a: CalibrateArgs) -> CliResult {
    let triplets = select_concepts(&a.concepts, a.name.as_deref())?;
    if triplets.len() != 1 {
        return Err(CliError::Config(format!(
            "calibrate needs exactly one concept (use --name); {} matched",
            triplets.len()
        )));
    }
    let t = &triplets[0];
    let astd = AstdConfig {
        probe: parse_list(&a.probe)?,
        r_ref: a.r_ref,
        n_seeds: a.seeds,
        n_out: a.n_out,
        ..AstdConfig::default()
    };
    config(astd.validate())?;
    let cfg = a.sampling.slider_config()?;
    let denoiser = denoiser_for(&a.sampling.backend, t)?;
    let aligner = aligner_for(&a.aligner, t)?;
    let perceptual = perceptual_for(&a.perceptual)?;
    let cache = ScoreCache::from_env()?;
    let cal = calibrate(
        denoiser.as_ref(),
        t,
        aligner.as_ref(),
        perceptual.as_ref(),
        &cfg,
        &astd,
        Some(&cache),
    )?;
    for w in &cal.warnings {
        log::warn!("{w}");
    }
    write_json(&a.out, &cal)?;
    println!(
        "{}: saturation +{} / -{}; scales {:?}",
        cal.concept, cal.saturation_pos, cal.saturation_neg, cal.resampled_scales
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> CliResult {
    let path = if a.sweep.is_dir() {
        a.sweep.join("sweep.json")
    } else {
        a.sweep.clone()
    };
    let text = config(std::fs::read_to_string(&path).map_err(FslError::from))?;
    let sweep: SweepResult = config(serde_json::from_str(&text).map_err(FslError::from))?;
    let aligner = aligner_for(&a.aligner, &sweep.triplet)?;
    let perceptual = perceptual_for(&a.perceptual)?;
    let cache = ScoreCache::from_env()?;
    let table = score_sweep(&sweep, aligner.as_ref(), perceptual.as_ref(), Some(&cache))?;
    let report = compute_report(&table, &MetricConfig::default())?;
    write_json(
        &a.out,
        &serde_json::json!({ "scores": table, "metrics": report }),
    )?;
    println!(
        "cr {:.4}  csm {:.4}  sp {:.4}  delta_clip {:.4}  os {:.4}",
        report.cr, report.csm, report.sp, report.delta_clip, report.os
    );
    Ok(())
}

fn bench(plan_path: &Path, workers: Option<usize>) -> CliResult {
    let mut plan = config(BenchmarkPlan::load(plan_path))?;
    if workers.is_some() {
        plan.workers = workers;
    }
    config(plan.validate())?;
    let report = run_benchmark(&plan)?;
    let h = &report.header;
    println!(
        "{} sliders completed, {} failed; OS {:.4}; summary in {}",
        h.sliders_completed,
        h.sliders_failed,
        report.aggregate.mean.os,
        plan.out_dir().display()
    );
    Ok(())
}

fn verify(dir: &Path) -> CliResult {
    let outcome = verify_report(dir)?;
    if outcome.passed() {
        println!("ok: {} checks", outcome.checks);
        Ok(())
    } else {
        for m in &outcome.mismatches {
            println!("mismatch: {m}");
        }
        Err(CliError::Conformance(format!(
            "{} of {} checks failed",
            outcome.mismatches.len(),
            outcome.checks
        )))
    }
}

fn check(address: &str) -> CliResult {
    let endpoint = config(Endpoint::parse(address))?;
    let verdict = protocol_check(&endpoint, timeout_from_env());
    for f in &verdict.fixtures {
        println!(
            "{} {}: {}",
            if f.passed { "PASS" } else { "FAIL" },
            f.name,
            f.detail
        );
    }
    if verdict.passed() {
        Ok(())
    } else {
        let failed = verdict.fixtures.iter().filter(|f| !f.passed).count();
        Err(CliError::Conformance(format!(
            "{failed} fixture(s) failed against {}",
            verdict.endpoint
        )))
    }
}

fn mock_adapter(a: MockArgs) -> CliResult {
    let cfg = match &a.config {
        Some(p) => {
            let text = config(std::fs::read_to_string(p).map_err(FslError::from))?;
            config(serde_json::from_str::<MockAdapterConfig>(&text).map_err(FslError::from))?
        }
        None => {
            let mode = match a.mode {
                MockModeArg::Analytic => {
                    let p = a
                        .spec
                        .as_ref()
                        .ok_or_else(|| CliError::Config("analytic mode needs --spec".into()))?;
                    let text = config(std::fs::read_to_string(p).map_err(FslError::from))?;
                    let spec: AnalyticBackboneSpec =
                        config(serde_json::from_str(&text).map_err(FslError::from))?;
                    MockMode::Analytic {
                        spec: Box::new(spec),
                    }
                }
                MockModeArg::Echo => MockMode::Echo,
                MockModeArg::Byteswap => MockMode::ByteSwap,
                MockModeArg::Hang => MockMode::Hang,
                MockModeArg::Nan => MockMode::NanScores,
            };
            MockAdapterConfig::new(mode)
        }
    };
    match a.transport.strip_prefix("tcp:") {
        Some(addr) => {
            let bound = mock::spawn_tcp(addr, cfg)?;
            println!("listening on {bound}");
            io(std::io::stdout().flush())?;
            loop {
                std::thread::park();
            }
        }
        None if a.transport == "stdio" => {
            let stdin = std::io::stdin();
            mock::serve(BufReader::new(stdin.lock()), std::io::stdout().lock(), &cfg)?;
            Ok(())
        }
        None => Err(CliError::Config(format!(
            "unknown transport `{}`",
            a.transport
        ))),
    }
}
