//! The `geocd` command-line interface.
//!
//! Exit codes: 0 success, 1 verification failure, 2 input error, 3 config
//! error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::error::{GeoError, Result};
use crate::fit::{fit, jitter, sample_shape, FitConfig, FitTrace, Phase, ShapeKind, ShapeSpec};
use crate::geodesic::MaskConfig;
use crate::loss::{geocd, GeoCdConfig};
use crate::metrics::{evaluate, ThresholdBase};
use crate::oracle::{run_verification, VerifyConfig};
use crate::pointcloud::{normalize_pair, read_cloud, write_cloud, Format, PointCloud};
use crate::report::{write_csv, write_trace_csv, ComputeReport, FitReport, GeoCdSection, RunManifest, SweepRow};

pub const EXIT_VERIFY_FAILED: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "geocd", version, about = "Geodesic Chamfer Distance for point clouds")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "GEOCD_THREADS")]
    pub threads: Option<usize>,

    /// Force single-threaded execution.
    #[arg(long, global = true)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute CD, GeoCD, HD and F1 between two clouds.
    Compute(ComputeArgs),
    /// Fit a cloud to a target: CD phase, then GeoCD fine-tuning.
    Fit(FitArgs),
    /// Check propagation and gradients against independent oracles.
    Verify(VerifyArgs),
    /// Run `fit` once per value of one parameter.
    Sweep(SweepArgs),
    /// Convert between xyz text and f32 binary.
    Convert(ConvertArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GeoArgs {
    /// Neighbors per point in the kNN graph.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Number of hops to propagate.
    #[arg(long, default_value_t = 2)]
    pub hops: usize,
    /// Value used for non-neighbor entries.
    #[arg(long, default_value_t = 1.0)]
    pub sentinel: f64,
    /// `off`, `auto`, `auto:<factor>` or an absolute threshold.
    #[arg(long, default_value = "auto")]
    pub mask_threshold: MaskConfig,
    /// Add reverse kNN edges before propagation.
    #[arg(long)]
    pub symmetrize: bool,
}

impl GeoArgs {
    fn config(&self) -> GeoCdConfig {
        GeoCdConfig {
            k: self.k,
            n_hops: self.hops,
            sentinel: self.sentinel,
            mask: self.mask_threshold,
            symmetrize: self.symmetrize,
            gt_grad: false,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct MetricArgs {
    /// F1 threshold as a fraction of the bounding-box diagonal.
    #[arg(long, default_value_t = 0.01)]
    pub tau: f64,
    /// Bounding box used for the F1 threshold: `gt` or `union`.
    #[arg(long, default_value = "gt")]
    pub tau_base: ThresholdBase,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Xyz,
    Bin,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Xyz => Format::XyzText,
            FormatArg::Bin => Format::F32Binary,
        }
    }
}

fn format_for(path: &Path, explicit: Option<FormatArg>) -> Format {
    explicit.map(Format::from).unwrap_or_else(|| Format::from_path(path))
}

#[derive(Debug, Args)]
pub struct ComputeArgs {
    /// Predicted cloud.
    pub pred: PathBuf,
    /// Ground-truth cloud.
    pub gt: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Use coordinates as given instead of jointly normalizing the pair.
    #[arg(long)]
    pub no_normalize: bool,
    #[command(flatten)]
    pub geo: GeoArgs,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Write the JSON report here instead of stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Synthetic target shape.
    #[arg(long, default_value = "hemisphere", conflicts_with = "target")]
    pub shape: ShapeKind,
    /// Target cloud file (instead of a synthetic shape).
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Initial prediction file; defaults to a noisy copy of the target.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Points sampled on the synthetic shape.
    #[arg(long, default_value_t = 512)]
    pub points: usize,
    /// Noise on the synthetic target.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Noise added to the target to form the initial prediction.
    #[arg(long, default_value_t = 0.05)]
    pub init_noise: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub steps_cd: usize,
    #[arg(long, default_value_t = 20)]
    pub steps_geocd: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    #[command(flatten)]
    pub geo: GeoArgs,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Directory for trace.csv, clouds and manifest.json.
    #[arg(long, default_value = "fit-out")]
    pub out_dir: PathBuf,
}

impl FitArgs {
    fn config(&self) -> FitConfig {
        FitConfig {
            steps_cd: self.steps_cd,
            steps_geocd: self.steps_geocd,
            lr: self.lr,
            geo: self.geo.config(),
            seed: self.seed,
            tau_fraction: self.metric.tau,
            threshold_base: self.metric.tau_base,
            ..FitConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value_t = 16)]
    pub min_size: usize,
    #[arg(long, default_value_t = 32)]
    pub max_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Threshold for the masked-vs-unmasked comparison.
    #[arg(long, default_value_t = 0.05)]
    pub mask_threshold: f64,
    #[arg(long, hide = true)]
    pub inject_fault: bool,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    K,
    Hops,
    MaskThreshold,
    StepsGeocd,
}

impl SweepAxis {
    fn name(self) -> &'static str {
        match self {
            SweepAxis::K => "k",
            SweepAxis::Hops => "hops",
            SweepAxis::MaskThreshold => "mask-threshold",
            SweepAxis::StepsGeocd => "steps-geocd",
        }
    }

    fn apply(self, base: &FitConfig, value: &str) -> Result<FitConfig> {
        let bad = |e: String| GeoError::InvalidConfig(format!("{} value '{value}': {e}", self.name()));
        let mut cfg = *base;
        match self {
            SweepAxis::K => cfg.geo.k = value.parse().map_err(|e| bad(format!("{e}")))?,
            SweepAxis::Hops => cfg.geo.n_hops = value.parse().map_err(|e| bad(format!("{e}")))?,
            SweepAxis::MaskThreshold => cfg.geo.mask = value.parse().map_err(bad)?,
            SweepAxis::StepsGeocd => cfg.steps_geocd = value.parse().map_err(|e| bad(format!("{e}")))?,
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub axis: SweepAxis,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub values: Vec<String>,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Write the CSV here instead of stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    pub input: PathBuf,
    /// Destination; `.gcpc` and `.bin` select the binary format.
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub from: Option<FormatArg>,
    #[arg(long, value_enum)]
    pub to: Option<FormatArg>,
}

/// Outcome of a subcommand that can fail verification without erroring.
enum Outcome {
    Ok,
    VerificationFailed,
}

pub fn run(cli: Cli) -> ExitCode {
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(t) = threads {
        // a second call within one process (tests) finds the pool already built
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    let ctx = Context {
        deterministic: cli.deterministic,
        threads,
    };
    let result = match &cli.command {
        Command::Compute(a) => cmd_compute(a, &ctx),
        Command::Fit(a) => cmd_fit(a, &ctx),
        Command::Verify(a) => cmd_verify(a, &ctx),
        Command::Sweep(a) => cmd_sweep(a, &ctx),
        Command::Convert(a) => cmd_convert(a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::VerificationFailed) => ExitCode::from(EXIT_VERIFY_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

pub fn exit_code_for(e: &GeoError) -> u8 {
    if e.is_input_error() {
        EXIT_INPUT
    } else {
        EXIT_CONFIG
    }
}

struct Context {
    deterministic: bool,
    threads: Option<usize>,
}

impl Context {
    fn manifest(&self, subcommand: &str, config: serde_json::Value, seed: Option<u64>) -> RunManifest {
        let mut m = RunManifest::new(subcommand, config);
        m.seed = seed;
        m.deterministic = self.deterministic;
        m.threads = self.threads;
        m
    }
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text).map_err(|source| GeoError::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}").map_err(|source| GeoError::Io {
                path: "<stdout>".into(),
                source,
            })
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize")
}

fn cmd_compute(a: &ComputeArgs, ctx: &Context) -> Result<Outcome> {
    let start = Instant::now();
    let pred = read_cloud(&a.pred, format_for(&a.pred, a.format))?;
    let gt = read_cloud(&a.gt, format_for(&a.gt, a.format))?;
    let (pred, gt) = if a.no_normalize {
        (pred, gt)
    } else {
        let (p, g, _) = normalize_pair(&pred, &gt)?;
        (p, g)
    };
    let cfg = a.geo.config();
    let geo = geocd(&pred, &gt, &cfg, false)?;
    let m = evaluate(&pred, &gt, a.metric.tau, a.metric.tau_base)?;

    let mut manifest = ctx.manifest(
        "compute",
        json!({
            "pred": a.pred, "gt": a.gt, "normalize": !a.no_normalize,
            "geocd": cfg, "tau": a.metric.tau, "tau_base": a.metric.tau_base,
        }),
        None,
    );
    manifest.timings = geo.timings;
    manifest.timings.total_s = start.elapsed().as_secs_f64();

    let report = ComputeReport {
        manifest,
        normalized: !a.no_normalize,
        n_pred: pred.len(),
        n_gt: gt.len(),
        cd: m.cd,
        geocd: GeoCdSection::from(&geo),
        hd: m.hd,
        f1: m.f1,
        f1_percent: 100.0 * m.f1,
        precision: m.precision,
        recall: m.recall,
        threshold_used: m.threshold_used,
    };
    emit(&to_json(&report), a.output.as_deref())?;
    Ok(Outcome::Ok)
}

/// The jointly normalized (initial prediction, target) pair for a fit run.
fn fit_inputs(a: &FitArgs) -> Result<(PointCloud, PointCloud)> {
    let target = match &a.target {
        Some(p) => read_cloud(p, Format::from_path(p))?,
        None => sample_shape(&ShapeSpec {
            kind: a.shape,
            n_points: a.points,
            noise_sigma: a.noise,
            seed: a.seed,
        })?,
    };
    let init = match &a.init {
        Some(p) => read_cloud(p, Format::from_path(p))?,
        None => jitter(&target, a.init_noise, a.seed.wrapping_add(1))?,
    };
    let (init, target, _) = normalize_pair(&init, &target)?;
    Ok((init.with_name("initial"), target.with_name("target")))
}

fn fit_config_json(a: &FitArgs, cfg: &FitConfig) -> serde_json::Value {
    json!({
        "fit": cfg,
        "shape": if a.target.is_none() { Some(a.shape) } else { None },
        "target": a.target, "init": a.init,
        "points": a.points, "noise": a.noise, "init_noise": a.init_noise,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GeoError + '_ {
    move |source| GeoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn cmd_fit(a: &FitArgs, ctx: &Context) -> Result<Outcome> {
    let start = Instant::now();
    let (init, target) = fit_inputs(a)?;
    let cfg = a.config();
    let trace = fit(&init, &target, &cfg)?;

    fs::create_dir_all(&a.out_dir).map_err(io_err(&a.out_dir))?;
    let trace_path = a.out_dir.join("trace.csv");
    let f = fs::File::create(&trace_path).map_err(io_err(&trace_path))?;
    write_trace_csv(&trace.records, std::io::BufWriter::new(f))?;
    write_cloud(&target, a.out_dir.join("target.xyz"), Format::XyzText)?;
    write_cloud(&init, a.out_dir.join("initial.xyz"), Format::XyzText)?;
    write_cloud(&trace.final_pred, a.out_dir.join("final.xyz"), Format::XyzText)?;

    let mut manifest = ctx.manifest("fit", fit_config_json(a, &cfg), Some(a.seed));
    manifest.timings = trace.timings;
    manifest.timings.total_s = start.elapsed().as_secs_f64();
    let report = FitReport {
        manifest,
        n_pred: init.len(),
        n_gt: target.len(),
        initial_metrics: trace.initial_metrics,
        final_metrics: trace.final_metrics,
        final_f1_percent: 100.0 * trace.final_metrics.f1,
        phases: trace.phases.clone(),
    };
    let text = to_json(&report);
    let manifest_path = a.out_dir.join("manifest.json");
    fs::write(&manifest_path, &text).map_err(io_err(&manifest_path))?;
    emit(&text, None)?;
    Ok(Outcome::Ok)
}

fn cmd_verify(a: &VerifyArgs, ctx: &Context) -> Result<Outcome> {
    let cfg = VerifyConfig {
        trials: a.trials,
        min_size: a.min_size,
        max_size: a.max_size,
        seed: a.seed,
        mask_threshold: a.mask_threshold,
        inject_fault: a.inject_fault,
    };
    if cfg.min_size > cfg.max_size {
        return Err(GeoError::InvalidConfig("min-size exceeds max-size".into()));
    }
    let start = Instant::now();
    let report = run_verification(&cfg)?;
    let mut manifest = ctx.manifest("verify", json!(cfg), Some(a.seed));
    manifest.timings.total_s = start.elapsed().as_secs_f64();
    let mut value = serde_json::to_value(&report).expect("report serializes");
    value["manifest"] = serde_json::to_value(&manifest).expect("manifest serializes");
    emit(&serde_json::to_string_pretty(&value).unwrap(), a.output.as_deref())?;
    Ok(if report.passed {
        Outcome::Ok
    } else {
        Outcome::VerificationFailed
    })
}

fn sweep_row(
    axis: SweepAxis,
    value: &str,
    aligned: &PointCloud,
    target: &PointCloud,
    base: &FitConfig,
) -> Result<SweepRow> {
    let start = Instant::now();
    let cfg = axis.apply(base, value)?;
    // geodesic diagnostics on the shared CD-aligned cloud
    let reference = geocd(aligned, target, &cfg.geo, false)?;
    let trace: FitTrace = fit(aligned, target, &FitConfig { steps_cd: 0, ..cfg })?;
    let geocd_final = match trace.phase(Phase::GeoCd) {
        Some(p) => p.final_loss,
        None => reference.value,
    };
    let m = trace.final_metrics;
    Ok(SweepRow {
        axis: axis.name().to_string(),
        value: value.to_string(),
        status: "ok".into(),
        cd: m.cd,
        hd: m.hd,
        f1: m.f1,
        f1_percent: 100.0 * m.f1,
        geocd_initial: reference.value,
        mean_cross_distance: reference.diagnostics.mean_cross_distance,
        sentinel_fraction: reference.diagnostics.sentinel_fraction,
        geocd_final,
        total_s: start.elapsed().as_secs_f64(),
    })
}

fn cmd_sweep(a: &SweepArgs, _ctx: &Context) -> Result<Outcome> {
    let (init, target) = fit_inputs(&a.fit)?;
    let base = a.fit.config();
    // The swept parameters only affect the GeoCD phase, so the CD phase is
    // run once and shared.
    let cd_only = fit(&init, &target, &FitConfig { steps_geocd: 0, ..base })?;
    let aligned = cd_only.final_pred;

    let rows: Vec<SweepRow> = a
        .values
        .iter()
        .map(|v| {
            sweep_row(a.axis, v, &aligned, &target, &base).unwrap_or_else(|e| SweepRow::failed(a.axis.name(), v, &e))
        })
        .collect();

    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    let text = String::from_utf8(buf).expect("csv is utf-8");
    match &a.output {
        Some(p) => fs::write(p, text).map_err(io_err(p))?,
        None => print!("{text}"),
    }
    Ok(Outcome::Ok)
}

fn cmd_convert(a: &ConvertArgs) -> Result<Outcome> {
    let cloud = read_cloud(&a.input, format_for(&a.input, a.from))?;
    write_cloud(&cloud, &a.output, format_for(&a.output, a.to))?;
    Ok(Outcome::Ok)
}
