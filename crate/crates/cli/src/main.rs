//! `holeburn` command-line front end.
//!
//! Exit codes: 0 success, 1 validation error, 2 convergence failure,
//! 3 I/O error. `SHB_THREADS` caps the worker pool.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use holeburn::decay::{self, DecayFitOptions};
use holeburn::error::{Error, Result};
use holeburn::global::{self, GlobalFitConfig, LossSpace};
use holeburn::io::{self, fmt_f64, RunManifest};
use holeburn::lineshape::{self, ShapeKind, TraceMeta, SCAN_WINDOW};
use holeburn::model::{self, ClassId, Condition, RelaxationModel};
use holeburn::pipeline::{self, PipelineConfig, PipelineInput, PipelineReport, PlotKind};
use holeburn::simulate::{self, ExperimentPlan, HoleSpec, NoiseSpec};

#[derive(Parser, Debug)]
#[command(name = "holeburn", version, about = "Spin-relaxation modelling and fitting for spectral hole burning")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON file with settings for the chosen command.
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Output file (single-result commands) or directory.
    #[arg(short = 'o', long = "output", global = true, value_name = "PATH")]
    output: Option<PathBuf>,
    /// Output format for single-result commands.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate the rate model and its three terms on a grid of conditions.
    EvalRate(EvalRateArgs),
    /// Simulate hole-area decay curves from a model.
    SimulateDecay(SimulateDecayArgs),
    /// Simulate one spectral-hole trace.
    SimulateTrace(SimulateTraceArgs),
    /// Fit a hole profile to a trace CSV.
    FitTrace(FitTraceArgs),
    /// Fit a multi-exponential to a decay CSV.
    FitDecay(FitDecayArgs),
    /// Globally fit the rate model to a rates CSV.
    FitModel(FitModelArgs),
    /// Run traces or decays through every analysis stage.
    Pipeline(PipelineArgs),
    /// Write plot-ready CSV (and SVG) files from a pipeline report.
    PlotData(PlotDataArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Regime {
    Low,
    High,
}

#[derive(Args, Debug)]
struct ModelSource {
    /// Model JSON document; defaults to the built-in reference parameters.
    #[arg(long, value_name = "JSON")]
    model: Option<PathBuf>,
    /// Built-in reference regime used when --model is absent.
    #[arg(long, value_enum, default_value_t = Regime::Low)]
    regime: Regime,
}

impl ModelSource {
    fn load(&self) -> Result<RelaxationModel> {
        match &self.model {
            Some(p) => {
                let models = io::read_models(p)?;
                let want = match self.regime {
                    Regime::Low => model::LOW_TEMPERATURE,
                    Regime::High => model::HIGH_TEMPERATURE,
                };
                if models.len() == 1 {
                    return Ok(models.into_iter().next().unwrap());
                }
                models
                    .into_iter()
                    .find(|m| m.regime_label == want)
                    .ok_or_else(|| Error::Invalid(format!("{} has no {want} model", p.display())))
            }
            None => Ok(match self.regime {
                Regime::Low => model::reference_low_temperature(),
                Regime::High => model::reference_high_temperature(),
            }),
        }
    }
}

#[derive(Args, Debug)]
struct ConditionArgs {
    /// Temperatures in mK, comma-separated.
    #[arg(long = "temp-mK", value_delimiter = ',', allow_negative_numbers = true, value_name = "LIST")]
    temp_mk: Vec<f64>,
    /// Fields in mT, comma-separated.
    #[arg(long = "field-mT", value_delimiter = ',', allow_negative_numbers = true, value_name = "LIST")]
    field_mt: Vec<f64>,
}

impl ConditionArgs {
    /// Cartesian product, temperature-major.
    fn conditions(&self) -> Result<Vec<Condition>> {
        if self.temp_mk.is_empty() || self.field_mt.is_empty() {
            return Err(Error::Invalid("both --temp-mK and --field-mT are required".into()));
        }
        let mut out = Vec::new();
        for &t in &self.temp_mk {
            for &b in &self.field_mt {
                out.push(Condition::from_milli(t, b)?);
            }
        }
        Ok(out)
    }
}

#[derive(Args, Debug)]
struct EvalRateArgs {
    #[command(flatten)]
    model: ModelSource,
    /// Classes to evaluate (default: all in the model).
    #[arg(long, value_delimiter = ',')]
    class: Vec<ClassId>,
    #[command(flatten)]
    conditions: ConditionArgs,
    /// Also report the field of minimum rate over this range (mT, "lo,hi")
    /// at each temperature.
    #[arg(long = "minimum-over-field-mT", value_delimiter = ',', allow_negative_numbers = true, value_name = "LO,HI")]
    minimum_over_field: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct SimulateDecayArgs {
    #[command(flatten)]
    model: ModelSource,
    #[command(flatten)]
    conditions: ConditionArgs,
    /// Class weights, comma-separated, in model class order.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    weights: Option<Vec<f64>>,
    /// Last read time, s (default 1e5 s for the low regime, 1e4 s otherwise).
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    first_read: f64,
    #[arg(long, default_value_t = 12)]
    reads_per_decade: usize,
    #[arg(long, default_value_t = 1.0)]
    initial_area: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma_rel: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma_abs: f64,
    /// Also render every sample as a spectral trace (Gaussian hole of this
    /// FWHM in Hz) into <output>/traces.
    #[arg(long, value_name = "HZ")]
    traces_fwhm: Option<f64>,
    /// Per-sample noise of the rendered traces.
    #[arg(long, default_value_t = 0.0)]
    trace_sigma: f64,
}

#[derive(Args, Debug)]
struct SimulateTraceArgs {
    #[arg(long, default_value = "gaussian")]
    shape: ShapeKind,
    #[arg(long, default_value_t = lineshape::DEFAULT_CENTER)]
    center_hz: f64,
    #[arg(long, default_value_t = 7.5e6)]
    fwhm_hz: f64,
    #[arg(long, default_value_t = 0.5)]
    depth: f64,
    #[arg(long, default_value_t = 1.0)]
    baseline: f64,
    #[arg(long, default_value_t = SCAN_WINDOW.0)]
    scan_from_hz: f64,
    #[arg(long, default_value_t = SCAN_WINDOW.1)]
    scan_to_hz: f64,
    #[arg(long, default_value_t = 801)]
    points: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma_abs: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma_rel: f64,
    #[arg(long, default_value_t = 0.0)]
    drift_hz: f64,
    #[arg(long = "temp-mK", default_value_t = 7.0)]
    temp_mk: f64,
    #[arg(long = "field-mT", default_value_t = 0.0)]
    field_mt: f64,
    #[arg(long, default_value_t = 0.1)]
    wait_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ShapeChoice {
    Auto,
    Lorentzian,
    Gaussian,
}

#[derive(Args, Debug)]
struct FitTraceArgs {
    /// Trace CSV (with its JSON sidecar).
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = ShapeChoice::Auto)]
    shape: ShapeChoice,
    /// Skip recentering the hole to 400 MHz.
    #[arg(long)]
    no_recenter: bool,
}

#[derive(Args, Debug)]
struct FitDecayArgs {
    /// Decay CSV (with its JSON sidecar).
    input: PathBuf,
    /// Fixed component count; selected by AICc when absent.
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    free_baseline: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LossChoice {
    Log,
    Linear,
}

#[derive(Args, Debug)]
struct FitModelArgs {
    /// Rates CSV.
    input: PathBuf,
    /// Starting model document (shared parameters taken from its first model).
    #[arg(long, value_name = "JSON")]
    init: Option<PathBuf>,
    /// Parameters to hold fixed (replaces the default list); `*` globs allowed.
    #[arg(long, value_delimiter = ',')]
    fix: Option<Vec<String>>,
    #[arg(long, value_enum)]
    loss: Option<LossChoice>,
    /// Temperatures (mK) whose points are left out of the fit.
    #[arg(long = "exclude-temp-mK", value_delimiter = ',', allow_negative_numbers = true, value_name = "LIST")]
    exclude_temp_mk: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InputKind {
    Traces,
    Decays,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// Input files or directories.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = InputKind::Traces)]
    input_kind: InputKind,
    /// Temperatures (mK) excluded from the global fit.
    #[arg(long = "exclude-temp-mK", value_delimiter = ',', allow_negative_numbers = true, value_name = "LIST")]
    exclude_temp_mk: Option<Vec<f64>>,
    /// Also write plot data and SVG renderings into <output>/plots.
    #[arg(long)]
    plots: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlotChoice {
    Rates,
    Weights,
    Decays,
}

#[derive(Args, Debug)]
struct PlotDataArgs {
    /// Pipeline report JSON.
    report: PathBuf,
    #[arg(long, value_enum, default_value_t = PlotChoice::Rates)]
    kind: PlotChoice,
    /// Also render SVG figures (rates only).
    #[arg(long)]
    svg: bool,
}

fn read_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = io::read_text(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.to_path_buf(),
                row: e.line(),
                message: e.to_string(),
            })
        }
    }
}

/// Writes to `-o` (atomically) or stdout.
fn emit(output: Option<&Path>, text: &str) -> Result<Vec<PathBuf>> {
    match output {
        Some(p) => {
            io::write_atomic(p, text.as_bytes())?;
            Ok(vec![p.to_path_buf()])
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::Io {
                    path: PathBuf::from("<stdout>"),
                    source: e,
                })?;
            Ok(Vec::new())
        }
    }
}

fn json_text<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn require_dir(output: Option<&Path>, verb: &str) -> Result<PathBuf> {
    output
        .map(Path::to_path_buf)
        .ok_or_else(|| Error::Invalid(format!("{verb} writes several files; pass -o <directory>")))
}

fn eval_rate(cli: &Cli, args: &EvalRateArgs) -> Result<()> {
    let model = args.model.load()?;
    let classes = if args.class.is_empty() { model.class_ids() } else { args.class.clone() };
    let conds = args.conditions.conditions()?;
    let mut rows = Vec::new();
    for &id in &classes {
        for (c, r) in model::rate_grid(&model, id, &conds)? {
            rows.push((id, c, r));
        }
    }
    let mut minima = Vec::new();
    if let Some(range) = &args.minimum_over_field {
        if range.len() != 2 {
            return Err(Error::Invalid("--minimum-over-field-mT takes LO,HI".into()));
        }
        for &id in &classes {
            for &t in &args.conditions.temp_mk {
                let m = model::find_rate_minimum_over_field(&model, id, t * 1e-3, (range[0] * 1e-3, range[1] * 1e-3))?;
                minima.push(json!({"class": id, "temperature_K": t * 1e-3, "field_T": m.field, "rate_per_s": m.rate}));
            }
        }
    }
    let text = match cli.format {
        Format::Json => json_text(&json!({
            "model": model.regime_label,
            "rates": rows.iter().map(|(id, c, r)| json!({"class": id, "condition": c, "rate": r})).collect::<Vec<_>>(),
            "field_minima": minima,
        }))?,
        Format::Csv => {
            let mut s = String::from("class,temperature_K,field_T,flip_flop,tls_direct,raman,total,lifetime_s\n");
            for (id, c, r) in &rows {
                s.push_str(&format!(
                    "{id},{},{},{},{},{},{},{}\n",
                    fmt_f64(c.temperature),
                    fmt_f64(c.field),
                    fmt_f64(r.flip_flop),
                    fmt_f64(r.tls_direct),
                    fmt_f64(r.raman),
                    fmt_f64(r.total),
                    fmt_f64(r.lifetime)
                ));
            }
            s
        }
    };
    emit(cli.output.as_deref(), &text)?;
    Ok(())
}

fn simulate_decay_cmd(cli: &Cli, args: &SimulateDecayArgs) -> Result<()> {
    let dir = require_dir(cli.output.as_deref(), "simulate-decay")?;
    let model = args.model.load()?;
    let weights = match &args.weights {
        Some(w) => w.clone(),
        None if model.classes.len() == 3 => vec![0.52, 0.26, 0.22],
        None if model.classes.len() == 2 => vec![0.62, 0.38],
        None => vec![1.0 / model.classes.len() as f64; model.classes.len()],
    };
    let horizon = args.horizon.unwrap_or(if model.regime_label == model::LOW_TEMPERATURE { 1e5 } else { 1e4 });
    let plan = ExperimentPlan {
        conditions: args.conditions.conditions()?,
        first_read: args.first_read,
        horizon,
        reads_per_decade: args.reads_per_decade,
        initial_area: args.initial_area,
        class_weights: weights,
    };
    let noise = NoiseSpec {
        sigma_rel: args.sigma_rel,
        sigma_abs: args.sigma_abs,
        seed: cli.seed,
    };
    let ds = simulate::simulate_decay(&model, &plan, &noise)?;
    let config = serde_json::to_value(&ds.provenance)?;
    let mut manifest = RunManifest::new("simulate-decay", Vec::new(), &config);
    for (i, c) in ds.curves.iter().enumerate() {
        let p = dir.join(format!("decay_{i:03}_{}.csv", io::condition_stem(&c.condition)));
        manifest.record(io::write_decay(&p, c)?);
    }
    let prov = dir.join("provenance.json");
    io::write_atomic(&prov, &io::to_json_bytes(&ds.provenance)?)?;
    manifest.record([prov]);
    if let Some(fwhm) = args.traces_fwhm {
        let template = simulate::TraceTemplate {
            fwhm,
            sigma_abs: args.trace_sigma,
            ..Default::default()
        };
        let traces = simulate::traces_from_dataset(&ds, &template, cli.seed)?;
        let tdir = dir.join("traces");
        for (i, t) in traces.iter().enumerate() {
            let p = tdir.join(format!("trace_{i:05}_{}_t{:.6e}s.csv", io::condition_stem(&t.meta.condition), t.meta.wait_time));
            manifest.record(io::write_trace(&p, t)?);
        }
    }
    manifest.write(&dir.join("manifest.json"))?;
    eprintln!("wrote {} curves to {}", ds.curves.len(), dir.display());
    Ok(())
}

fn simulate_trace_cmd(cli: &Cli, args: &SimulateTraceArgs) -> Result<()> {
    let meta = TraceMeta {
        condition: Condition::from_milli(args.temp_mk, args.field_mt)?,
        wait_time: args.wait_s,
        shift_hz: 0.0,
    };
    let noise = NoiseSpec {
        sigma_rel: args.sigma_rel,
        sigma_abs: args.sigma_abs,
        seed: cli.seed,
    };
    let trace = simulate::simulate_trace_with_meta(
        &HoleSpec {
            shape: args.shape,
            center: args.center_hz,
            fwhm: args.fwhm_hz,
            depth: args.depth,
            baseline: args.baseline,
        },
        (args.scan_from_hz, args.scan_to_hz),
        args.points,
        &noise,
        args.drift_hz,
        meta,
    )?;
    match (cli.format, cli.output.as_deref()) {
        (Format::Csv, Some(p)) => {
            io::write_trace(p, &trace)?;
        }
        (Format::Csv, None) => {
            emit(None, &io::trace_csv_string(&trace))?;
        }
        (Format::Json, out) => {
            emit(out, &json_text(&trace)?)?;
        }
    }
    Ok(())
}

fn fit_trace_cmd(cli: &Cli, args: &FitTraceArgs) -> Result<()> {
    let raw = io::read_trace(&args.input)?;
    let trace = if args.no_recenter { raw } else { lineshape::recenter(&raw, lineshape::DEFAULT_CENTER)? };
    let (fit, verdict) = match args.shape {
        ShapeChoice::Auto => {
            let v = lineshape::classify_shape(&trace)?;
            (v.selected().clone(), Some(json!({"shape": v.shape, "delta_aicc": v.delta_aicc, "indeterminate": v.indeterminate})))
        }
        ShapeChoice::Lorentzian => (lineshape::fit_hole(&trace, ShapeKind::Lorentzian, None)?, None),
        ShapeChoice::Gaussian => (lineshape::fit_hole(&trace, ShapeKind::Gaussian, None)?, None),
    };
    let text = match cli.format {
        Format::Json => json_text(&json!({
            "shift_hz": trace.meta.shift_hz,
            "verdict": verdict,
            "fit": fit,
            "transfer_efficiency": fit.transfer_efficiency(),
            "area_sigma": fit.area_sigma(),
        }))?,
        Format::Csv => format!(
            "shape,center_hz,fwhm_hz,depth,baseline,area,area_sigma,aicc\n{:?},{},{},{},{},{},{},{}\n",
            fit.shape,
            fmt_f64(fit.center),
            fmt_f64(fit.fwhm),
            fmt_f64(fit.depth),
            fmt_f64(fit.baseline),
            fmt_f64(fit.area),
            fit.area_sigma().map(fmt_f64).unwrap_or_default(),
            fmt_f64(fit.aicc)
        )
        .to_lowercase(),
    };
    emit(cli.output.as_deref(), &text)?;
    Ok(())
}

fn fit_decay_cmd(cli: &Cli, args: &FitDecayArgs) -> Result<()> {
    let curve = io::read_decay(&args.input)?;
    let opts = DecayFitOptions {
        free_baseline: args.free_baseline,
        ..DecayFitOptions::default()
    };
    let (report, selection) = match args.components {
        Some(n) => (decay::fit_multiexp(&curve, n, &opts)?, None),
        None => {
            let s = decay::select_components(&curve, decay::MAX_COMPONENTS, &opts)?;
            (s.chosen().clone(), Some(s))
        }
    };
    let text = match cli.format {
        Format::Json => json_text(&json!({
            "condition": curve.condition,
            "report": report,
            "rates": report.rates().iter().map(|(r, s)| json!({"rate_per_s": r, "sigma_per_s": s})).collect::<Vec<_>>(),
            "selection": selection.map(|s| json!({
                "chosen_n": s.chosen_n,
                "fallback": s.fallback,
                "aicc": s.reports.iter().map(|r| r.as_ref().map(|r| r.aicc)).collect::<Vec<_>>(),
                "f_tests": s.f_tests,
                "failures": s.failures,
            })),
        }))?,
        Format::Csv => {
            let mut s = String::from("component,amplitude,lifetime_s,weight,rate_per_s,sigma_per_s\n");
            for (k, ((c, w), (r, sig))) in report.model.components.iter().zip(&report.weights).zip(report.rates()).enumerate() {
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    ClassId::from_index(k).map(|c| c.to_string()).unwrap_or_default(),
                    fmt_f64(c.amplitude),
                    fmt_f64(c.lifetime),
                    fmt_f64(*w),
                    fmt_f64(r),
                    sig.map(fmt_f64).unwrap_or_default()
                ));
            }
            s
        }
    };
    emit(cli.output.as_deref(), &text)?;
    Ok(())
}

fn fit_model_cmd(cli: &Cli, args: &FitModelArgs) -> Result<()> {
    let datasets = io::read_rates(&args.input)?;
    let mut config: GlobalFitConfig = read_config(cli.config.as_deref())?;
    if let Some(fix) = &args.fix {
        config.fixed = fix.clone();
    }
    if let Some(loss) = args.loss {
        config.loss_space = match loss {
            LossChoice::Log => LossSpace::LogRate,
            LossChoice::Linear => LossSpace::LinearRate,
        };
    }
    if let Some(ex) = &args.exclude_temp_mk {
        config.exclude_temperatures = ex.iter().map(|t| t * 1e-3).collect();
    }
    let init = initial_models(&datasets, args.init.as_deref())?;
    let fit = global::fit_global(&datasets, &config, &init)?;
    if !fit.converged {
        return Err(Error::NoConvergence {
            iterations: fit.iterations,
            rss: fit.objective,
        });
    }
    let text = match cli.format {
        Format::Json => json_text(&fit)?,
        Format::Csv => {
            let mut s = String::from("name,value,free,sigma\n");
            for p in &fit.parameters {
                s.push_str(&format!("{},{},{},{}\n", p.name, fmt_f64(p.value), p.free, p.sigma.map(fmt_f64).unwrap_or_default()));
            }
            s
        }
    };
    emit(cli.output.as_deref(), &text)?;
    Ok(())
}

/// One model per regime in the data, taken from `init` when given.
fn initial_models(datasets: &[global::RateDataset], init: Option<&Path>) -> Result<Vec<RelaxationModel>> {
    let given = match init {
        Some(p) => io::read_models(p)?,
        None => Vec::new(),
    };
    let mut regimes: Vec<String> = datasets.iter().map(|d| d.regime.clone()).collect();
    regimes.sort();
    regimes.dedup();
    let shared = given.first().map(|m| m.shared);
    Ok(regimes
        .iter()
        .map(|r| {
            let ids: Vec<ClassId> = datasets.iter().filter(|d| &d.regime == r).map(|d| d.class_id).collect();
            let mut m = given
                .iter()
                .find(|m| &m.regime_label == r || (r.is_empty() && given.len() == 1))
                .cloned()
                .unwrap_or_else(|| global::generic_init(r, &ids));
            m.regime_label = r.clone();
            m.classes.retain(|c| ids.contains(&c.class_id));
            for id in &ids {
                if m.class(*id).is_none() {
                    m.classes.push(global::generic_init(r, &[*id]).classes[0]);
                }
            }
            if let Some(s) = shared {
                m.shared = s;
            }
            m
        })
        .collect())
}

fn pipeline_cmd(cli: &Cli, args: &PipelineArgs) -> Result<()> {
    let dir = require_dir(cli.output.as_deref(), "pipeline")?;
    let mut config: PipelineConfig = read_config(cli.config.as_deref())?;
    if let Some(ex) = &args.exclude_temp_mk {
        config.global.exclude_temperatures = ex.iter().map(|t| t * 1e-3).collect();
    }
    let (input, warnings) = match args.input_kind {
        InputKind::Traces => {
            let got = io::ingest_traces(&args.inputs)?;
            (PipelineInput::Traces(got.items), got.warnings)
        }
        InputKind::Decays => {
            let got = io::ingest_decays(&args.inputs)?;
            (PipelineInput::Decays(got.items), got.warnings)
        }
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let report = pipeline::run_pipeline(input, &config)?;
    let mut manifest = RunManifest::new("pipeline", args.inputs.clone(), &serde_json::to_value(&config)?);
    manifest.record(pipeline::persist_report(&report, &dir)?);
    if args.plots {
        let plots = dir.join("plots");
        for kind in [PlotKind::Rates, PlotKind::Weights, PlotKind::Decays] {
            match pipeline::emit_plot_data(&report, kind, &plots, true) {
                Ok(paths) => manifest.record(paths),
                Err(e) => eprintln!("warning: plot data {kind:?}: {e}"),
            }
        }
    }
    manifest.write(&dir.join("manifest.json"))?;
    eprintln!(
        "pipeline {:?}: {} decay fits, {} rates, {} item failures; report in {}",
        report.status,
        report.decays.len(),
        report.rates.len(),
        report.failures.len(),
        dir.display()
    );
    Ok(())
}

fn plot_data_cmd(cli: &Cli, args: &PlotDataArgs) -> Result<()> {
    let dir = require_dir(cli.output.as_deref(), "plot-data")?;
    let text = io::read_text(&args.report)?;
    let report: PipelineReport = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: args.report.clone(),
        row: e.line(),
        message: e.to_string(),
    })?;
    let kind = match args.kind {
        PlotChoice::Rates => PlotKind::Rates,
        PlotChoice::Weights => PlotKind::Weights,
        PlotChoice::Decays => PlotKind::Decays,
    };
    let paths = pipeline::emit_plot_data(&report, kind, &dir, args.svg)?;
    let mut manifest = RunManifest::new("plot-data", vec![args.report.clone()], &json!({"kind": format!("{kind:?}"), "svg": args.svg}));
    manifest.record(paths);
    manifest.write(&dir.join("manifest.json"))?;
    Ok(())
}

fn configure_threads() {
    if let Some(n) = std::env::var("SHB_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::EvalRate(a) => eval_rate(cli, a),
        Command::SimulateDecay(a) => simulate_decay_cmd(cli, a),
        Command::SimulateTrace(a) => simulate_trace_cmd(cli, a),
        Command::FitTrace(a) => fit_trace_cmd(cli, a),
        Command::FitDecay(a) => fit_decay_cmd(cli, a),
        Command::FitModel(a) => fit_model_cmd(cli, a),
        Command::Pipeline(a) => pipeline_cmd(cli, a),
        Command::PlotData(a) => plot_data_cmd(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
