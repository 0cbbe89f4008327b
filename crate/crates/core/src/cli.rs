//! The `axkern` command line: one subcommand per pipeline step.
//!
//! Exit codes are 0 on success, 2 for bad input or validation failures, 3 when
//! a constraint such as the flash budget is not met and 1 for internal errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::approx::{build_skip_plan, ApproxConfig, SkipPlan};
use crate::codegen::{emit_network, estimate_footprint, CodegenOptions};
use crate::dse::{
    export_results, read_records, run_dse, select_index, to_records, write_plot_data, write_records, Candidate,
    CostModel, DseMode, DsePlanSpec, DseRecord,
};
use crate::error::Error;
use crate::model::{generate_fixture, load_dataset, load_model, save_dataset, save_model, FixtureParams, Layer, Model};
use crate::qinfer::evaluate;
use crate::significance::{capture_activation_stats, load_significance, save_significance, significance_map};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CONSTRAINT: i32 = 3;

/// File names written by `dse` into its output directory.
pub const RESULTS_CSV: &str = "dse_results.csv";
pub const PARETO_CSV: &str = "dse_pareto.csv";
pub const PLOT_DATA: &str = "dse_plot.dat";

#[derive(Debug, Parser)]
#[command(name = "axkern", version, about = "Significance-driven approximate unpacked kernels for int8 CNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print topology, parameter and MAC counts of a model.
    Inspect(InspectArgs),
    /// Capture mean conv inputs on a calibration set and write significance.
    Analyze(AnalyzeArgs),
    /// Evaluate every approximation config and write results, front and plot data.
    Dse(DseArgs),
    /// Pick the cheapest front config within an accuracy-loss budget.
    Select(SelectArgs),
    /// Emit the C bundle for a config and report its flash estimate.
    Codegen(CodegenArgs),
    /// Generate a synthetic model with calibration and evaluation datasets.
    Fixture(FixtureArgs),
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub calib: PathBuf,
    /// Output significance file.
    #[arg(long)]
    pub out: PathBuf,
    /// Use at most this many calibration samples (default: all).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_samples: Option<u64>,
    #[arg(long, env = "AXKERN_THREADS", default_value_t = 0)]
    pub threads: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CostArgs {
    #[arg(long, default_value_t = 1.0)]
    pub cycles_per_mac: f64,
    #[arg(long, default_value_t = 0.0)]
    pub layer_overhead_cycles: f64,
    #[arg(long, default_value_t = 8)]
    pub bytes_per_pair: u64,
    #[arg(long, default_value_t = 4096)]
    pub flash_base_bytes: u64,
}

impl CostArgs {
    fn model(&self) -> CostModel {
        CostModel {
            cycles_per_mac: self.cycles_per_mac,
            layer_overhead_cycles: self.layer_overhead_cycles,
            bytes_per_pair: self.bytes_per_pair,
            flash_base_bytes: self.flash_base_bytes,
        }
    }
}

#[derive(Debug, Args)]
pub struct DseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub sig: PathBuf,
    /// Evaluation dataset.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub tau_min: f64,
    #[arg(long, default_value_t = 0.1)]
    pub tau_max: f64,
    #[arg(long, default_value_t = 0.01)]
    pub tau_step: f64,
    #[arg(long, value_enum, default_value_t = DseMode::Uniform)]
    pub mode: DseMode,
    #[arg(long, default_value_t = 100_000)]
    pub cap: usize,
    #[arg(long, env = "AXKERN_THREADS", default_value_t = 0)]
    pub threads: usize,
    #[command(flatten)]
    pub cost: CostArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Results CSV written by `dse`.
    #[arg(long)]
    pub results: PathBuf,
    /// Allowed absolute accuracy loss, as a fraction in `[0, 1]`.
    #[arg(long, default_value_t = 0.0)]
    pub max_loss: f64,
    /// Output config file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CodegenArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Significance file; required together with `--config`.
    #[arg(long)]
    pub sig: Option<PathBuf>,
    /// Config file from `select`; omit for the exact network.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for the C bundle.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "axk")]
    pub prefix: String,
    #[arg(long, default_value_t = 2 * 1024 * 1024)]
    pub flash_budget: u64,
    #[command(flatten)]
    pub cost: CostArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of each conv layer's weights forced to zero.
    #[arg(long, default_value_t = 0.3)]
    pub zero_fraction: f64,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 64)]
    pub samples_per_class: usize,
    /// Leading samples that go to the calibration set; the rest is evaluation.
    #[arg(long, default_value_t = 128)]
    pub calib_samples: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = match &e {
            Error::Invalid(v) => {
                let mut s = format!("model validation failed with {} violation(s)", v.len());
                for x in v {
                    s.push_str(&format!("\n  {x}"));
                }
                s
            }
            other => other.to_string(),
        };
        Failure { code: EXIT_INPUT, message }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: EXIT_INTERNAL,
            message: format!("writing output: {e}"),
        }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: message.into(),
    }
}

type CmdResult = std::result::Result<i32, Failure>;

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Inspect(a) => cmd_inspect(&a, out),
        Command::Analyze(a) => cmd_analyze(&a, out),
        Command::Dse(a) => cmd_dse(&a, out),
        Command::Select(a) => cmd_select(&a, out, err),
        Command::Codegen(a) => cmd_codegen(&a, out),
        Command::Fixture(a) => cmd_fixture(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn emit_json(out: &mut dyn Write, v: &Value) -> std::io::Result<()> {
    writeln!(out, "{}", serde_json::to_string_pretty(v).expect("json value"))
}

fn layer_kind(l: &Layer) -> &'static str {
    match l {
        Layer::Conv2d(_) => "conv2d",
        Layer::MaxPool(_) => "maxpool",
        Layer::Dense(_) => "dense",
    }
}

/// Inspection report as a JSON value; the text output renders the same content.
pub fn inspect_report(m: &Model) -> Value {
    let (c, p, d) = m.topology();
    let layers: Vec<Value> = m
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            json!({
                "index": i,
                "type": layer_kind(l),
                "in_shape": l.in_shape().to_string(),
                "out_shape": l.out_shape().to_string(),
                "params": l.param_count(),
                "macs": l.mac_count(),
            })
        })
        .collect();
    json!({
        "name": m.name,
        "num_classes": m.num_classes,
        "topology": format!("{c}-{p}-{d}"),
        "input_shape": m.input_shape().to_string(),
        "params": m.layers.iter().map(Layer::param_count).sum::<usize>(),
        "conv_macs": m.exact_conv_macs(),
        "total_macs": m.exact_total_macs(),
        "layers": layers,
    })
}

fn cmd_inspect(a: &InspectArgs, out: &mut dyn Write) -> CmdResult {
    let m = load_model(&a.model)?;
    let r = inspect_report(&m);
    if a.json {
        emit_json(out, &r)?;
        return Ok(EXIT_OK);
    }
    writeln!(out, "model        {}", r["name"].as_str().unwrap_or(""))?;
    writeln!(out, "topology     {} (conv-pool-dense)", r["topology"].as_str().unwrap_or(""))?;
    writeln!(out, "input        {}", r["input_shape"].as_str().unwrap_or(""))?;
    writeln!(out, "classes      {}", r["num_classes"])?;
    writeln!(out, "params       {}", r["params"])?;
    writeln!(out, "conv MACs    {}", r["conv_macs"])?;
    writeln!(out, "total MACs   {}", r["total_macs"])?;
    writeln!(out)?;
    writeln!(out, "{:>5}  {:<8} {:>12} {:>12} {:>9} {:>10}", "layer", "type", "in", "out", "params", "MACs")?;
    for l in r["layers"].as_array().into_iter().flatten() {
        writeln!(
            out,
            "{:>5}  {:<8} {:>12} {:>12} {:>9} {:>10}",
            cell(&l["index"]),
            l["type"].as_str().unwrap_or(""),
            l["in_shape"].as_str().unwrap_or(""),
            l["out_shape"].as_str().unwrap_or(""),
            cell(&l["params"]),
            cell(&l["macs"])
        )?;
    }
    Ok(EXIT_OK)
}

fn with_threads<T>(threads: usize, f: impl FnOnce() -> T + Send) -> std::result::Result<T, Failure>
where
    T: Send,
{
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Failure {
        code: EXIT_INTERNAL,
        message: format!("thread pool: {e}"),
    })?;
    Ok(pool.install(f))
}

fn cmd_analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> CmdResult {
    let m = load_model(&a.model)?;
    let calib = load_dataset(&a.calib)?;
    let max = a.max_samples.map_or(usize::MAX, |n| n as usize);
    let e = with_threads(a.threads, || capture_activation_stats(&m, &calib, max))??;
    let sig = significance_map(&m, &e)?;
    save_significance(&sig, &a.out)?;

    let layers: Vec<Value> = m
        .conv_layers()
        .zip(&sig.layers)
        .enumerate()
        .map(|(ord, ((idx, _), ls))| {
            let s = ls.summary();
            json!({
                "conv": ord,
                "layer": idx,
                "channels": ls.channels.len(),
                "kernel_len": ls.kernel_len,
                "min": finite_or_null(s.min),
                "median": finite_or_null(s.median),
                "max": finite_or_null(s.max),
                "retained_channels": s.retained_channels,
                "retained_products": s.retained_products,
            })
        })
        .collect();
    let r = json!({ "samples": e.sample_count, "significance": a.out.display().to_string(), "layers": layers });
    if a.json {
        emit_json(out, &r)?;
        return Ok(EXIT_OK);
    }
    writeln!(out, "calibration samples: {}", e.sample_count)?;
    writeln!(
        out,
        "{:>4} {:>5} {:>8} {:>12} {:>12} {:>12} {:>8}",
        "conv", "layer", "channels", "min S", "median S", "max S", "RETAIN"
    )?;
    for l in &layers {
        writeln!(
            out,
            "{:>4} {:>5} {:>8} {:>12} {:>12} {:>12} {:>8}",
            cell(&l["conv"]),
            cell(&l["layer"]),
            cell(&l["channels"]),
            fmt_sig(&l["min"]),
            fmt_sig(&l["median"]),
            fmt_sig(&l["max"]),
            cell(&l["retained_channels"])
        )?;
    }
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(EXIT_OK)
}

fn cell(v: &Value) -> String {
    v.as_str().map_or_else(|| v.to_string(), str::to_string)
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn fmt_sig(v: &Value) -> String {
    v.as_f64().map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

fn cmd_dse(a: &DseArgs, out: &mut dyn Write) -> CmdResult {
    let m = load_model(&a.model)?;
    let sig = load_significance(&a.sig)?;
    let d = load_dataset(&a.dataset)?;
    let spec = DsePlanSpec {
        mode: a.mode,
        tau_min: a.tau_min,
        tau_max: a.tau_max,
        tau_step: a.tau_step,
        subsets: None,
        cap: a.cap,
        threads: a.threads,
        cost: a.cost.model(),
    };
    let points = run_dse(&m, &sig, &spec, &d)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    export_results(&points, &m, &spec.cost, a.out.join(RESULTS_CSV))?;
    let records = to_records(&points, &m, &spec.cost);
    let front: Vec<DseRecord> = records.iter().filter(|r| r.on_front).cloned().collect();
    write_records(&front, a.out.join(PARETO_CSV))?;
    write_plot_data(&records, a.out.join(PLOT_DATA))?;

    let baseline = records.iter().find(|r| r.config.is_exact()).map(|r| r.accuracy);
    let best = baseline.and_then(|b| select_record(&records, b, 0.0)).map(|i| &records[i]);
    let r = json!({
        "configs": records.len(),
        "front": front.len(),
        "baseline_accuracy": baseline,
        "best_at_zero_loss": best.map(|b| json!({
            "config_id": b.config_id,
            "accuracy": b.accuracy,
            "conv_macs": b.conv_macs,
            "mac_reduction": b.mac_reduction,
        })),
        "results": a.out.join(RESULTS_CSV).display().to_string(),
    });
    if a.json {
        emit_json(out, &r)?;
        return Ok(EXIT_OK);
    }
    writeln!(out, "evaluated {} configs, {} on the Pareto front", records.len(), front.len())?;
    if let Some(b) = baseline {
        writeln!(out, "baseline accuracy {b}")?;
    }
    if let Some(b) = best {
        writeln!(
            out,
            "best at 0% loss: config {} accuracy {} conv MACs {} (reduction {:.4})",
            b.config_id, b.accuracy, b.conv_macs, b.mac_reduction
        )?;
    }
    writeln!(out, "wrote {}, {}, {} in {}", RESULTS_CSV, PARETO_CSV, PLOT_DATA, a.out.display())?;
    Ok(EXIT_OK)
}

fn select_record(records: &[DseRecord], baseline: f64, max_loss: f64) -> Option<usize> {
    select_index(records, baseline, max_loss, |r| Candidate {
        on_front: r.on_front,
        accuracy: r.accuracy,
        cycles: r.est_cycles,
        macs: r.total_macs,
        ordinal: r.config_id,
    })
}

fn cmd_select(a: &SelectArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    if !(0.0..=1.0).contains(&a.max_loss) {
        return Err(input_error(format!("--max-loss {} outside [0, 1]", a.max_loss)));
    }
    let records = read_records(&a.results)?;
    let exact = records
        .iter()
        .find(|r| r.config.is_exact())
        .ok_or_else(|| input_error(format!("{} has no exact config row", a.results.display())))?;
    let baseline = exact.accuracy;
    let chosen = select_record(&records, baseline, a.max_loss).map(|i| &records[i]);
    let (config, record) = match chosen {
        Some(r) => (r.config.clone(), r),
        None => {
            writeln!(err, "warning: no front point within the loss budget; using the exact config")?;
            (ApproxConfig::exact(exact.config.layers.len()), exact)
        }
    };
    config.save(&a.out)?;
    let r = json!({
        "config_id": record.config_id,
        "baseline_accuracy": baseline,
        "accuracy": record.accuracy,
        "conv_macs": record.conv_macs,
        "mac_reduction": record.mac_reduction,
        "est_cycles": record.est_cycles,
        "est_flash": record.est_flash,
        "fallback": chosen.is_none(),
        "config": serde_json::to_value(&config).expect("config json"),
    });
    if a.json {
        emit_json(out, &r)?;
        return Ok(EXIT_OK);
    }
    writeln!(
        out,
        "selected config {}: accuracy {} (baseline {}), conv MACs {}, reduction {:.4}",
        record.config_id, record.accuracy, baseline, record.conv_macs, record.mac_reduction
    )?;
    for (i, l) in config.layers.iter().enumerate() {
        if l.enabled {
            writeln!(out, "  conv {i}: tau {}", l.tau)?;
        } else {
            writeln!(out, "  conv {i}: exact")?;
        }
    }
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(EXIT_OK)
}

fn load_plan(m: &Model, sig: Option<&Path>, config: Option<&Path>) -> std::result::Result<SkipPlan, Failure> {
    match (config, sig) {
        (None, _) => Ok(SkipPlan::exact(m)),
        (Some(_), None) => Err(input_error("--config needs --sig")),
        (Some(c), Some(s)) => {
            let cfg = ApproxConfig::load(c)?;
            let sig = load_significance(s)?;
            if cfg.layers.len() != m.conv_count() {
                return Err(input_error(format!(
                    "config has {} conv layers, model has {}",
                    cfg.layers.len(),
                    m.conv_count()
                )));
            }
            Ok(build_skip_plan(&sig, &cfg)?)
        }
    }
}

fn cmd_codegen(a: &CodegenArgs, out: &mut dyn Write) -> CmdResult {
    let m = load_model(&a.model)?;
    let plan = load_plan(&m, a.sig.as_deref(), a.config.as_deref())?;
    let cost = a.cost.model();
    cost.validate()?;
    let opts = CodegenOptions {
        prefix: a.prefix.clone(),
        cost,
    };
    let bundle = emit_network(&m, &plan, &opts)?;
    let fp = estimate_footprint(&bundle, &cost, a.flash_budget)?;

    let conv: Vec<_> = m.conv_layers().map(|(_, c)| c).collect();
    let kernels: Vec<Value> = bundle
        .kernels
        .iter()
        .zip(&conv)
        .map(|(k, c)| {
            let positions = c.out_positions() as u64;
            json!({
                "layer": k.layer_id,
                "symbol": k.symbol,
                "file": k.file_name,
                "retained_pairs": k.retained_pairs,
                "retained_single_macs": k.retained_single_macs,
                "retained_macs_per_position": k.retained_macs(),
                "out_positions": positions,
                "conv_macs": k.retained_macs() * positions,
                "estimated_flash_bytes": k.estimated_flash_bytes,
            })
        })
        .collect();
    let conv_macs: u64 = kernels.iter().filter_map(|k| k["conv_macs"].as_u64()).sum();
    let r = json!({
        "prefix": bundle.prefix,
        "kernels": kernels,
        "retained_pairs": bundle.retained_pairs(),
        "retained_single_macs": bundle.retained_single_macs(),
        "conv_macs": conv_macs,
        "flash_bytes": fp.flash_bytes,
        "flash_budget": a.flash_budget,
        "utilization": fp.utilization,
        "fits": fp.fits,
    });
    if fp.fits {
        bundle.write_to(&a.out)?;
        std::fs::write(
            a.out.join(format!("{}_footprint.json", bundle.prefix)),
            serde_json::to_string_pretty(&r).expect("json value") + "\n",
        )
        .map_err(|e| Error::io(&a.out, e))?;
    }
    if a.json {
        emit_json(out, &r)?;
    } else {
        writeln!(
            out,
            "{:>5} {:<16} {:>8} {:>8} {:>10} {:>10} {:>10}",
            "layer", "symbol", "pairs", "singles", "MACs/pos", "positions", "conv MACs"
        )?;
        for k in r["kernels"].as_array().into_iter().flatten() {
            writeln!(
                out,
                "{:>5} {:<16} {:>8} {:>8} {:>10} {:>10} {:>10}",
                cell(&k["layer"]),
                k["symbol"].as_str().unwrap_or(""),
                cell(&k["retained_pairs"]),
                cell(&k["retained_single_macs"]),
                cell(&k["retained_macs_per_position"]),
                cell(&k["out_positions"]),
                cell(&k["conv_macs"])
            )?;
        }
        writeln!(out, "conv MACs {conv_macs}")?;
        writeln!(
            out,
            "estimated flash {} of {} bytes ({:.2}%)",
            fp.flash_bytes,
            a.flash_budget,
            100.0 * fp.utilization
        )?;
    }
    if !fp.fits {
        return Err(Failure {
            code: EXIT_CONSTRAINT,
            message: format!(
                "estimated flash {} bytes exceeds the budget of {} bytes; nothing written",
                fp.flash_bytes, a.flash_budget
            ),
        });
    }
    if !a.json {
        writeln!(out, "wrote {} files to {}", bundle.files().len(), a.out.display())?;
    }
    Ok(EXIT_OK)
}

fn cmd_fixture(a: &FixtureArgs, out: &mut dyn Write) -> CmdResult {
    if !(0.0..=1.0).contains(&a.zero_fraction) {
        return Err(input_error(format!("--zero-fraction {} outside [0, 1]", a.zero_fraction)));
    }
    if a.classes == 0 || a.classes > 256 || a.samples_per_class == 0 {
        return Err(input_error("need 1..=256 classes and at least one sample per class"));
    }
    let total = a.classes * a.samples_per_class;
    if a.calib_samples == 0 || a.calib_samples >= total {
        return Err(input_error(format!("--calib-samples must be in 1..{total}")));
    }
    let params = FixtureParams {
        zero_weight_fraction: a.zero_fraction,
        seed: a.seed,
        num_classes: a.classes,
        samples_per_class: a.samples_per_class,
        ..FixtureParams::default()
    };
    let (m, d) = generate_fixture(&params);
    let (calib, eval) = d.split_at(a.calib_samples)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    save_model(&m, a.out.join("model.json"))?;
    save_dataset(&calib, a.out.join("calib.axds"))?;
    save_dataset(&eval, a.out.join("eval.axds"))?;
    let acc = evaluate(&m, &eval)?.accuracy;
    let r = json!({
        "model": a.out.join("model.json").display().to_string(),
        "calib_samples": calib.len(),
        "eval_samples": eval.len(),
        "eval_accuracy": acc,
        "conv_macs": m.exact_conv_macs(),
    });
    if a.json {
        emit_json(out, &r)?;
    } else {
        writeln!(
            out,
            "wrote model.json, calib.axds ({} samples), eval.axds ({} samples) to {}",
            calib.len(),
            eval.len(),
            a.out.display()
        )?;
        writeln!(out, "exact eval accuracy {acc}")?;
    }
    Ok(EXIT_OK)
}
