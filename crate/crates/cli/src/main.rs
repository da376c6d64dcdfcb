//! `approxcnn` command-line interface.
//!
//! Exit status: 0 on success, 2 for usage errors (rejected before any work
//! starts), 1 for failures while running. Output files are only written,
//! atomically, once a command has succeeded.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use approxcnn::bench::{bench_csv, cmd_bench_kernels};
use approxcnn::dataset::{load_dataset, Dataset};
use approxcnn::eval::{evaluate, EvalConfig};
use approxcnn::image::encode_ppm;
use approxcnn::model_io::{load_model, save_model, write_atomic};
use approxcnn::report::{emit_eval, emit_report, ReportFormat};
use approxcnn::sweep::{parse_pattern, sweep, Pools};
use approxcnn::synth::gen_synthetic_dataset;
use approxcnn::trainer::{init_network, train, TrainConfig};
use approxcnn::{Architecture, LayerAssignment, MulKernel, NetworkSpec, OpWeights};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "approxcnn",
    version,
    about = "Approximate multiplication in a small CNN: benchmark, train, evaluate, sweep"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scalar error and cost of every kernel over seeded operand pairs (CSV).
    BenchKernels(BenchArgs),
    /// Train a network with exact arithmetic and save it.
    Train(TrainArgs),
    /// Accuracy, operation count and AoC under one layer assignment.
    Eval(EvalArgs),
    /// Evaluate every assignment matching the given precision patterns.
    Sweep(SweepArgs),
    /// Write a synthetic dataset as PPM files plus a `path,label` manifest.
    DatasetSynth(SynthArgs),
    /// Describe a saved model.
    InspectModel(InspectArgs),
}

#[derive(Clone, Copy, Debug)]
struct SynthSpec {
    classes: usize,
    per_class: usize,
    size: usize,
}

fn parse_synth(s: &str) -> Result<SynthSpec, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [c, p, z] = parts.as_slice() else {
        return Err("expected classes,perClass,size".into());
    };
    let num = |v: &str, what: &str| v.parse::<usize>().map_err(|_| format!("bad {what} `{v}`"));
    Ok(SynthSpec { classes: num(c, "classes")?, per_class: num(p, "perClass")?, size: num(z, "size")? })
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad bound `{lo}`"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad bound `{hi}`"))?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(format!("empty range [{lo}, {hi})"));
    }
    Ok((lo, hi))
}

#[derive(Clone, Debug)]
struct KernelList(Vec<MulKernel>);

#[derive(Clone, Debug)]
struct PatternList(Vec<String>);

fn parse_kernels(s: &str) -> Result<KernelList, String> {
    s.split(',').map(|k| k.parse::<MulKernel>().map_err(|e| e.to_string())).collect::<Result<_, _>>().map(KernelList)
}

fn parse_patterns(s: &str) -> Result<PatternList, String> {
    let patterns: Vec<String> =
        s.split(',').map(|p| parse_pattern(p).map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    for (i, p) in patterns.iter().enumerate() {
        if patterns[..i].contains(p) {
            return Err(format!("pattern {p} given twice"));
        }
    }
    Ok(PatternList(patterns))
}

fn parse_workers(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(format!("workers must be a positive integer, got `{s}`")),
    }
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(f) if (0.0..1.0).contains(&f) => Ok(f),
        _ => Err(format!("fraction must be in [0, 1), got `{s}`")),
    }
}

fn core_parser<T: std::str::FromStr<Err = approxcnn::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: approxcnn::Error| e.to_string())
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Operand range `lo,hi`; both operands are drawn uniformly from it.
    #[arg(long, default_value = "-100,100", value_parser = parse_range, allow_hyphen_values = true)]
    range: (f64, f64),
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated kernel ids; all canonical kernels by default.
    #[arg(long, value_parser = parse_kernels)]
    kernels: Option<KernelList>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Where images come from: a `path,label` manifest or the synthetic
/// generator (seeded by `--seed`).
#[derive(Args)]
struct DataArgs {
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    manifest: Option<PathBuf>,
    /// `classes,perClass,size`.
    #[arg(long, value_parser = parse_synth)]
    synth: Option<SynthSpec>,
    /// Use only the held-out part of a seeded split with this fraction.
    #[arg(long, value_parser = parse_fraction)]
    heldout: Option<f64>,
    /// Keep only the first N images.
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "appsign-tiny", value_parser = core_parser::<Architecture>)]
    arch: Architecture,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr_decay)]
    lr_decay: f64,
    /// Manifest path of the saved model; the blob goes beside it as `.bin`.
    #[arg(long)]
    model: PathBuf,
    /// Training history as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value = "csv", value_parser = core_parser::<ReportFormat>)]
    format: ReportFormat,
    /// Per-primitive cost weights, e.g. `mul=2,add=0.5`; unlisted are 1.
    #[arg(long, value_parser = core_parser_weights)]
    op_weights: Option<OpWeights>,
    #[arg(long, default_value = "1", value_parser = parse_workers)]
    workers: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn core_parser_weights(s: &str) -> Result<OpWeights, String> {
    OpWeights::parse(s).map_err(|e| e.to_string())
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// `1=rounded,2=tirud,3=famm,4=exact` or a label such as `RTF`.
    #[arg(long, default_value = "exact", value_parser = core_parser::<LayerAssignment>)]
    assign: LayerAssignment,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated patterns over L, H, E, e.g. `LHH,HLH`.
    #[arg(long, value_parser = parse_patterns)]
    patterns: PatternList,
    /// `H=famm,lns;L=rounded`; the built-in high/low split by default.
    #[arg(long, value_parser = core_parser::<Pools>)]
    pools: Option<Pools>,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// `classes,perClass,size`.
    #[arg(long, value_parser = parse_synth)]
    synth: SynthSpec,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory to create.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

type CmdResult = Result<(), Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BenchKernels(a) => cmd_bench(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::DatasetSynth(a) => cmd_dataset_synth(a),
        Command::InspectModel(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> CmdResult {
    match out {
        Some(path) => write_atomic(path, bytes)?,
        None => std::io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> CmdResult {
    let kernels = a.kernels.map_or_else(|| MulKernel::CANONICAL.to_vec(), |k| k.0);
    let rows = cmd_bench_kernels(a.samples, a.range, a.seed, &kernels)?;
    emit(a.out.as_deref(), bench_csv(&rows).as_bytes())
}

/// Loads or generates the dataset, sized for a network whose input side is
/// `size` with `classes` outputs.
fn load_data(d: &DataArgs, size: usize, classes: Option<usize>) -> Result<Dataset, Box<dyn std::error::Error>> {
    let mut data = match (&d.manifest, d.synth) {
        (Some(path), _) => load_dataset(path, size, classes)?,
        (None, Some(s)) => {
            if s.size != size {
                return Err(format!("synthetic size {} does not match the network input {size}", s.size).into());
            }
            gen_synthetic_dataset(s.classes, s.per_class, s.size, d.seed)?
        }
        (None, None) => unreachable!("clap requires a data source"),
    };
    if let Some(c) = classes {
        if data.classes > c {
            return Err(format!("dataset has {} classes, network has {c}", data.classes).into());
        }
        data.classes = c;
    }
    if let Some(f) = d.heldout {
        data = data.split(f, d.seed)?.1;
    }
    if let Some(n) = d.subset {
        data.items.truncate(n);
    }
    Ok(data)
}

fn network_input_size(net: &NetworkSpec) -> Result<usize, Box<dyn std::error::Error>> {
    match net.input_shape.as_slice() {
        [3, h, w] if h == w => Ok(*h),
        other => Err(format!("unsupported network input shape {other:?}").into()),
    }
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.data.seed,
        lr_decay: a.lr_decay,
    };
    cfg.validate()?;
    let size = a.arch.input_size();
    let mut data = match (&a.data.manifest, a.data.synth) {
        (Some(path), _) => load_dataset(path, size, None)?,
        (None, Some(s)) => {
            if s.size != size {
                return Err(format!("synthetic size {} does not match {} input {size}", s.size, a.arch).into());
            }
            gen_synthetic_dataset(s.classes, s.per_class, s.size, a.data.seed)?
        }
        (None, None) => unreachable!("clap requires a data source"),
    };
    if let Some(n) = a.data.subset {
        data.items.truncate(n);
    }
    let (train_set, heldout) = match a.data.heldout {
        Some(f) => {
            let (t, h) = data.split(f, a.data.seed)?;
            (t, Some(h))
        }
        None => (data, None),
    };
    let arch = a.arch.with_classes(train_set.classes);
    let net = init_network(arch, a.data.seed);
    let (net, history) = train(net, &train_set, heldout.as_ref(), &cfg)?;
    if let Some(last) = history.epochs.last() {
        match last.heldout_accuracy {
            Some(acc) => {
                eprintln!("trained {} epochs: loss {:.4}, held-out accuracy {acc:.2}%", last.epoch, last.train_loss)
            }
            None => eprintln!("trained {} epochs: loss {:.4}", last.epoch, last.train_loss),
        }
    }
    save_model(&net, &a.model)?;
    if let Some(out) = &a.out {
        let mut bytes = serde_json::to_vec_pretty(&history)?;
        bytes.push(b'\n');
        write_atomic(out, &bytes)?;
    }
    Ok(())
}

fn eval_config(r: &ReportArgs) -> EvalConfig {
    EvalConfig { workers: r.workers, weights: r.op_weights.unwrap_or_default() }
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let net = load_model(&a.model)?;
    let data = load_data(&a.data, network_input_size(&net)?, Some(net.output_len()?))?;
    let report = evaluate(&net, &a.assign, &data, &eval_config(&a.report))?;
    emit(a.report.out.as_deref(), &emit_eval(&report, a.report.format))
}

fn cmd_sweep(a: SweepArgs) -> CmdResult {
    let patterns = a.patterns.0;
    let net = load_model(&a.model)?;
    let data = load_data(&a.data, network_input_size(&net)?, Some(net.output_len()?))?;
    let pools = a.pools.unwrap_or_default();
    let report = sweep(&net, &data, &patterns, &pools, &eval_config(&a.report))?;
    emit(a.report.out.as_deref(), &emit_report(&report, a.report.format))
}

fn cmd_dataset_synth(a: SynthArgs) -> CmdResult {
    let data = gen_synthetic_dataset(a.synth.classes, a.synth.per_class, a.synth.size, a.seed)?;
    if a.out.exists() {
        return Err(format!("{} already exists", a.out.display()).into());
    }
    let parent = match a.out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let staging = tempfile::Builder::new().prefix(".synth").tempdir_in(parent)?;
    let mut manifest = String::new();
    for (i, s) in data.items.iter().enumerate() {
        let name = format!("{i:05}_c{:02}.ppm", s.label);
        std::fs::write(staging.path().join(&name), encode_ppm(&s.image)?)?;
        manifest.push_str(&format!("{name},{}\n", s.label));
    }
    std::fs::write(staging.path().join("manifest.csv"), manifest)?;
    std::fs::rename(staging.path(), &a.out)?;
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> CmdResult {
    let net = load_model(&a.model)?;
    let shapes = net.layer_shapes()?;
    let layers: Vec<serde_json::Value> = net
        .layers
        .iter()
        .zip(&shapes)
        .map(|(l, s)| serde_json::json!({ "kind": l.kind(), "output_shape": s }))
        .collect();
    let summary = serde_json::json!({
        "name": net.name,
        "input_shape": net.input_shape,
        "classes": net.output_len()?,
        "parameters": net.parameter_count(),
        "macs_per_image": net.mac_count()?,
        "conv_layers": net.conv_positions().len(),
        "layers": layers,
    });
    let mut bytes = serde_json::to_vec_pretty(&summary)?;
    bytes.push(b'\n');
    emit(a.out.as_deref(), &bytes)
}
