use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use bcpnn_core::bench::{bench_latency, run_sweep, BenchReport, BenchRow, EvalSettings, SweepSpec};
use bcpnn_core::model_io::{export_params, import_params, read_header};
use bcpnn_core::pipeline::{build_pipeline, counters_report, PipelineKind, PipelineSpec};
use bcpnn_core::{
    build_network, load_idx, load_raw_gray, train_full, Dataset, EpochMetrics, Error, NetworkConfig, NetworkState,
    Precision, PrecisionMode, Split, Strictness, TrainingParams,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bcpnn", version, about = "Train, evaluate and benchmark hypercolumn networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and export its parameters.
    Train(TrainArgs),
    /// Evaluate a parameter file on a test set.
    Eval(EvalArgs),
    /// Train and evaluate a set of model-size variants.
    Sweep(SweepArgs),
    /// Re-export a parameter file at another precision.
    Export(ExportArgs),
    /// Print the header of a parameter file.
    Inspect(InspectArgs),
    /// Measure per-image inference latency.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Fp32,
    Fp16,
    Mixed,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Precision {
        match p {
            PrecisionArg::Fp32 => Precision::Fp32,
            PrecisionArg::Fp16 => Precision::Fp16,
            PrecisionArg::Mixed => Precision::MixedQ312,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrictnessArg {
    Strict,
    Storage,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Mnist,
    Pneumonia,
    Breast,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` configuration file; unset keys take preset values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base configuration when no file is given.
    #[arg(long, value_enum, default_value = "mnist")]
    preset: Preset,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<NetworkConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => NetworkConfig::load(p)?,
            None => match self.preset {
                Preset::Mnist => NetworkConfig::mnist(),
                Preset::Pneumonia => NetworkConfig::pneumonia(),
                Preset::Breast => NetworkConfig::breast(),
            },
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainData {
    /// Training images (IDX, or raw 8-bit grayscale when labels are CSV).
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args)]
struct TestData {
    #[arg(long, requires = "test_labels")]
    test_images: Option<PathBuf>,
    #[arg(long, requires = "test_images")]
    test_labels: Option<PathBuf>,
}

#[derive(Args)]
struct RawDims {
    /// Image width for raw grayscale input (defaults to a square image).
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Use only the first N samples of each dataset.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct ModeArgs {
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    #[arg(long, value_enum, default_value = "strict")]
    strictness: StrictnessArg,
}

impl ModeArgs {
    fn mode(&self, default: Precision) -> PrecisionMode {
        let p = self.precision.map_or(default, Precision::from);
        let s = match self.strictness {
            StrictnessArg::Strict => Strictness::Strict,
            StrictnessArg::Storage => Strictness::StorageOnly,
        };
        PrecisionMode::new(p, s)
    }
}

#[derive(Args)]
struct PipeArgs {
    /// Values per lane step in the support stages (8 for fp32, 16 otherwise).
    #[arg(long)]
    parallel_factor: Option<usize>,
    #[arg(long, default_value_t = 64)]
    channel_capacity: usize,
    /// Pass one-hot hidden winners downstream instead of soft-WTA activity.
    #[arg(long)]
    hard_wta: bool,
}

impl PipeArgs {
    fn settings(&self) -> EvalSettings {
        EvalSettings {
            parallel_factor: self.parallel_factor,
            channel_capacity: self.channel_capacity,
            hard_wta: self.hard_wta,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: TrainData,
    #[command(flatten)]
    test: TestData,
    #[command(flatten)]
    dims: RawDims,
    /// Output parameter file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    epochs_unsup: Option<usize>,
    #[arg(long)]
    epochs_sup: Option<usize>,
    #[command(flatten)]
    mode: ModeArgs,
    /// Run training through the staged pipeline.
    #[arg(long)]
    pipeline: bool,
    #[arg(long, default_value_t = 64)]
    channel_capacity: usize,
    /// Per-epoch metrics CSV (stdout when omitted).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Test images; `--images/--labels` are accepted as aliases.
    #[arg(long, alias = "images")]
    test_images: PathBuf,
    #[arg(long, alias = "labels")]
    test_labels: PathBuf,
    #[command(flatten)]
    dims: RawDims,
    #[command(flatten)]
    mode: ModeArgs,
    #[command(flatten)]
    pipe: PipeArgs,
    /// Per-sample `sample,label,pred,latency_us` CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Pipeline stage counters CSV.
    #[arg(long)]
    counters_csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: TrainData,
    #[command(flatten)]
    test: TestData,
    #[command(flatten)]
    dims: RawDims,
    /// Axes and values, e.g. `hcu=30,10;mcu=400,200;links=320/80;precision=fp32,mixed`.
    #[arg(long)]
    sweep: String,
    #[command(flatten)]
    pipe: PipeArgs,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Source parameter file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    mode: ModeArgs,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Parameter file; without it a fresh network is built from the config.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, alias = "test-images")]
    images: Option<PathBuf>,
    #[arg(long, alias = "test-labels", requires = "images")]
    labels: Option<PathBuf>,
    #[command(flatten)]
    dims: RawDims,
    #[command(flatten)]
    mode: ModeArgs,
    #[arg(long)]
    parallel_factor: Option<usize>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    /// Structural sweep over fresh networks; reports op counts and latency.
    #[arg(long, conflicts_with = "model")]
    sweep: Option<String>,
    /// Synthetic images to time when no dataset is given.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Export(a) => export(a),
        Command::Inspect(a) => inspect(a),
        Command::Bench(a) => bench(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}

fn load_data(images: &Path, labels: &Path, dims: &RawDims, cfg: &NetworkConfig, split: Split) -> Result<Dataset, Error> {
    let raw = labels.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let ds = if raw {
        let side = (cfg.n_input_hcu as f64).sqrt().round() as usize;
        let w = dims.width.unwrap_or(side);
        let h = dims.height.unwrap_or(cfg.n_input_hcu / w.max(1));
        load_raw_gray(images, labels, w, h, cfg.n_classes)?
    } else {
        load_idx(images, labels)?
    };
    let ds = match dims.limit {
        Some(n) => ds.take(n),
        None => ds,
    };
    Ok(ds.with_split(split))
}

fn write_out(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn stdout(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    let _ = out.flush();
}

fn train(a: TrainArgs) -> Result<(), Error> {
    let mut cfg = a.config.load()?;
    if let Some(e) = a.epochs_unsup {
        cfg.epochs_unsup = e;
    }
    if let Some(e) = a.epochs_sup {
        cfg.epochs_sup = e;
    }
    let mode = a.mode.mode(cfg.precision.precision);
    let train = load_data(&a.data.images, &a.data.labels, &a.dims, &cfg, Split::Train)?;
    let test = match (&a.test.test_images, &a.test.test_labels) {
        (Some(i), Some(l)) => Some(load_data(i, l, &a.dims, &cfg, Split::Test)?),
        _ => None,
    };
    let mut net = build_network(&cfg)?;
    let params = TrainingParams::new(&cfg, train.len())?;
    let mut csv = format!("{}\n", EpochMetrics::CSV_HEADER);
    let mut on_epoch = |m: &EpochMetrics| {
        eprintln!(
            "epoch {:>2} {:<12} {:>9.1} ms{}",
            m.epoch,
            m.phase.name(),
            m.wall_ms,
            m.test_accuracy.map_or(String::new(), |a| format!("  test accuracy {a:.4}"))
        );
        csv.push_str(&m.csv_row());
        csv.push('\n');
    };
    let t = Instant::now();
    if a.pipeline {
        let mut spec = PipelineSpec::train();
        spec.channel_capacity = a.channel_capacity;
        let mut p = build_pipeline(&net, PipelineKind::Train, spec)?;
        let out = p.train(&train, test.as_ref(), &params, &mut on_epoch)?;
        eprint!("{}", counters_report(&out.counters).to_table());
        net = p.into_network();
    } else {
        train_full(&mut net, &train, test.as_ref(), &params, &mut on_epoch)?;
    }
    eprintln!("trained in {:.1} s", t.elapsed().as_secs_f64());
    export_params(&net, mode, &a.model)?;
    eprintln!("wrote {} ({mode})", a.model.display());
    match &a.csv {
        Some(p) => write_out(p, &csv),
        None => {
            stdout(&csv);
            Ok(())
        }
    }
}

fn model_precision(net: &NetworkState) -> Precision {
    net.stored_precision
}

fn eval(a: EvalArgs) -> Result<(), Error> {
    let net = import_params(&a.model)?;
    let mode = a.mode.mode(model_precision(&net));
    let test = load_data(&a.test_images, &a.test_labels, &a.dims, &net.config, Split::Test)?;
    let t = Instant::now();
    let (eval, counters) = bcpnn_core::bench::evaluate_pipelined(&net, &test, mode, a.pipe.settings())?;
    let row = BenchRow::from_evaluation("model", &net.config, &eval, t.elapsed().as_secs_f64() * 1e3);
    let report = BenchReport { rows: vec![row] };
    let counters = counters_report(&counters);
    eprint!("{}", eval.to_table());
    eprint!("{}", counters.to_table());
    stdout(&report.to_table());
    stdout(&report.to_csv());
    if let Some(p) = &a.csv {
        write_out(p, &eval.to_csv(&test))?;
    }
    if let Some(p) = &a.counters_csv {
        write_out(p, &counters.to_csv())?;
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<(), Error> {
    let spec: SweepSpec = a.sweep.parse()?;
    let base = a.config.load()?;
    let train = load_data(&a.data.images, &a.data.labels, &a.dims, &base, Split::Train)?;
    let test = match (&a.test.test_images, &a.test.test_labels) {
        (Some(i), Some(l)) => load_data(i, l, &a.dims, &base, Split::Test)?,
        _ => train.clone(),
    };
    let report = run_sweep(&base, &train, &test, &spec, a.pipe.settings(), &mut |r| {
        eprintln!(
            "{:<16} {:<8} accuracy {:.4}  mean {:.1} us",
            r.config_id, r.precision, r.accuracy, r.latency.mean_us
        )
    })?;
    stdout(&report.to_table());
    match &a.csv {
        Some(p) => write_out(p, &report.to_csv()),
        None => {
            stdout(&report.to_csv());
            Ok(())
        }
    }
}

fn export(a: ExportArgs) -> Result<(), Error> {
    let net = import_params(&a.model)?;
    let mode = a.mode.mode(model_precision(&net));
    export_params(&net, mode, &a.out)?;
    stdout(&format!("{}\n", read_header(&a.out)?));
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<(), Error> {
    let h = read_header(&a.model)?;
    stdout(&format!("{h}\n"));
    Ok(())
}

/// Deterministic pseudo-random images for timing runs without a dataset.
fn synthetic(cfg: &NetworkConfig, n: usize) -> Result<Dataset, Error> {
    let mut state = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let px = (0..n * cfg.n_input_hcu)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 40) as f32 / (1u64 << 24) as f32
        })
        .collect();
    Dataset::new(px, vec![0; n], cfg.n_input_hcu, 1, cfg.n_classes.max(1))
}

fn bench(a: BenchArgs) -> Result<(), Error> {
    let (base_net, cfg) = match &a.model {
        Some(m) => {
            let n = import_params(m)?;
            let c = n.config.clone();
            (Some(n), c)
        }
        None => (None, a.config.load()?),
    };
    let mode = a.mode.mode(base_net.as_ref().map_or(cfg.precision.precision, model_precision));
    let data = match (&a.images, &a.labels) {
        (Some(i), Some(l)) => load_data(i, l, &a.dims, &cfg, Split::Test)?,
        _ => synthetic(&cfg, a.samples)?,
    };
    let variants = match &a.sweep {
        Some(s) => s.parse::<SweepSpec>()?.variants(&cfg)?,
        None => vec![("model".to_string(), cfg.clone())],
    };
    let mut report = BenchReport::default();
    for (id, c) in variants {
        let fresh;
        let net = match &base_net {
            Some(n) => n,
            None => {
                fresh = build_network(&c)?;
                &fresh
            }
        };
        let t = Instant::now();
        let stats = match a.parallel_factor {
            Some(f) => {
                let mut k = bcpnn_core::InferenceKernel::new(net, mode);
                k.lanes = f;
                bcpnn_core::bench::bench_kernel(&mut k, &data, a.repeats, a.warmup)?
            }
            None => bench_latency(net, &data, mode, a.repeats, a.warmup)?,
        };
        report.rows.push(BenchRow {
            config_id: id,
            precision: mode,
            support_ops: c.support_ops(),
            accuracy: 0.0,
            latency: stats,
            wall_ms: t.elapsed().as_secs_f64() * 1e3,
            saturated: 0,
            relative_latency: 1.0,
        });
    }
    report.normalize_to(0);
    if let (Some(net), Some(_)) = (&base_net, &a.images) {
        let e = bcpnn_core::evaluate(net, &data, mode)?;
        report.rows[0].accuracy = e.accuracy();
        report.rows[0].saturated = e.quantization.saturated;
    }
    stdout(&report.to_table());
    match &a.csv {
        Some(p) => write_out(p, &report.to_csv()),
        None => {
            stdout(&report.to_csv());
            Ok(())
        }
    }
}
