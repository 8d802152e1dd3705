//! `fbp`: dataset generation, filter training, reconstruction, evaluation and
//! filter export.
//!
//! Every command merges built-in defaults, an optional `--config` file of
//! `key = value` lines and its flags (flags win), and writes the resolved
//! configuration next to its outputs. Exit codes: 0 success, 1 runtime
//! failure, 2 usage error.

mod settings;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;

use fbp_core::filters::{evaluate_series, FilterSpectrum, FrequencyGrid};
use fbp_core::losses::{GeeParams, GvParams, LossWeights};
use fbp_core::metrics::{evaluate_split, table_header, MetricReport};
use fbp_core::optim::{train, AdamConfig, InitMode, TrainConfig};
use fbp_core::phantom::{generate_dataset, DatasetConfig, DatasetManifest};
use fbp_core::pipeline::{reconstruct, FilterSource, ReconstructionConfig};
use fbp_core::projector::{default_detector_count, Geometry};
use fbp_core::raster::{read_sinogram, write_image, write_preview, Image};
use fbp_core::spectral::{halfspectrum_to_row, HalfSpectrum, Radix2};

use settings::{key, required, transient, Key, Settings};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<fbp_core::Error> for CliError {
    fn from(e: fbp_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "fbp", version, about = "Filtered backprojection with a trainable Fourier-series filter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ellipse-phantom dataset.
    GenData(GenDataArgs),
    /// Train the Fourier-series filter on a dataset.
    Train(TrainArgs),
    /// Reconstruct one sinogram raster.
    Reconstruct(ReconstructArgs),
    /// Score one or more filters on a dataset split.
    Eval(EvalArgs),
    /// Evaluate a filter on a frequency grid and optionally dump its kernel.
    ExportFilter(ExportArgs),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; flags override its values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output location (directory, or file for `reconstruct`).
    #[arg(long, value_name = "PATH")]
    out: Option<String>,
    #[arg(long, value_name = "U64")]
    seed: Option<String>,
    /// Worker threads, 0 = all cores. Falls back to FBP_THREADS.
    #[arg(long, value_name = "N")]
    threads: Option<String>,
}

impl Common {
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("out", self.out.clone()),
            ("seed", self.seed.clone()),
            ("threads", self.threads.clone().or_else(|| std::env::var("FBP_THREADS").ok())),
        ]
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    train: Option<String>,
    #[arg(long)]
    val: Option<String>,
    #[arg(long)]
    test: Option<String>,
    /// Image side length in pixels.
    #[arg(long)]
    size: Option<String>,
    #[arg(long)]
    angles: Option<String>,
    /// Detector count, or `auto` to cover the image diagonal.
    #[arg(long)]
    detectors: Option<String>,
    /// Incident photons per detector cell, or `inf` for noise-free data.
    #[arg(long)]
    photons: Option<String>,
    #[arg(long)]
    min_ellipses: Option<String>,
    #[arg(long)]
    max_ellipses: Option<String>,
    /// Forward projector step in pixels.
    #[arg(long)]
    ray_step: Option<String>,
}

static GEN_KEYS: [Key; 13] = [
    required("out"),
    key("seed", "0"),
    transient("threads", "0"),
    key("train", "200"),
    key("val", "20"),
    key("test", "50"),
    key("size", "64"),
    key("angles", "96"),
    key("detectors", "auto"),
    key("photons", "2000"),
    key("min_ellipses", "4"),
    key("max_ellipses", "10"),
    key("ray_step", "0.5"),
];

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory or manifest path.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    base_lr: Option<String>,
    #[arg(long)]
    max_lr: Option<String>,
    /// Weight of the spectral edge loss.
    #[arg(long)]
    alpha: Option<String>,
    /// Weight of the gradient-variance loss.
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    kappa: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    /// Gradient-variance patch size.
    #[arg(long)]
    patch: Option<String>,
    /// `ram_lak`, `zero` or `random`.
    #[arg(long)]
    init: Option<String>,
    /// Row padding (power of two), or `auto`.
    #[arg(long)]
    padded_len: Option<String>,
}

static TRAIN_KEYS: [Key; 18] = [
    required("data"),
    required("out"),
    key("seed", "0"),
    transient("threads", "0"),
    key("epochs", "20"),
    key("batch_size", "8"),
    key("base_lr", "0.005"),
    key("max_lr", "0.02"),
    key("alpha", "10"),
    key("beta", "20"),
    key("kappa", "0.1"),
    key("sigma", "0.05"),
    key("patch", "4"),
    key("init", "ram_lak"),
    key("padded_len", "auto"),
    key("adam_beta1", "0.9"),
    key("adam_beta2", "0.999"),
    key("adam_eps", "1e-8"),
];

#[derive(Args)]
struct ReconstructArgs {
    #[command(flatten)]
    common: Common,
    /// Sinogram raster with geometry.
    #[arg(long)]
    sino: Option<String>,
    /// Analytic filter name or filter CSV.
    #[arg(long)]
    filter: Option<String>,
    /// Optional 8-bit PGM preview path.
    #[arg(long)]
    preview: Option<String>,
    /// Output image side, or `auto` (the size the geometry was built for).
    #[arg(long)]
    size: Option<String>,
    #[arg(long)]
    padded_len: Option<String>,
}

static RECON_KEYS: [Key; 10] = [
    required("sino"),
    required("out"),
    key("seed", "0"),
    transient("threads", "0"),
    key("filter", "ram_lak"),
    key("preview", "none"),
    key("preview_lo", "0"),
    key("preview_hi", "auto"),
    key("size", "auto"),
    key("padded_len", "auto"),
];

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    split: Option<String>,
    /// Filter to score; repeat for several. Table order follows the flags.
    #[arg(long)]
    filter: Vec<String>,
    #[arg(long)]
    padded_len: Option<String>,
}

static EVAL_KEYS: [Key; 7] = [
    required("data"),
    required("out"),
    key("seed", "0"),
    transient("threads", "0"),
    key("split", "test"),
    key("filter", "hann"),
    key("padded_len", "auto"),
];

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    common: Common,
    /// Filter CSV (or analytic filter name).
    #[arg(long)]
    filter: Option<String>,
    /// Grid length `P`; the grid has `P/2 + 1` frequencies.
    #[arg(long)]
    padded_len: Option<String>,
    /// Also write the spatial kernel as a 1 x P raster.
    #[arg(long)]
    kernel: bool,
}

static EXPORT_KEYS: [Key; 6] = [
    required("filter"),
    required("out"),
    key("seed", "0"),
    transient("threads", "0"),
    key("padded_len", "1024"),
    key("kernel", "false"),
];

fn init_threads(settings: &Settings) -> CliResult {
    let n: usize = settings.get("threads")?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow!("cannot configure {n} worker threads: {e}"))?;
    }
    Ok(())
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(())
}

fn parse_photons(settings: &Settings) -> CliResult<Option<f64>> {
    let raw = settings.raw("photons");
    if raw == "inf" || raw == "none" {
        return Ok(None);
    }
    settings.get("photons").map(Some)
}

fn cmd_gen_data(args: GenDataArgs) -> CliResult {
    let mut flags = args.common.flags();
    flags.extend([
        ("train", args.train),
        ("val", args.val),
        ("test", args.test),
        ("size", args.size),
        ("angles", args.angles),
        ("detectors", args.detectors),
        ("photons", args.photons),
        ("min_ellipses", args.min_ellipses),
        ("max_ellipses", args.max_ellipses),
        ("ray_step", args.ray_step),
    ]);
    let s = Settings::resolve(&GEN_KEYS, args.common.config.as_deref(), flags)?;
    init_threads(&s)?;
    let size: usize = s.get("size")?;
    let detectors = s.get_auto("detectors")?.unwrap_or_else(|| default_detector_count(size));
    let angles: usize = s.get("angles")?;
    let geometry = Geometry::parallel(angles, detectors, 2.0 / size.max(1) as f64)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let config = DatasetConfig {
        train: s.get("train")?,
        val: s.get("val")?,
        test: s.get("test")?,
        size,
        geometry,
        photons: parse_photons(&s)?,
        seed: s.get("seed")?,
        min_ellipses: s.get("min_ellipses")?,
        max_ellipses: s.get("max_ellipses")?,
        ray_step: s.get("ray_step")?,
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let out = PathBuf::from(s.raw("out"));
    create_dir(&out)?;
    let manifest = generate_dataset(&out, &config)?;
    s.write("gen-data", &out.join("config.txt"))?;
    println!(
        "wrote {} samples ({} train / {} val / {} test) at {size}x{size}, {angles} angles x {detectors} detectors, photons {} to {}",
        manifest.total_samples(),
        config.train,
        config.val,
        config.test,
        s.raw("photons"),
        out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let mut flags = args.common.flags();
    flags.extend([
        ("data", args.data),
        ("epochs", args.epochs),
        ("batch_size", args.batch_size),
        ("base_lr", args.base_lr),
        ("max_lr", args.max_lr),
        ("alpha", args.alpha),
        ("beta", args.beta),
        ("kappa", args.kappa),
        ("sigma", args.sigma),
        ("patch", args.patch),
        ("init", args.init),
        ("padded_len", args.padded_len),
    ]);
    let s = Settings::resolve(&TRAIN_KEYS, args.common.config.as_deref(), flags)?;
    init_threads(&s)?;
    let config = TrainConfig {
        epochs: s.get("epochs")?,
        batch_size: s.get("batch_size")?,
        base_lr: s.get("base_lr")?,
        max_lr: s.get("max_lr")?,
        adam: AdamConfig {
            beta1: s.get("adam_beta1")?,
            beta2: s.get("adam_beta2")?,
            eps: s.get("adam_eps")?,
        },
        weights: LossWeights {
            alpha: s.get("alpha")?,
            beta: s.get("beta")?,
        },
        gee: GeeParams {
            kappa: s.get("kappa")?,
            sigma: s.get("sigma")?,
        },
        gv: GvParams { patch: s.get("patch")? },
        seed: s.get("seed")?,
        init: s.get::<InitMode>("init")?,
        padded_len: s.get_auto("padded_len")?,
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let (manifest, root) = DatasetManifest::load(s.raw("data"))?;
    let out = PathBuf::from(s.raw("out"));
    create_dir(&out)?;
    s.write("train", &out.join("config.txt"))?;
    let outcome = train(&config, &manifest, &root, Some(&out))?;
    outcome.best.write_csv(out.join("filter.csv"))?;
    outcome.last.write_csv(out.join("last.csv"))?;
    match outcome.history.epochs.iter().find(|e| e.epoch == outcome.best_epoch) {
        Some(e) => println!(
            "trained {} epochs; best epoch {} (val PSNR {:.3} dB, SSIM {:.4}); filter written to {}",
            config.epochs,
            outcome.best_epoch,
            e.val_psnr,
            e.val_ssim,
            out.join("filter.csv").display()
        ),
        None => println!(
            "trained {} epochs; filter of epoch {} written to {}",
            config.epochs,
            outcome.best_epoch,
            out.join("filter.csv").display()
        ),
    }
    Ok(())
}

fn resolve_filter(spec: &str) -> CliResult<FilterSource> {
    Ok(FilterSource::resolve(spec)?)
}

fn reconstruction_config(
    geometry: Geometry,
    size: usize,
    filter: FilterSource,
    padded_len: Option<usize>,
) -> CliResult<ReconstructionConfig> {
    let mut config = ReconstructionConfig::new(geometry, size, filter)?;
    if let Some(p) = padded_len {
        config.padded_len = p;
        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(config)
}

/// Image side a geometry was built for: the field of view `[-1, 1]` sampled at
/// the detector pitch.
fn native_size(geometry: &Geometry) -> usize {
    (2.0 / geometry.detector_spacing).round().max(1.0) as usize
}

fn cmd_reconstruct(args: ReconstructArgs) -> CliResult {
    let mut flags = args.common.flags();
    flags.extend([
        ("sino", args.sino),
        ("filter", args.filter),
        ("preview", args.preview),
        ("size", args.size),
        ("padded_len", args.padded_len),
    ]);
    let s = Settings::resolve(&RECON_KEYS, args.common.config.as_deref(), flags)?;
    init_threads(&s)?;
    let filter = resolve_filter(s.raw("filter"))?;
    let sino = read_sinogram(s.raw("sino"))?;
    let geometry = *sino.geometry();
    let size = s.get_auto("size")?.unwrap_or_else(|| native_size(&geometry));
    let config = reconstruction_config(geometry, size, filter, s.get_auto("padded_len")?)?;
    let image = reconstruct(&sino, &config)?;
    let out = PathBuf::from(s.raw("out"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_image(&out, &image)?;
    if s.raw("preview") != "none" {
        let lo: f32 = s.get("preview_lo")?;
        let hi = match s.get_auto::<f32>("preview_hi")? {
            Some(h) => h,
            None => image.data().iter().copied().fold(lo, f32::max),
        };
        let hi = if hi > lo { hi } else { lo + 1.0 };
        write_preview(s.raw("preview"), &image, lo, hi)?;
    }
    let mut record = out.clone().into_os_string();
    record.push(".config.txt");
    s.write("reconstruct", Path::new(&record))?;
    println!(
        "reconstructed {}x{} with {} to {}",
        size,
        size,
        config.filter.label(),
        out.display()
    );
    Ok(())
}

/// Report label for a filter argument: the analytic name or the file stem,
/// made unique by suffixing its position.
fn labels(specs: &[String]) -> Vec<String> {
    let base: Vec<String> = specs
        .iter()
        .map(|spec| {
            Path::new(spec)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| spec.clone())
        })
        .collect();
    base.iter()
        .enumerate()
        .map(|(i, b)| {
            if base.iter().filter(|o| *o == b).count() > 1 {
                format!("{b}_{}", i + 1)
            } else {
                b.clone()
            }
        })
        .collect()
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let mut flags = args.common.flags();
    let filters = (!args.filter.is_empty()).then(|| args.filter.join(","));
    flags.extend([
        ("data", args.data),
        ("split", args.split),
        ("filter", filters),
        ("padded_len", args.padded_len),
    ]);
    let s = Settings::resolve(&EVAL_KEYS, args.common.config.as_deref(), flags)?;
    init_threads(&s)?;
    let specs = s.list("filter");
    if specs.is_empty() {
        return Err(CliError::Usage("no filter given".into()));
    }
    let sources = specs.iter().map(|f| resolve_filter(f)).collect::<CliResult<Vec<_>>>()?;
    let (manifest, root) = DatasetManifest::load(s.raw("data"))?;
    let split = s.raw("split");
    manifest.split(split)?;
    let padded_len = s.get_auto("padded_len")?;
    let out = PathBuf::from(s.raw("out"));
    create_dir(&out)?;
    s.write("eval", &out.join("config.txt"))?;
    let mut reports: Vec<MetricReport> = Vec::new();
    for (label, source) in labels(&specs).into_iter().zip(sources) {
        let config = reconstruction_config(manifest.geometry, manifest.image_size, source, padded_len)?;
        let report = evaluate_split(&manifest, &root, split, &config, &label)?;
        report.write_csv(out.join(format!("{label}_{split}.csv")))?;
        reports.push(report);
    }
    let mut table = table_header();
    table.push('\n');
    for r in &reports {
        table.push_str(&r.table_row());
        table.push('\n');
    }
    fs::write(out.join(format!("table_{split}.txt")), &table).context("writing the summary table")?;
    print!("{table}");
    Ok(())
}

fn cmd_export_filter(args: ExportArgs) -> CliResult {
    let mut flags = args.common.flags();
    flags.extend([
        ("filter", args.filter),
        ("padded_len", args.padded_len),
        ("kernel", args.kernel.then(|| "true".to_owned())),
    ]);
    let s = Settings::resolve(&EXPORT_KEYS, args.common.config.as_deref(), flags)?;
    init_threads(&s)?;
    let padded_len: usize = s.get("padded_len")?;
    let grid = FrequencyGrid::new(padded_len).map_err(|e| CliError::Usage(e.to_string()))?;
    let source = resolve_filter(s.raw("filter"))?;
    let spectrum = match &source {
        FilterSource::Series(f) => evaluate_series(f, grid),
        other => other.spectrum(padded_len)?,
    };
    let out = PathBuf::from(s.raw("out"));
    create_dir(&out)?;
    s.write("export-filter", &out.join("config.txt"))?;
    spectrum.write_csv(out.join("spectrum.csv"))?;
    if let FilterSource::Series(f) = &source {
        f.write_csv(out.join("filter.csv"))?;
    }
    if s.get::<bool>("kernel")? {
        write_image(out.join("kernel.fbr"), &spatial_kernel(&spectrum)?)?;
    }
    println!(
        "evaluated {} on {} frequencies (P = {padded_len}) into {}",
        source.label(),
        grid.len(),
        out.display()
    );
    Ok(())
}

/// Inverse transform of a real half spectrum, rotated so the zero lag sits at
/// column `P / 2`.
fn spatial_kernel(spectrum: &FilterSpectrum) -> CliResult<Image> {
    let p = spectrum.padded_len;
    let half = HalfSpectrum {
        padded_len: p,
        bins: spectrum.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
    };
    let mut row = vec![0.0; p];
    halfspectrum_to_row(&half, &Radix2::new(p)?, &mut row)?;
    row.rotate_right(p / 2);
    Ok(Image::new(1, p, row.iter().map(|&v| v as f32).collect())?)
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ExportFilter(a) => cmd_export_filter(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `fbp <command> --help` for usage");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            // Library errors already embed their source in the message.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
