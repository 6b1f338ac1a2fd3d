//! `sikd`: data generation, training, evaluation and reports from the command line.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::{Args, Parser, Subcommand};

use sikd_core::data::{self, CorpusSpec, Dataset, DatasetManifest, DomainShift};
use sikd_core::pipeline::{self, ExperimentData, TrainConfig, TrainData, CHECKPOINT_FILE};
use sikd_core::report::{emit_report, ReportKind};
use sikd_core::Error;

use config::Flags;

const DEFAULT_OUT: &str = "sikd-out";

#[derive(Parser)]
#[command(name = "sikd", version, about = "Shape-intensity knowledge distillation for segmentation")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Output root; relative `--name` paths resolve against it.
    #[arg(long, global = true, env = "SIKD_OUT", default_value = DEFAULT_OUT)]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its train/val/test split.
    MakeData(MakeData),
    /// Write a domain-shifted copy of a corpus.
    ShiftData(ShiftData),
    /// Train a teacher on transformed inputs.
    TrainTeacher(TrainArgs),
    /// Train a student against a frozen teacher.
    TrainStudent(StudentArgs),
    /// Train the same architecture without distillation.
    TrainBaseline(TrainArgs),
    /// Evaluate a checkpoint on one or more datasets.
    Eval(EvalArgs),
    /// Train one teacher and a student per alpha.
    SweepAlpha(SweepArgs),
    /// Compare teacher input transforms.
    AblateTeacherInput(ExperimentArgs),
    /// Repeat teacher, baseline and student training over derived seeds.
    RepeatStudy(RepeatArgs),
    /// Build CSV tables or plots from run directories.
    Report(ReportArgs),
}

#[derive(Args)]
struct MakeData {
    /// Output directory name under the output root.
    #[arg(long, default_value = "data")]
    name: PathBuf,
    /// JSON corpus spec; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    /// disks, rings, polygons or mixed.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    gradient: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.7, 0.1, 0.2])]
    split: Vec<f64>,
}

#[derive(Args)]
struct ShiftData {
    /// Source manifest, or a directory holding `manifest.json`.
    #[arg(long)]
    source: PathBuf,
    #[arg(long, default_value = "cross")]
    name: PathBuf,
    /// JSON shift spec; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    offset: Option<f64>,
    #[arg(long)]
    contrast: Option<f64>,
    #[arg(long)]
    noise_delta: Option<f64>,
    #[arg(long)]
    texture_scale: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "cross")]
    tag: String,
}

/// Training hyperparameters; every flag maps to a config key of the same name.
#[derive(Args, Default)]
struct ConfigFlags {
    /// Flat JSON training config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// sgd_momentum or adaptive_moments.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// classwise_mean, original or label_map.
    #[arg(long)]
    teacher_input: Option<String>,
    /// ce or ce_plus_dice.
    #[arg(long)]
    seg_loss: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizontal_flip: Option<bool>,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    in_channels: Option<usize>,
    #[arg(long)]
    base_width: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    dice_smooth: Option<f64>,
    #[arg(long)]
    hd_percentile: Option<f64>,
}

impl ConfigFlags {
    fn resolve(&self) -> Result<TrainConfig, Failure> {
        let file = self.config.as_deref().map(config::read_file).transpose().map_err(Failure::usage)?;
        let mut f = Flags::default();
        f.set("epochs", self.epochs)
            .set("batch_size", self.batch_size)
            .set("learning_rate", self.learning_rate)
            .set("optimizer", self.optimizer.clone())
            .set("alpha", self.alpha)
            .set("teacher_input", self.teacher_input.clone())
            .set("seg_loss", self.seg_loss.clone())
            .set("seed", self.seed)
            .set("horizontal_flip", self.horizontal_flip)
            .set("num_classes", self.num_classes)
            .set("in_channels", self.in_channels)
            .set("base_width", self.base_width)
            .set("depth", self.depth)
            .set("dice_smooth", self.dice_smooth)
            .set("hd_percentile", self.hd_percentile);
        let cfg: TrainConfig = config::resolve(&TrainConfig::default(), file, f.0).map_err(Failure::usage)?;
        cfg.validate().map_err(Failure::usage_from)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory from `make-data` (reads train.json and val.json).
    #[arg(long)]
    data: PathBuf,
    /// Run directory name under the output root.
    #[arg(long)]
    name: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigFlags,
}

#[derive(Args)]
struct StudentArgs {
    /// Teacher checkpoint, or the teacher's run directory.
    #[arg(long)]
    teacher: PathBuf,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file, or a run directory holding one.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest or dataset directory; repeat for several domains.
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    /// Directory receiving `metrics/<name>.csv`; defaults to the checkpoint's run directory.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long, default_value = "eval")]
    name: String,
    #[arg(long, default_value_t = 100.0)]
    hd_percentile: f64,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Dataset directory from `make-data`; its test split is the intra-domain test set.
    #[arg(long)]
    data: PathBuf,
    /// Cross-domain manifest or dataset directory.
    #[arg(long)]
    cross: PathBuf,
    #[arg(long)]
    name: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigFlags,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 1.0, 2.0, 4.0])]
    alphas: Vec<f64>,
    #[command(flatten)]
    exp: ExperimentArgs,
}

#[derive(Args)]
struct RepeatArgs {
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[command(flatten)]
    exp: ExperimentArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// summary-csv, alpha-plot, distribution-plot or table4-csv.
    #[arg(long)]
    kind: String,
    /// Run directories to read.
    #[arg(long = "run", required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value = "report")]
    name: PathBuf,
}

/// A failure with its exit status and a one-line, greppable message.
#[derive(Debug)]
struct Failure {
    code: u8,
    class: &'static str,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            class: "usage",
            message: message.into(),
        }
    }

    fn usage_from(e: Error) -> Self {
        Self { code: 2, ..Self::from(e) }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let class = match &e {
            Error::Validation(_) => "validation",
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Json { .. } => "json",
            Error::Csv(_) => "csv",
            Error::Load { .. } => "load",
            Error::Checkpoint(_) => "checkpoint",
            Error::ConfigMismatch(_) => "config-mismatch",
            Error::Diverged { .. } => "diverged",
            Error::MissingInputs(_) => "missing-inputs",
            Error::Plot(_) => "plot",
        };
        // Absent input files are a usage problem, not a runtime one.
        let code = if matches!(e, Error::MissingInputs(_)) { 2 } else { 1 };
        Self {
            code,
            class,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => return parse_failure(e),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let line = f.message.replace('\n', " ");
            eprintln!("error: {}: {line}", f.class);
            ExitCode::from(f.code)
        }
    }
}

fn parse_failure(e: clap::Error) -> ExitCode {
    let context = |kind| match e.get(kind) {
        Some(ContextValue::String(s)) => s.clone(),
        Some(ContextValue::Strings(v)) => v.join(", "),
        _ => String::new(),
    };
    let line = match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        ErrorKind::InvalidSubcommand => format!("unknown command: {}", context(ContextKind::InvalidSubcommand)),
        ErrorKind::MissingRequiredArgument => format!("missing option: {}", context(ContextKind::InvalidArg)),
        ErrorKind::UnknownArgument => format!("unknown option: {}", context(ContextKind::InvalidArg)),
        _ => {
            let text = e.kind().as_str().unwrap_or("invalid arguments").to_string();
            let arg = context(ContextKind::InvalidArg);
            let value = context(ContextKind::InvalidValue);
            match (arg.is_empty(), value.is_empty()) {
                (false, false) => format!("usage: {text}: {arg} '{value}'"),
                (false, true) => format!("usage: {text}: {arg}"),
                _ => format!("usage: {text}"),
            }
        }
    };
    eprintln!("error: {line}");
    ExitCode::from(2)
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let out = cli.out;
    match cli.command {
        Command::MakeData(a) => make_data(&out, a),
        Command::ShiftData(a) => shift_data(&out, a),
        Command::TrainTeacher(a) => {
            let (data, cfg, dir) = prepare_training(&out, &a, "teacher")?;
            report_run(pipeline::train_teacher(&data, &cfg, &dir)?, &dir)
        }
        Command::TrainBaseline(a) => {
            let (data, cfg, dir) = prepare_training(&out, &a, "baseline")?;
            report_run(pipeline::train_baseline(&data, &cfg, &dir)?, &dir)
        }
        Command::TrainStudent(a) => {
            let teacher = checkpoint_path(&a.teacher)?;
            let (data, cfg, dir) = prepare_training(&out, &a.train, "student")?;
            report_run(pipeline::train_student(&data, &teacher, &cfg, &dir)?, &dir)
        }
        Command::Eval(a) => eval(a),
        Command::SweepAlpha(a) => {
            let (data, cfg, dir) = prepare_experiment(&out, &a.exp, "alpha_sweep")?;
            if a.alphas.is_empty() {
                return Err(Failure::usage("--alphas needs at least one value"));
            }
            pipeline::alpha_sweep(&data, &a.alphas, &cfg, &dir)?;
            println!("{}", dir.join(pipeline::ALPHA_SWEEP_CSV).display());
            Ok(())
        }
        Command::AblateTeacherInput(a) => {
            let (data, cfg, dir) = prepare_experiment(&out, &a, "teacher_input_ablation")?;
            pipeline::teacher_input_ablation(&data, &cfg, &dir)?;
            println!("{}", dir.join(pipeline::ABLATION_CSV).display());
            Ok(())
        }
        Command::RepeatStudy(a) => {
            if a.runs < 2 {
                return Err(Failure::usage("--runs must be at least 2"));
            }
            let (data, cfg, dir) = prepare_experiment(&out, &a.exp, "repeat_study")?;
            let rep = pipeline::repeat_study(a.runs, &cfg, &data, &dir)?;
            for s in &rep.summary {
                println!("{} {} mean_dice={:.4} std={:.4}", s.arm.name(), s.domain, s.mean_dice, s.std_dice);
            }
            Ok(())
        }
        Command::Report(a) => {
            let kind = ReportKind::parse(&a.kind).ok_or_else(|| Failure::usage(format!("unknown report kind '{}'", a.kind)))?;
            for r in &a.runs {
                if !r.is_dir() {
                    return Err(Failure::usage(format!("run directory not found: {}", r.display())));
                }
            }
            let path = emit_report(&a.runs, kind, &out.join(&a.name))?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn make_data(out: &Path, a: MakeData) -> Result<(), Failure> {
    let file = a.config.as_deref().map(config::read_file).transpose().map_err(Failure::usage)?;
    let mut f = Flags::default();
    f.set("num_samples", a.samples)
        .set("image_size", a.size)
        .set("num_classes", a.classes)
        .set("shape_family", a.family)
        .set("texture.noise_amplitude", a.noise)
        .set("texture.gradient_strength", a.gradient)
        .set("seed", a.seed);
    let means_given = file
        .as_ref()
        .and_then(|m| m.get("texture"))
        .and_then(|t| t.get("intensity_means"))
        .is_some();
    let mut spec: CorpusSpec = config::resolve(&CorpusSpec::new(200, 32, 3, 0), file, f.0).map_err(Failure::usage)?;
    if !means_given {
        spec.texture.intensity_means = CorpusSpec::default_means(spec.num_classes);
    }
    spec.validate().map_err(Failure::usage_from)?;
    let ratios = (a.split[0], a.split[1], a.split[2]);
    let dir = out.join(&a.name);
    let manifest = data::generate_corpus(&spec, &dir)?;
    let parts = data::split(&manifest, ratios, spec.seed)?;
    for (file, part) in [("train.json", &parts.train), ("val.json", &parts.val), ("test.json", &parts.test)] {
        part.write(&dir.join(file))?;
    }
    write_json(&dir.join("corpus.json"), &spec)?;
    println!(
        "{} samples: {} train, {} val, {} test",
        dir.display(),
        parts.train.len(),
        parts.val.len(),
        parts.test.len()
    );
    Ok(())
}

fn shift_data(out: &Path, a: ShiftData) -> Result<(), Failure> {
    let file = a.config.as_deref().map(config::read_file).transpose().map_err(Failure::usage)?;
    let mut f = Flags::default();
    f.set("intensity_offset", a.offset)
        .set("contrast_scale", a.contrast)
        .set("noise_amplitude_delta", a.noise_delta)
        .set("texture_frequency_scale", a.texture_scale);
    let shift: DomainShift = config::resolve(&DomainShift::default(), file, f.0).map_err(Failure::usage)?;
    shift.validate().map_err(Failure::usage_from)?;
    let source = read_manifest(&a.source, "manifest.json")?;
    let dir = out.join(&a.name);
    let shifted = data::shift_corpus(&source, &shift, a.seed, &dir, &a.tag)?;
    write_json(&dir.join("shift.json"), &shift)?;
    println!("{} samples: {}", dir.display(), shifted.len());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    if !(a.hd_percentile > 0.0 && a.hd_percentile <= 100.0) {
        return Err(Failure::usage(format!("--hd-percentile must be in (0, 100], got {}", a.hd_percentile)));
    }
    let ckpt = checkpoint_path(&a.checkpoint)?;
    let manifests = a
        .data
        .iter()
        .map(|p| read_manifest(p, "test.json"))
        .collect::<Result<Vec<_>, _>>()?;
    let spacing = manifests[0].pixel_spacing;
    if manifests.iter().any(|m| m.pixel_spacing != spacing) {
        return Err(Failure::usage("all evaluation datasets must share one pixel spacing"));
    }
    let mut samples = Vec::new();
    for m in &manifests {
        samples.extend(Dataset::new(m.clone())?.load_all()?);
    }
    let evaluation = pipeline::evaluate_samples(&ckpt, &samples, spacing, a.hd_percentile)?;
    let run_dir = match a.run_dir {
        Some(d) => d,
        None => run_dir_of(&ckpt),
    };
    evaluation.write(&run_dir.join("metrics"), &a.name)?;
    for (domain, r) in &evaluation.per_domain {
        println!(
            "{domain} samples={} dice={} iou={} hd={}",
            r.sample_count,
            fmt_opt(r.mean_dice),
            fmt_opt(r.mean_iou),
            fmt_opt(r.mean_hd)
        );
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
}

fn prepare_training(out: &Path, a: &TrainArgs, default_name: &str) -> Result<(TrainData, TrainConfig, PathBuf), Failure> {
    let cfg = a.cfg.resolve()?;
    let train = read_manifest(&a.data.join("train.json"), "train.json")?;
    let val = read_manifest(&a.data.join("val.json"), "val.json")?;
    let data = TrainData::from_manifests(&train, &val)?;
    let dir = out.join(a.name.as_deref().unwrap_or(Path::new(default_name)));
    Ok((data, cfg, dir))
}

fn prepare_experiment(
    out: &Path,
    a: &ExperimentArgs,
    default_name: &str,
) -> Result<(ExperimentData, TrainConfig, PathBuf), Failure> {
    let cfg = a.cfg.resolve()?;
    let train = read_manifest(&a.data.join("train.json"), "train.json")?;
    let val = read_manifest(&a.data.join("val.json"), "val.json")?;
    let test = read_manifest(&a.data.join("test.json"), "test.json")?;
    let cross = read_manifest(&a.cross, "manifest.json")?;
    let data = ExperimentData::from_manifests(&train, &val, &test, &cross)?;
    let dir = out.join(a.name.as_deref().unwrap_or(Path::new(default_name)));
    std::fs::create_dir_all(&dir).map_err(|e| Failure::from(Error::Io { path: dir.clone(), source: e }))?;
    write_json(&dir.join("config.json"), &cfg)?;
    Ok((data, cfg, dir))
}

/// Reads and validates a manifest; a directory resolves to `dir/default_file`,
/// falling back to `dir/manifest.json`. Missing or malformed inputs are usage errors.
fn read_manifest(path: &Path, default_file: &str) -> Result<DatasetManifest, Failure> {
    let file = if path.is_dir() {
        let preferred = path.join(default_file);
        if preferred.is_file() {
            preferred
        } else {
            path.join("manifest.json")
        }
    } else {
        path.to_path_buf()
    };
    if !file.is_file() {
        return Err(Failure::usage(format!("manifest not found: {}", file.display())));
    }
    let m = DatasetManifest::read(&file).map_err(Failure::usage_from)?;
    m.validate().map_err(Failure::usage_from)?;
    Ok(m)
}

fn checkpoint_path(p: &Path) -> Result<PathBuf, Failure> {
    let file = if p.is_dir() { p.join(CHECKPOINT_FILE) } else { p.to_path_buf() };
    if !file.is_file() {
        return Err(Failure::usage(format!("checkpoint not found: {}", file.display())));
    }
    Ok(file)
}

/// `run/checkpoints/best.ckpt` belongs to `run`.
fn run_dir_of(ckpt: &Path) -> PathBuf {
    ckpt.parent()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn report_run(rec: pipeline::RunRecord, dir: &Path) -> Result<(), Failure> {
    println!(
        "{} best_epoch={} best_val_dice={:.4} checkpoint={}",
        dir.display(),
        rec.best_epoch,
        rec.best_val_dice,
        rec.checkpoint.display()
    );
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::from(Error::Validation(e.to_string())))?;
    std::fs::write(path, text + "\n").map_err(|e| Failure::from(Error::Io { path: path.to_path_buf(), source: e }))
}
