//! Command-line front end.
//!
//! Subcommands cover the whole workflow: `synth` (stand-in corpus), `train`,
//! `attack` (fgsm/cw/deepfool), `universal`, `dream`, `gradcam`, `pipeline`,
//! `eval`, and `report`. Every run writes under `--out` with the fixed
//! layout `checkpoints/`, `adversarial/`, `perturbations/`, `reports/`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime/training
//! error. The default seed comes from `PERTURBFORGE_SEED`, else 0.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::attacks::{
    apply_perturbation, cw_l2, deepfool, fgsm, run_transfer_evaluation, universal_perturbation,
    AttackError, AttackReport, CwConfig, DeepFoolConfig, FgsmConfig, TransferExample,
    UniversalConfig,
};
use crate::corpus::{
    generate_synthetic_corpus, load_manifest, save_manifest, split_corpus, CorpusError,
    CorpusManifest, Label, ManifestEntry, Split, SyntheticSpec,
};
use crate::evaluation::{
    accuracy, density_histogram, mann_whitney_u, roc_auc, skewness, spam_score, spam_scores,
    write_heatmap_csv, write_histogram_csv, write_roc_csv, average_cam_heatmap, EvalError,
    UTestMethod,
};
use crate::imaging::{load_image, resize_bilinear, save_image, ImagingError};
use crate::inceptionism::{
    blend_batch, cam_to_mask, deep_dream, grad_cam, DreamConfig, InceptionismError,
    DEFAULT_BLEND_WEIGHTS,
};
use crate::nn::{
    build_classifier, build_surrogate, load_checkpoint, prepare_input, save_checkpoint, train,
    Arch, Model, ModelError, TrainConfig,
};
use crate::pipeline::{build_adversarial_corpus, stage_timings, PipelineConfig, PipelineError};

pub const SEED_ENV_VAR: &str = "PERTURBFORGE_SEED";

const EXIT_OK: i32 = 0;
const EXIT_USAGE: i32 = 1;
const EXIT_DATA: i32 = 2;
const EXIT_RUNTIME: i32 = 3;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::InvalidSpec(_) | CorpusError::BadFraction(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ImagingError> for CliError {
    fn from(e: ImagingError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidSpec(_) => CliError::Usage(e.to_string()),
            ModelError::Format { .. }
            | ModelError::Io { .. }
            | ModelError::Corpus(_)
            | ModelError::Imaging(_)
            | ModelError::EmptyClass { .. } => CliError::Data(e.to_string()),
            ModelError::TrainingDiverged { .. } | ModelError::Tensor(_) => {
                CliError::Runtime(e.to_string())
            }
        }
    }
}

impl From<AttackError> for CliError {
    fn from(e: AttackError) -> Self {
        match e {
            AttackError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            AttackError::Report { .. } | AttackError::Imaging(_) => CliError::Data(e.to_string()),
            AttackError::Model(m) => CliError::from(m),
            AttackError::DegenerateGradient => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<InceptionismError> for CliError {
    fn from(e: InceptionismError) -> Self {
        match e {
            InceptionismError::UnsupportedModel(_) | InceptionismError::InvalidInput(_) => {
                CliError::Usage(e.to_string())
            }
            InceptionismError::Model(m) => CliError::from(m),
            InceptionismError::Imaging(i) => CliError::from(i),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => CliError::from(m),
            EvalError::Imaging(i) => CliError::from(i),
            EvalError::Inceptionism(i) => CliError::from(i),
            EvalError::Io { .. } => CliError::Data(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            PipelineError::Io { .. } => CliError::Data(e.to_string()),
            PipelineError::Model(m) => CliError::from(m),
            PipelineError::Corpus(c) => CliError::from(c),
            PipelineError::Imaging(i) => CliError::from(i),
            PipelineError::Attack(a) => CliError::from(a),
            PipelineError::Inceptionism(i) => CliError::from(i),
            PipelineError::Eval(ev) => CliError::from(ev),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "perturbforge",
    version,
    about = "Train small image-spam classifiers, attack them, and measure the damage"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic spam/ham corpus with a train/test split.
    Synth(SynthArgs),
    /// Train a classifier or surrogate on a corpus manifest.
    Train(TrainArgs),
    /// Run a per-example attack (fgsm, cw, deepfool) with transfer scoring.
    Attack(AttackArgs),
    /// Fit a universal perturbation, then apply and score it.
    Universal(UniversalArgs),
    /// Generate natural perturbations from ham images.
    Dream(DreamArgs),
    /// Emit class activation maps, masks, and the averaged heatmap.
    Gradcam(GradcamArgs),
    /// Build the modified adversarial spam corpus end to end.
    Pipeline(PipelineArgs),
    /// Score a checkpoint on a manifest split.
    Eval(EvalArgs),
    /// Consolidate every report in a run directory into tables.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ArchArg {
    Mlp,
    Cnn,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Arch {
        match a {
            ArchArg::Mlp => Arch::Mlp,
            ArchArg::Cnn => Arch::Cnn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    fn to_option(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ClassArg {
    Spam,
    Ham,
    Both,
}

impl ClassArg {
    fn to_option(self) -> Option<Label> {
        match self {
            ClassArg::Spam => Some(Label::Spam),
            ClassArg::Ham => Some(Label::Ham),
            ClassArg::Both => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Fgsm,
    Cw,
    Deepfool,
}

impl MethodArg {
    fn name(self) -> &'static str {
        match self {
            MethodArg::Fgsm => "fgsm",
            MethodArg::Cw => "cw",
            MethodArg::Deepfool => "deepfool",
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Spam image count.
    #[arg(long)]
    spam: usize,
    /// Ham image count.
    #[arg(long)]
    ham: usize,
    #[arg(long, default_value_t = 400)]
    size: usize,
    #[arg(long, default_value_t = 0.1)]
    noise_level: f32,
    #[arg(long, default_value_t = 0.5)]
    text_density: f32,
    #[arg(long, default_value_t = 0.15)]
    test_fraction: f32,
    #[arg(long)]
    corpus_id: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    arch: ArchArg,
    /// Build the 400x400 surrogate variant.
    #[arg(long)]
    surrogate: bool,
    /// Train with inverted labels (for activation maximization).
    #[arg(long)]
    inverted: bool,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f32,
    #[arg(long, default_value_t = 0.9)]
    momentum: f32,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint file name (default derives from the flags).
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Surrogate checkpoint the attack is crafted on.
    #[arg(long)]
    surrogate: PathBuf,
    /// Base checkpoint attacked through transfer.
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long, value_enum, default_value_t = ClassArg::Spam)]
    class: ClassArg,
    /// Cap the number of attacked examples.
    #[arg(long)]
    limit: Option<usize>,
    /// FGSM perturbation magnitude.
    #[arg(long)]
    epsilon: Option<f32>,
    /// C&W target confidence.
    #[arg(long)]
    target_confidence: Option<f32>,
    /// C&W learning rate.
    #[arg(long)]
    learning_rate: Option<f32>,
    #[arg(long)]
    binary_search_steps: Option<usize>,
    /// C&W / DeepFool iteration cap.
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    initial_tradeoff: Option<f32>,
    /// DeepFool overshoot parameter.
    #[arg(long)]
    overshoot: Option<f32>,
    #[arg(long)]
    class_gradients: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct UniversalArgs {
    #[arg(long)]
    surrogate: PathBuf,
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Split the perturbation is fit on.
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    fit_split: SplitArg,
    /// Split the perturbation is applied to and scored on.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    eval_split: SplitArg,
    #[arg(long, value_enum, default_value_t = ClassArg::Spam)]
    class: ClassArg,
    #[arg(long, default_value_t = 0.0)]
    target_accuracy: f32,
    #[arg(long, default_value_t = 250)]
    max_iterations: usize,
    /// L-infinity budget on the 0-255 pixel scale.
    #[arg(long, default_value_t = 64.0)]
    step_size: f32,
    /// Epsilon of the inner FGSM base attack.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f32,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DreamArgs {
    /// Inverted-label checkpoint driving the ascent.
    #[arg(long)]
    inverted: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    split: SplitArg,
    #[arg(long, default_value_t = 64)]
    iterations: usize,
    #[arg(long, default_value_t = 0.001)]
    update_size: f32,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcamArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    split: SplitArg,
    #[arg(long, value_enum, default_value_t = ClassArg::Spam)]
    class: ClassArg,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Normal-label CNN checkpoint (Grad-CAM source).
    #[arg(long)]
    base_cnn: PathBuf,
    /// Inverted-label CNN checkpoint (dream source).
    #[arg(long)]
    inverted_cnn: PathBuf,
    /// Surrogate CNN checkpoint (universal fit and scoring).
    #[arg(long)]
    surrogate: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    split: SplitArg,
    #[arg(long, default_value_t = 0.5)]
    alpha: f32,
    /// Reuse a stored universal perturbation instead of refitting.
    #[arg(long)]
    universal_artifact: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    target_accuracy: f32,
    #[arg(long, default_value_t = 250)]
    max_iterations: usize,
    #[arg(long, default_value_t = 64.0)]
    step_size: f32,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f32,
    #[arg(long, default_value_t = 64)]
    iterations: usize,
    #[arg(long, default_value_t = 0.001)]
    update_size: f32,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Report name stem.
    #[arg(long, default_value = "clean")]
    name: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory containing reports/.
    #[arg(long)]
    run: PathBuf,
}

/// Entry point used by the binary: parse `std::env::args` and run.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Parse and execute; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own usage text; help/version requests exit 0.
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Universal(a) => cmd_universal(a),
        Command::Dream(a) => cmd_dream(a),
        Command::Gradcam(a) => cmd_gradcam(a),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| {
        std::env::var(SEED_ENV_VAR)
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .unwrap_or(0)
}

fn ensure_run_layout(out: &Path) -> Result<(), CliError> {
    for sub in ["checkpoints", "adversarial", "perturbations", "reports"] {
        std::fs::create_dir_all(out.join(sub))?;
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    let ckpt = load_checkpoint(path)?;
    Ok(Model::from_checkpoint(&ckpt)?)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    std::fs::write(path, serde_json::to_string_pretty(value).expect("json"))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let seed = resolve_seed(a.seed);
    let spec = SyntheticSpec {
        spam_count: a.spam,
        ham_count: a.ham,
        image_size: a.size,
        seed,
        noise_level: a.noise_level,
        text_density: a.text_density,
    };
    let corpus_dir = a.out.join("corpus");
    let mut manifest = generate_synthetic_corpus(&spec, &corpus_dir)?;
    if let Some(id) = a.corpus_id {
        manifest.corpus_id = id;
    }
    let manifest = split_corpus(&manifest, a.test_fraction, seed)?;
    let manifest_path = corpus_dir.join("manifest.jsonl");
    save_manifest(&manifest, &manifest_path)?;
    println!(
        "wrote {} entries ({} train / {} test) to {}",
        manifest.entries.len(),
        manifest.count(Some(Split::Train), None),
        manifest.count(Some(Split::Test), None),
        manifest_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    ensure_run_layout(&a.out)?;
    let manifest = load_manifest(&a.manifest)?;
    let arch: Arch = a.arch.into();
    let mut spec = if a.surrogate {
        build_surrogate(arch)
    } else {
        build_classifier(arch, [64, 32, 3])
    };
    spec.labels_inverted = a.inverted;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate.into(),
        momentum: a.momentum.into(),
        seed: resolve_seed(a.seed),
    };
    let started = Instant::now();
    let ckpt = train(&spec, &manifest, &cfg)?;
    let name = a.name.unwrap_or_else(|| {
        format!(
            "{arch}{}{}",
            if a.surrogate { "-surrogate" } else { "" },
            if a.inverted { "-inverted" } else { "" }
        )
    });
    let path = a.out.join("checkpoints").join(format!("{name}.pfck"));
    save_checkpoint(&ckpt, &path)?;
    println!(
        "trained {name} in {:.1}s: train accuracy {:.3}, test accuracy {}",
        started.elapsed().as_secs_f64(),
        ckpt.meta.train_accuracy,
        ckpt.meta
            .test_accuracy
            .map(|v| format!("{v:.3}"))
            .unwrap_or_else(|| "n/a".into()),
    );
    println!("checkpoint: {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

struct AttackedExample {
    entry: ManifestEntry,
    original: crate::imaging::ImageBuffer,
    adversarial: crate::imaging::ImageBuffer,
    seconds: f64,
    surrogate_success: bool,
}

fn surrogate_fooled(
    surrogate: &Model,
    adv: &crate::imaging::ImageBuffer,
    label: Label,
) -> Result<bool, CliError> {
    let (class, _) = surrogate.predict_image(adv)?;
    Ok(surrogate.spec.label_of(class) != label)
}

fn select_entries<'m>(
    manifest: &'m CorpusManifest,
    split: SplitArg,
    class: ClassArg,
    limit: Option<usize>,
) -> Vec<&'m ManifestEntry> {
    let mut entries = manifest.select(split.to_option(), class.to_option());
    if let Some(limit) = limit {
        entries.truncate(limit);
    }
    entries
}

/// Score adversarial examples on the base model, write the report CSV, the
/// ROC score CSV (adversarial class + clean other class), and a meta record.
fn write_attack_outputs(
    method: &str,
    out: &Path,
    manifest_path: &Path,
    manifest: &CorpusManifest,
    base: &Model,
    attacked: &[AttackedExample],
    holdout: &[&ManifestEntry],
    meta_extra: serde_json::Value,
) -> Result<AttackReport, CliError> {
    let examples: Vec<TransferExample> = attacked
        .iter()
        .map(|a| TransferExample {
            original_rel: a.entry.path.clone(),
            adversarial_rel: PathBuf::from(format!(
                "adversarial/{method}/{}",
                a.entry.path.file_name().unwrap_or_default().to_string_lossy()
            )),
            original: a.original.clone(),
            adversarial: a.adversarial.clone(),
            true_label: a.entry.label,
            surrogate_success: a.surrogate_success,
            seconds: a.seconds,
        })
        .collect();
    let report = run_transfer_evaluation(&examples, base)?;
    let report_path = out.join("reports").join(format!("{method}_report.csv"));
    report.write_csv(&report_path)?;

    // ROC scores: base-model spam probability on the attacked images plus
    // the untouched other-class images from the same pool.
    let mut score_rows: Vec<(String, Label, f32)> = attacked
        .par_iter()
        .map(|a| -> Result<_, CliError> {
            let s = spam_score(base, &a.adversarial)?;
            Ok((a.entry.path.to_string_lossy().to_string(), a.entry.label, s))
        })
        .collect::<Result<Vec<_>, _>>()?;
    for entry in holdout {
        let img = load_image(manifest.resolve(entry))?;
        let s = spam_score(base, &img)?;
        score_rows.push((entry.path.to_string_lossy().to_string(), entry.label, s));
    }
    let mut csv = String::from("path,label,score\n");
    for (path, label, score) in &score_rows {
        csv.push_str(&format!("{path},{label},{score}\n"));
    }
    std::fs::write(out.join("reports").join(format!("{method}_scores.csv")), csv)?;

    let meta = json!({
        "method": method,
        "manifest": manifest_path.to_string_lossy(),
        "examples": attacked.len(),
        "mean_accuracy": report.aggregates.mean_accuracy,
        "mean_l2": report.aggregates.mean_l2,
        "mean_seconds": report.aggregates.mean_seconds,
        "params": meta_extra,
    });
    write_json(&out.join("reports").join(format!("{method}_meta.json")), &meta)?;
    Ok(report)
}

fn cmd_attack(a: AttackArgs) -> Result<(), CliError> {
    ensure_run_layout(&a.out)?;
    let manifest = load_manifest(&a.manifest)?;
    let surrogate = load_model(&a.surrogate)?;
    let base = load_model(&a.base)?;
    let entries = select_entries(&manifest, a.split, a.class, a.limit);
    if entries.is_empty() {
        return Err(CliError::Data(format!(
            "no matching entries in {} for the requested split/class",
            a.manifest.display()
        )));
    }
    let method = a.method.name();
    let [sh, sw, _] = surrogate.spec.input_shape;
    std::fs::create_dir_all(a.out.join("adversarial").join(method))?;

    enum MethodConfig {
        Fgsm(FgsmConfig),
        Cw(CwConfig),
        DeepFool(DeepFoolConfig),
    }
    let mcfg = match a.method {
        MethodArg::Fgsm => MethodConfig::Fgsm(FgsmConfig {
            epsilon: a.epsilon.unwrap_or(0.1),
        }),
        MethodArg::Cw => MethodConfig::Cw(CwConfig {
            confidence: a.target_confidence.unwrap_or(0.0),
            learning_rate: a.learning_rate.unwrap_or(0.001),
            binary_search_steps: a.binary_search_steps.unwrap_or(20),
            max_iterations: a.max_iterations.unwrap_or(250),
            initial_tradeoff: a.initial_tradeoff.unwrap_or(100.0),
            batch_size: a.batch_size.unwrap_or(1),
        }),
        MethodArg::Deepfool => MethodConfig::DeepFool(DeepFoolConfig {
            max_iterations: a.max_iterations.unwrap_or(500),
            overshoot: a.overshoot.unwrap_or(1e-6),
            class_gradients: a.class_gradients.unwrap_or(10),
            batch_size: a.batch_size.unwrap_or(1),
        }),
    };

    let attacked: Vec<AttackedExample> = entries
        .par_iter()
        .map(|entry| -> Result<AttackedExample, CliError> {
            let img = load_image(manifest.resolve(entry))?;
            let img = if img.height() == sh && img.width() == sw {
                img
            } else {
                resize_bilinear(&img, sh, sw)?
            };
            let started = Instant::now();
            let adv = match &mcfg {
                MethodConfig::Fgsm(cfg) => fgsm(&surrogate, &img, entry.label, cfg)?,
                MethodConfig::Cw(cfg) => cw_l2(&surrogate, &img, entry.label, cfg)?.image,
                MethodConfig::DeepFool(cfg) => {
                    deepfool(&surrogate, &img, entry.label, cfg)?.image
                }
            };
            let seconds = started.elapsed().as_secs_f64();
            let surrogate_success = surrogate_fooled(&surrogate, &adv, entry.label)?;
            let name = entry.path.file_name().unwrap_or_default().to_string_lossy();
            save_image(&adv, a.out.join("adversarial").join(method).join(format!("{name}")))?;
            Ok(AttackedExample {
                entry: (*entry).clone(),
                original: img,
                adversarial: adv,
                seconds,
                surrogate_success,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let holdout_class = match a.class {
        ClassArg::Spam => Some(Label::Ham),
        ClassArg::Ham => Some(Label::Spam),
        ClassArg::Both => None,
    };
    let holdout = match holdout_class {
        Some(label) => manifest.select(a.split.to_option(), Some(label)),
        None => Vec::new(),
    };

    let params = match &mcfg {
        MethodConfig::Fgsm(c) => json!({"epsilon": c.epsilon}),
        MethodConfig::Cw(c) => json!({
            "target_confidence": c.confidence,
            "learning_rate": c.learning_rate,
            "binary_search_steps": c.binary_search_steps,
            "max_iterations": c.max_iterations,
            "initial_tradeoff": c.initial_tradeoff,
            "batch_size": c.batch_size,
        }),
        MethodConfig::DeepFool(c) => json!({
            "max_iterations": c.max_iterations,
            "overshoot": c.overshoot,
            "class_gradients": c.class_gradients,
            "batch_size": c.batch_size,
        }),
    };
    let report = write_attack_outputs(
        method,
        &a.out,
        &a.manifest,
        &manifest,
        &base,
        &attacked,
        &holdout,
        params,
    )?;
    println!(
        "{method}: {} examples, base-model accuracy {:.3}, mean L2 {:.2}, mean time {:.3}s",
        report.records.len(),
        report.aggregates.mean_accuracy,
        report.aggregates.mean_l2,
        report.aggregates.mean_seconds
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// universal
// ---------------------------------------------------------------------------

fn cmd_universal(a: UniversalArgs) -> Result<(), CliError> {
    ensure_run_layout(&a.out)?;
    let manifest = load_manifest(&a.manifest)?;
    let surrogate = load_model(&a.surrogate)?;
    let base = load_model(&a.base)?;
    let seed = resolve_seed(a.seed);
    let [sh, sw, _] = surrogate.spec.input_shape;

    let fit_entries = select_entries(&manifest, a.fit_split, a.class, a.limit);
    if fit_entries.is_empty() {
        return Err(CliError::Data("the fit split selected no entries".into()));
    }
    let fit_set: Vec<(crate::imaging::ImageBuffer, Label)> = fit_entries
        .par_iter()
        .map(|entry| -> Result<_, CliError> {
            let img = load_image(manifest.resolve(entry))?;
            let img = if img.height() == sh && img.width() == sw {
                img
            } else {
                resize_bilinear(&img, sh, sw)?
            };
            Ok((img, entry.label))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let cfg = UniversalConfig {
        target_accuracy: a.target_accuracy,
        max_iterations: a.max_iterations,
        xi: a.step_size / 255.0,
        fgsm_epsilon: a.epsilon,
        seed,
    };
    let fit_started = Instant::now();
    let (artifact, stats) = universal_perturbation(&surrogate, &fit_set, &cfg)?;
    let fit_seconds = fit_started.elapsed().as_secs_f64();
    let artifact_path = a.out.join("perturbations/universal.uprt");
    artifact.save(&artifact_path)?;

    // Apply the one perturbation to the eval split and transfer-score it.
    let eval_entries = select_entries(&manifest, a.eval_split, a.class, a.limit);
    if eval_entries.is_empty() {
        return Err(CliError::Data("the eval split selected no entries".into()));
    }
    std::fs::create_dir_all(a.out.join("adversarial/universal"))?;
    let attacked: Vec<AttackedExample> = eval_entries
        .par_iter()
        .map(|entry| -> Result<_, CliError> {
            let img = load_image(manifest.resolve(entry))?;
            let img = if img.height() == sh && img.width() == sw {
                img
            } else {
                resize_bilinear(&img, sh, sw)?
            };
            let started = Instant::now();
            let adv = apply_perturbation(&img, &artifact.tensor)?;
            let seconds = started.elapsed().as_secs_f64();
            let surrogate_success = surrogate_fooled(&surrogate, &adv, entry.label)?;
            let name = entry.path.file_name().unwrap_or_default().to_string_lossy();
            save_image(&adv, a.out.join("adversarial/universal").join(format!("{name}")))?;
            Ok(AttackedExample {
                entry: (*entry).clone(),
                original: img,
                adversarial: adv,
                seconds,
                surrogate_success,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let holdout_class = match a.class {
        ClassArg::Spam => Some(Label::Ham),
        ClassArg::Ham => Some(Label::Spam),
        ClassArg::Both => None,
    };
    let holdout = match holdout_class {
        Some(label) => manifest.select(a.eval_split.to_option(), Some(label)),
        None => Vec::new(),
    };
    let params = json!({
        "target_accuracy": a.target_accuracy,
        "max_iterations": a.max_iterations,
        "step_size": a.step_size,
        "xi": cfg.xi,
        "fgsm_epsilon": a.epsilon,
        "seed": seed,
        "artifact_hash": artifact.content_hash(),
        "fit_passes": stats.passes,
        "fit_fooling_rate": stats.fooling_rate,
        "fit_seconds": fit_seconds,
        "reached_target": stats.reached_target,
    });
    let report = write_attack_outputs(
        "universal",
        &a.out,
        &a.manifest,
        &manifest,
        &base,
        &attacked,
        &holdout,
        params,
    )?;
    println!(
        "universal: fit {} passes (fooling {:.3}), base-model accuracy {:.3}, mean L2 {:.2}",
        stats.passes, stats.fooling_rate, report.aggregates.mean_accuracy, report.aggregates.mean_l2
    );
    println!("artifact: {} (hash {})", artifact_path.display(), artifact.content_hash());
    Ok(())
}

// ---------------------------------------------------------------------------
// dream
// ---------------------------------------------------------------------------

fn cmd_dream(a: DreamArgs) -> Result<(), CliError> {
    std::fs::create_dir_all(a.out.join("natural"))?;
    let manifest = load_manifest(&a.manifest)?;
    let inverted = load_model(&a.inverted)?;
    let cfg = DreamConfig {
        iterations: a.iterations,
        step: a.update_size,
    };
    let entries = select_entries(&manifest, a.split, ClassArg::Ham, a.limit);
    if entries.len() < 4 {
        return Err(CliError::Data(format!(
            "need at least 4 ham images to blend, found {}",
            entries.len()
        )));
    }
    let [h, w, _] = inverted.spec.input_shape;
    let dreams: Vec<(PathBuf, crate::imaging::ImageBuffer)> = entries
        .par_iter()
        .map(|entry| -> Result<_, CliError> {
            let img = load_image(manifest.resolve(entry))?;
            let img = if img.height() == h && img.width() == w {
                img
            } else {
                resize_bilinear(&img, h, w)?
            };
            let outcome = deep_dream(&inverted, &img, &cfg)?;
            if outcome.zero_gradient {
                eprintln!("warning: zero gradient at {}", entry.path.display());
            }
            Ok((entry.path.clone(), outcome.image))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut provenance = String::new();
    let mut count = 0;
    for (i, chunk) in dreams.chunks_exact(4).enumerate() {
        let images: Vec<_> = chunk.iter().map(|(_, img)| img.clone()).collect();
        let sources: Vec<_> = chunk.iter().map(|(p, _)| p.clone()).collect();
        let np = blend_batch(&images, &DEFAULT_BLEND_WEIGHTS, sources)?;
        let rel = format!("natural/natural_{i:04}.png");
        save_image(&np.image, a.out.join(&rel))?;
        provenance.push_str(
            &serde_json::to_string(&json!({
                "file": rel,
                "sources": np.sources,
                "weights": np.weights,
            }))
            .expect("json"),
        );
        provenance.push('\n');
        count += 1;
    }
    std::fs::write(a.out.join("natural/provenance.jsonl"), provenance)?;
    println!("wrote {count} natural perturbations from {} dreams", dreams.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcam
// ---------------------------------------------------------------------------

fn cmd_gradcam(a: GradcamArgs) -> Result<(), CliError> {
    std::fs::create_dir_all(a.out.join("reports/cams"))?;
    std::fs::create_dir_all(a.out.join("masks"))?;
    let manifest = load_manifest(&a.manifest)?;
    let model = load_model(&a.checkpoint)?;
    let entries = select_entries(&manifest, a.split, a.class, a.limit);
    if entries.is_empty() {
        return Err(CliError::Data("no matching entries".into()));
    }
    entries
        .par_iter()
        .map(|entry| -> Result<(), CliError> {
            let img = load_image(manifest.resolve(entry))?;
            let x = prepare_input(&model.spec, &img)?;
            let cam = grad_cam(&model, &x)?;
            let stem = entry
                .path
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .to_string();
            let mut csv = String::new();
            for row in cam.values.chunks(cam.width) {
                let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                csv.push_str(&cells.join(","));
                csv.push('\n');
            }
            std::fs::write(a.out.join("reports/cams").join(format!("{stem}_cam.csv")), csv)?;
            let mask = cam_to_mask(&cam, 400, 400)?;
            save_image(&mask, a.out.join("masks").join(format!("{stem}_mask.png")))?;
            Ok(())
        })
        .collect::<Result<Vec<_>, _>>()?;

    let heatmap = average_cam_heatmap(&model, &manifest, a.split.to_option())?;
    write_heatmap_csv(&heatmap, &a.out.join("reports/heatmap.csv"))?;
    println!(
        "wrote {} CAMs; averaged heatmap variance {:.6} over {} samples",
        entries.len(),
        heatmap.spatial_variance(),
        heatmap.samples
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

fn cmd_pipeline(a: PipelineArgs) -> Result<(), CliError> {
    ensure_run_layout(&a.out)?;
    let manifest = load_manifest(&a.manifest)?;
    let base_cnn = load_model(&a.base_cnn)?;
    let inverted_cnn = load_model(&a.inverted_cnn)?;
    let surrogate = load_model(&a.surrogate)?;
    for (name, model) in [
        ("base-cnn", &base_cnn),
        ("inverted-cnn", &inverted_cnn),
        ("surrogate", &surrogate),
    ] {
        if model.spec.last_conv_layer().is_none() {
            return Err(CliError::Usage(format!(
                "the pipeline requires CNN checkpoints; {name} has no conv layer"
            )));
        }
    }
    if !inverted_cnn.spec.labels_inverted {
        return Err(CliError::Usage(
            "the dream model must be trained with inverted labels".into(),
        ));
    }
    let seed = resolve_seed(a.seed);
    let cfg = PipelineConfig {
        split: a.split.to_option(),
        universal: UniversalConfig {
            target_accuracy: a.target_accuracy,
            max_iterations: a.max_iterations,
            xi: a.step_size / 255.0,
            fgsm_epsilon: a.epsilon,
            seed,
        },
        dream: DreamConfig {
            iterations: a.iterations,
            step: a.update_size,
        },
        alpha: a.alpha,
        refit_universal: a.universal_artifact.is_none(),
        universal_artifact: a.universal_artifact.clone(),
        seed,
        out_dir: a.out.clone(),
    };
    let output = build_adversarial_corpus(&base_cnn, &inverted_cnn, &surrogate, &manifest, &cfg)?;

    // Transfer-score the finished corpus against the base model, and write
    // the per-stage timing breakdown separately.
    let examples: Vec<TransferExample> = output
        .records
        .iter()
        .filter(|r| r.error.is_none())
        .map(|r| -> Result<TransferExample, CliError> {
            let entry = manifest
                .entries
                .iter()
                .find(|e| e.path == r.original)
                .ok_or_else(|| CliError::Data(format!("{} not in manifest", r.original.display())))?;
            let original = load_image(manifest.resolve(entry))?;
            let [sh, sw, _] = surrogate.spec.input_shape;
            let original = if original.height() == sh && original.width() == sw {
                original
            } else {
                resize_bilinear(&original, sh, sw)?
            };
            let out_rel = r.output.clone().expect("successful record has output");
            let adversarial = load_image(a.out.join(&out_rel))?;
            let surrogate_success = surrogate_fooled(&surrogate, &adversarial, Label::Spam)?;
            Ok(TransferExample {
                original_rel: r.original.clone(),
                adversarial_rel: out_rel,
                original,
                adversarial,
                true_label: Label::Spam,
                surrogate_success,
                seconds: r.stages.total,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let report = run_transfer_evaluation(&examples, &base_cnn)?;
    report.write_csv(a.out.join("reports/pipeline_report.csv"))?;

    let mut timing_csv = String::from("original,cam,mask,natural,universal_apply,total\n");
    for r in output.records.iter().filter(|r| r.error.is_none()) {
        timing_csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.original.display(),
            r.stages.cam,
            r.stages.mask,
            r.stages.natural,
            r.stages.universal_apply,
            r.stages.total
        ));
    }
    std::fs::write(a.out.join("reports/pipeline_timings.csv"), timing_csv)?;

    // ROC scores for the pipeline as an attack method.
    let mut score_rows = String::from("path,label,score\n");
    for ex in &examples {
        let s = spam_score(&base_cnn, &ex.adversarial)?;
        score_rows.push_str(&format!("{},spam,{}\n", ex.original_rel.display(), s));
    }
    for entry in manifest.select(cfg.split, Some(Label::Ham)) {
        let img = load_image(manifest.resolve(entry))?;
        let s = spam_score(&base_cnn, &img)?;
        score_rows.push_str(&format!("{},ham,{}\n", entry.path.display(), s));
    }
    std::fs::write(a.out.join("reports/pipeline_scores.csv"), score_rows)?;

    let stage_means = stage_timings(&output.records);
    let summary = json!({
        "method": "pipeline",
        "manifest": a.manifest.to_string_lossy(),
        "outputs": output.manifest.entries.len(),
        "failures": output.failures,
        "natural_perturbations": output.naturals.len(),
        "artifact_hash": output.artifact_hash,
        "universal_stats": output.universal_stats.as_ref().map(|s| json!({
            "passes": s.passes,
            "final_accuracy": s.final_accuracy,
            "fooling_rate": s.fooling_rate,
            "reached_target": s.reached_target,
        })),
        "universal_fit_seconds": output.universal_fit_seconds,
        "dream_seconds": output.dream_seconds,
        "stage_means": stage_means,
        "mean_accuracy": report.aggregates.mean_accuracy,
        "mean_l2": report.aggregates.mean_l2,
        "mean_seconds": report.aggregates.mean_seconds,
    });
    write_json(&a.out.join("reports/pipeline_meta.json"), &summary)?;
    println!(
        "pipeline: {} outputs ({} failures), base-model accuracy {:.3}, artifact {}",
        output.manifest.entries.len(),
        output.failures,
        report.aggregates.mean_accuracy,
        output.artifact_hash.as_deref().unwrap_or("none")
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    ensure_run_layout(&a.out)?;
    let manifest = load_manifest(&a.manifest)?;
    let model = load_model(&a.checkpoint)?;
    let split = a.split.to_option();
    let acc = accuracy(&model, &manifest, split)?;
    let scores = spam_scores(&model, &manifest, split)?;

    let mut csv = String::from("path,label,score\n");
    for (path, label, score) in &scores {
        csv.push_str(&format!("{},{label},{score}\n", path.display()));
    }
    std::fs::write(
        a.out.join("reports").join(format!("eval_{}_scores.csv", a.name)),
        csv,
    )?;

    let labels: Vec<bool> = scores.iter().map(|(_, l, _)| *l == Label::Spam).collect();
    let values: Vec<f32> = scores.iter().map(|(_, _, s)| *s).collect();
    let auc = match roc_auc(&values, &labels) {
        Ok(curve) => {
            write_roc_csv(&curve, a.out.join("reports").join(format!("roc_{}.csv", a.name)))?;
            Some(curve.auc)
        }
        Err(EvalError::SingleClass(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let summary = json!({
        "name": a.name,
        "checkpoint": a.checkpoint.to_string_lossy(),
        "manifest": a.manifest.to_string_lossy(),
        "split": format!("{:?}", a.split).to_lowercase(),
        "examples": scores.len(),
        "accuracy": acc,
        "auc": auc,
    });
    write_json(
        &a.out.join("reports").join(format!("eval_{}_meta.json", a.name)),
        &summary,
    )?;
    println!(
        "eval {}: accuracy {:.4} over {} examples{}",
        a.name,
        acc,
        scores.len(),
        auc.map(|v| format!(", AUC {v:.4}")).unwrap_or_default()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct MethodSummary {
    method: String,
    examples: usize,
    mean_accuracy: f64,
    mean_l2: f64,
    mean_seconds: f64,
    auc: Option<f64>,
    l2_skewness: Option<f64>,
}

fn batched_accuracy(correct: &[bool], batch: usize) -> Vec<f32> {
    correct
        .chunks(batch)
        .map(|c| c.iter().filter(|&&v| v).count() as f32 / c.len() as f32)
        .collect()
}

fn cmd_report(a: ReportArgs) -> Result<(), CliError> {
    let reports_dir = a.run.join("reports");
    if !reports_dir.is_dir() {
        return Err(CliError::Data(format!(
            "{} is missing; expected a run directory containing reports/<method>_report.csv, \
             reports/<method>_scores.csv, and reports/<method>_meta.json",
            reports_dir.display()
        )));
    }
    let mut methods: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(&reports_dir)? {
        let name = entry?.file_name().to_string_lossy().to_string();
        if let Some(stem) = name.strip_suffix("_report.csv") {
            methods.push(stem.to_string());
        }
    }
    methods.sort();
    let mut eval_names: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(&reports_dir)? {
        let name = entry?.file_name().to_string_lossy().to_string();
        if let Some(stem) = name.strip_suffix("_meta.json") {
            if let Some(eval) = stem.strip_prefix("eval_") {
                eval_names.push(eval.to_string());
            }
        }
    }
    eval_names.sort();
    if methods.is_empty() && eval_names.is_empty() {
        return Err(CliError::Data(format!(
            "no reports found under {}; expected files matching reports/<method>_report.csv \
             (methods: fgsm, cw, deepfool, universal, pipeline) or reports/eval_<name>_meta.json",
            reports_dir.display()
        )));
    }

    let summary_dir = reports_dir.join("summary");
    std::fs::create_dir_all(&summary_dir)?;

    // True labels come from each method's manifest (recorded in its meta).
    let mut summaries: Vec<MethodSummary> = Vec::new();
    let mut per_method_correct: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    let mut per_method_l2: BTreeMap<String, Vec<f32>> = BTreeMap::new();

    for method in &methods {
        let meta_path = reports_dir.join(format!("{method}_meta.json"));
        let meta: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(&meta_path)
                .map_err(|e| CliError::Data(format!("{}: {e}", meta_path.display())))?,
        )
        .map_err(|e| CliError::Data(format!("{}: {e}", meta_path.display())))?;
        let manifest_path = meta
            .get("manifest")
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                CliError::Data(format!("{}: missing manifest field", meta_path.display()))
            })?;
        let manifest = load_manifest(manifest_path)?;
        let label_of: BTreeMap<PathBuf, Label> = manifest
            .entries
            .iter()
            .map(|e| (e.path.clone(), e.label))
            .collect();

        let report_path = reports_dir.join(format!("{method}_report.csv"));
        let report = AttackReport::read_csv(&report_path, |r| {
            label_of
                .get(&r.original)
                .map(|&l| l == r.base_label)
                .unwrap_or(false)
        })?;
        let correct: Vec<bool> = report
            .records
            .iter()
            .map(|r| label_of.get(&r.original).map(|&l| l == r.base_label).unwrap_or(false))
            .collect();
        let l2s: Vec<f32> = report.records.iter().map(|r| r.l2 as f32).collect();

        // ROC from the stored scores.
        let scores_path = reports_dir.join(format!("{method}_scores.csv"));
        let auc = if scores_path.is_file() {
            let text = std::fs::read_to_string(&scores_path)?;
            let mut values = Vec::new();
            let mut labels = Vec::new();
            for line in text.lines().skip(1) {
                let mut parts = line.rsplitn(3, ',');
                let score: f32 = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| CliError::Data(format!("{}: bad score row", scores_path.display())))?;
                let label = parts.next().unwrap_or("");
                values.push(score);
                labels.push(label == "spam");
            }
            match roc_auc(&values, &labels) {
                Ok(curve) => {
                    write_roc_csv(&curve, summary_dir.join(format!("roc_{method}.csv")))?;
                    Some(curve.auc)
                }
                Err(_) => None,
            }
        } else {
            None
        };

        if !l2s.is_empty() {
            let hist = density_histogram(&l2s, 10)?;
            write_histogram_csv(&hist, summary_dir.join(format!("l2_hist_{method}.csv")))?;
        }
        summaries.push(MethodSummary {
            method: method.clone(),
            examples: report.records.len(),
            mean_accuracy: report.aggregates.mean_accuracy,
            mean_l2: report.aggregates.mean_l2,
            mean_seconds: report.aggregates.mean_seconds,
            auc,
            l2_skewness: skewness(&l2s).ok(),
        });
        per_method_correct.insert(method.clone(), correct);
        per_method_l2.insert(method.clone(), l2s);
    }

    // Accuracy / L2 tables (deterministic) and the timing table (separate).
    let mut acc_csv = String::from("method,examples,mean_accuracy,mean_l2,auc,l2_skewness\n");
    let mut time_csv = String::from("method,mean_seconds\n");
    for s in &summaries {
        acc_csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.method,
            s.examples,
            s.mean_accuracy,
            s.mean_l2,
            s.auc.map(|v| v.to_string()).unwrap_or_default(),
            s.l2_skewness.map(|v| v.to_string()).unwrap_or_default()
        ));
        time_csv.push_str(&format!("{},{}\n", s.method, s.mean_seconds));
    }
    std::fs::write(summary_dir.join("attacks.csv"), &acc_csv)?;
    std::fs::write(summary_dir.join("timing.csv"), &time_csv)?;

    // Pairwise Mann-Whitney U tests: batched accuracy and per-example L2.
    let mut utest_csv = String::from("metric,method_a,method_b,u,p,method,h0_rejected\n");
    for i in 0..methods.len() {
        for j in i + 1..methods.len() {
            let (ma, mb) = (&methods[i], &methods[j]);
            let acc_a = batched_accuracy(&per_method_correct[ma], 10);
            let acc_b = batched_accuracy(&per_method_correct[mb], 10);
            if !acc_a.is_empty() && !acc_b.is_empty() {
                let r = mann_whitney_u(&acc_a, &acc_b).map_err(CliError::from)?;
                utest_csv.push_str(&format!(
                    "accuracy_per_batch,{ma},{mb},{},{},{},{}\n",
                    r.u_statistic,
                    r.p_value,
                    if r.method == UTestMethod::Exact { "exact" } else { "normal" },
                    r.p_value < 0.05
                ));
            }
            let (l2a, l2b) = (&per_method_l2[ma], &per_method_l2[mb]);
            if !l2a.is_empty() && !l2b.is_empty() {
                let r = mann_whitney_u(l2a, l2b).map_err(CliError::from)?;
                utest_csv.push_str(&format!(
                    "l2_per_example,{ma},{mb},{},{},{},{}\n",
                    r.u_statistic,
                    r.p_value,
                    if r.method == UTestMethod::Exact { "exact" } else { "normal" },
                    r.p_value < 0.05
                ));
            }
        }
    }
    std::fs::write(summary_dir.join("utests.csv"), &utest_csv)?;

    // Clean evaluation rows.
    let mut eval_csv = String::from("name,examples,accuracy,auc\n");
    for name in &eval_names {
        let meta_path = reports_dir.join(format!("eval_{name}_meta.json"));
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&meta_path)?)
                .map_err(|e| CliError::Data(format!("{}: {e}", meta_path.display())))?;
        eval_csv.push_str(&format!(
            "{name},{},{},{}\n",
            meta.get("examples").and_then(|v| v.as_u64()).unwrap_or(0),
            meta.get("accuracy").and_then(|v| v.as_f64()).unwrap_or(f64::NAN),
            meta.get("auc").and_then(|v| v.as_f64()).map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    std::fs::write(summary_dir.join("evals.csv"), &eval_csv)?;

    // Aligned text table.
    let mut table = String::new();
    table.push_str(&format!(
        "{:<10} {:>8} {:>10} {:>12} {:>12} {:>8}\n",
        "method", "examples", "accuracy", "mean_l2", "mean_sec", "auc"
    ));
    for s in &summaries {
        table.push_str(&format!(
            "{:<10} {:>8} {:>10.4} {:>12.2} {:>12.4} {:>8}\n",
            s.method,
            s.examples,
            s.mean_accuracy,
            s.mean_l2,
            s.mean_seconds,
            s.auc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
        ));
    }
    for name in &eval_names {
        table.push_str(&format!("eval: {name} (see summary/evals.csv)\n"));
    }
    print!("{table}");
    std::fs::write(summary_dir.join("tables.txt"), table)?;
    Ok(())
}
