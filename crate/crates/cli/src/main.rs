//! Command-line driver: dataset synthesis, training, evaluation, the
//! ablation grid and the gradient-verification suite.
//!
//! Configuration keys resolve with precedence CLI > config file >
//! built-in default. The config file is flat `key = value` lines; every
//! key matches the corresponding long option with `-` replaced by `_`.
//! Unknown keys are rejected.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure,
//! 3 verification failure.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::FileConfig;
use fflc_core::eval::{emit_heatmaps, evaluate};
use fflc_core::model::{load_model_params, BranchMode, ModelConfig, Variant};
use fflc_core::synth::dataset::{build_manifest, Manifest, Split, SynthConfig};
use fflc_core::train::{ablate, ablation_table, train, TrainConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
    Verification(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) | CliError::Verification(m) => f.write_str(m),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser)]
#[command(
    name = "fflc",
    about = "Face forensics localization and classification: synthetic data, training, evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and its manifest
    Synth(SynthArgs),
    /// Train the two-branch model on a dataset
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split
    Eval(EvalArgs),
    /// Train and evaluate the four ablation configurations
    Ablate(AblateArgs),
    /// Run the finite-difference gradient verification suite
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key=value config file; CLI flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed every random stream derives from [default: 42]
    #[arg(long)]
    root_seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset output directory [default: data/desk]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Fraction of the reference corpus sizes [default: 0.01]
    #[arg(long)]
    scale: Option<f64>,
    /// Generator artifact strength [default: 1]
    #[arg(long)]
    artifact_strength: Option<f64>,
    /// Overwrite an existing non-empty output directory
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ModelArgs {
    /// Mask-head variant: share, hard or soft [default: soft]
    #[arg(long)]
    variant: Option<String>,
    /// Disable the landmark stem and fusion gates
    #[arg(long)]
    no_landmarks: bool,
    /// Square model input size in pixels [default: 128]
    #[arg(long)]
    input_size: Option<usize>,
    /// Channel width of the first stage [default: 16]
    #[arg(long)]
    base_channels: Option<usize>,
    /// Number of source classes [default: inferred from the manifest]
    #[arg(long)]
    num_classes: Option<usize>,
    /// Mask-loss weight [default: 100]
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct OptimArgs {
    /// Training steps [default: 5000]
    #[arg(long)]
    steps: Option<u64>,
    /// Batch size [default: 64]
    #[arg(long)]
    batch_size: Option<usize>,
    /// ADAM learning rate [default: 0.0001]
    #[arg(long)]
    alpha: Option<f64>,
    /// ADAM first-moment decay [default: 0.9]
    #[arg(long)]
    beta1: Option<f64>,
    /// ADAM second-moment decay [default: 0.999]
    #[arg(long)]
    beta2: Option<f64>,
    /// ADAM stabilizer [default: 1e-8]
    #[arg(long)]
    epsilon: Option<f64>,
    /// Steps between checkpoints [default: 1000]
    #[arg(long)]
    checkpoint_interval: Option<u64>,
    /// Steps between loss-log lines [default: 50]
    #[arg(long)]
    log_every: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset directory containing manifest.tsv [default: data/desk]
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Run output directory [default: runs/train]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Loss branches to train: both, class or mask [default: both]
    #[arg(long)]
    branch: Option<String>,
    /// Continue from a training checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to evaluate (required here or in the config file)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory containing manifest.tsv [default: data/desk]
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Report output directory [default: runs/eval]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Split to evaluate: test or train [default: test]
    #[arg(long)]
    split: Option<String>,
    /// Emit difference heat-maps for the first N records [default: 0]
    #[arg(long)]
    heatmaps: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset directory containing manifest.tsv [default: data/desk]
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Output directory for the four runs [default: runs/ablate]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: CommonArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 1,
                CliError::Runtime(_) => 2,
                CliError::Verification(_) => 3,
            })
        }
    }
}

fn file_config(common: &CommonArgs) -> Result<FileConfig> {
    match &common.config {
        Some(path) => FileConfig::load(path),
        None => Ok(FileConfig::empty()),
    }
}

fn load_manifest(data_dir: &Path) -> Result<Manifest> {
    let manifest_path = data_dir.join(Manifest::FILE_NAME);
    if !manifest_path.exists() {
        return Err(CliError::Runtime(format!(
            "missing manifest: {} (run `fflc synth` first)",
            manifest_path.display()
        )));
    }
    Manifest::load(&manifest_path).map_err(runtime)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let file = file_config(&args.common)?;
    let out_dir: PathBuf = file.resolve("out_dir", args.out_dir, PathBuf::from("data/desk"))?;
    let cfg = SynthConfig {
        root_seed: file.resolve("root_seed", args.common.root_seed, 42)?,
        scale: file.resolve("scale", args.scale, 0.01)?,
        artifact_strength: file.resolve("artifact_strength", args.artifact_strength, 1.0)?,
        counts_override: None,
    };
    let occupied = out_dir.join(Manifest::FILE_NAME).exists()
        || std::fs::read_dir(&out_dir).map(|mut d| d.next().is_some()).unwrap_or(false);
    if occupied && !args.force {
        return Err(CliError::Runtime(format!(
            "output directory {} is not empty; pass --force to overwrite",
            out_dir.display()
        )));
    }
    let (manifest, summary) = build_manifest(&cfg, &out_dir).map_err(runtime)?;
    println!("dataset written to {}", out_dir.display());
    println!("class\ttrain\ttest\ttotal");
    for (class, tr, te) in &summary.per_class {
        println!("{class}\t{tr}\t{te}\t{}", tr + te);
    }
    println!("total\t\t\t{}", manifest.len());
    Ok(())
}

fn parse_variant(s: &str) -> Result<Variant> {
    Variant::parse(s).ok_or_else(|| {
        CliError::Usage(format!("unknown variant `{s}` (expected share, hard or soft)"))
    })
}

fn parse_branch(s: &str) -> Result<BranchMode> {
    BranchMode::parse(s).ok_or_else(|| {
        CliError::Usage(format!("unknown branch `{s}` (expected both, class or mask)"))
    })
}

fn resolve_model_config(
    file: &FileConfig,
    args: &ModelArgs,
    manifest: &Manifest,
) -> Result<ModelConfig> {
    let variant = parse_variant(&file.resolve("variant", args.variant.clone(), "soft".to_string())?)?;
    let use_landmarks = if args.no_landmarks {
        false
    } else {
        file.resolve("use_landmarks", None::<bool>, true)?
    };
    let input = file.resolve("input_size", args.input_size, 128usize)?;
    let inferred = manifest.classes_present().len();
    let cfg = ModelConfig {
        num_classes: file.resolve("num_classes", args.num_classes, inferred)?,
        input_size: (input, input),
        variant,
        use_landmarks,
        base_channels: file.resolve("base_channels", args.base_channels, 16usize)?,
        lambda: file.resolve("lambda", args.lambda, 100.0)?,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn resolve_train_config(
    file: &FileConfig,
    common: &CommonArgs,
    model: &ModelArgs,
    optim: &OptimArgs,
    branch: Option<&str>,
    manifest: &Manifest,
) -> Result<TrainConfig> {
    Ok(TrainConfig {
        model: resolve_model_config(file, model, manifest)?,
        root_seed: file.resolve("root_seed", common.root_seed, 42)?,
        steps: file.resolve("steps", optim.steps, 5000)?,
        batch_size: file.resolve("batch_size", optim.batch_size, 64usize)?,
        alpha: file.resolve("alpha", optim.alpha, 1e-4)?,
        beta1: file.resolve("beta1", optim.beta1, 0.9)?,
        beta2: file.resolve("beta2", optim.beta2, 0.999)?,
        epsilon: file.resolve("epsilon", optim.epsilon, 1e-8)?,
        branches: parse_branch(&file.resolve("branch", branch.map(str::to_string), "both".to_string())?)?,
        checkpoint_interval: file.resolve("checkpoint_interval", optim.checkpoint_interval, 1000)?,
        log_every: file.resolve("log_every", optim.log_every, 50)?,
    })
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let file = file_config(&args.common)?;
    let data_dir: PathBuf = file.resolve("data_dir", args.data_dir, PathBuf::from("data/desk"))?;
    let out_dir: PathBuf = file.resolve("out_dir", args.out_dir, PathBuf::from("runs/train"))?;
    let manifest = load_manifest(&data_dir)?;
    let cfg = resolve_train_config(
        &file,
        &args.common,
        &args.model,
        &args.optim,
        args.branch.as_deref(),
        &manifest,
    )?;
    let resume: Option<PathBuf> = match args.resume {
        Some(p) => Some(p),
        None => file.resolve_opt("resume")?,
    };
    if let Some(r) = &resume {
        if !r.exists() {
            return Err(CliError::Runtime(format!(
                "missing resume checkpoint: {}",
                r.display()
            )));
        }
    }
    let state = train(&manifest, &cfg, &out_dir, resume.as_deref()).map_err(runtime)?;
    println!(
        "trained {} steps (variant {}, landmarks {}); mean loss {:.6}",
        state.step,
        cfg.model.variant.name(),
        if cfg.model.use_landmarks { "on" } else { "off" },
        state.mean_loss()
    );
    println!(
        "checkpoint: {}",
        out_dir.join("checkpoint_latest.fflc").display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let file = file_config(&args.common)?;
    let checkpoint: PathBuf = match args.checkpoint {
        Some(p) => p,
        None => file
            .resolve_opt("checkpoint")?
            .ok_or_else(|| CliError::Usage("missing --checkpoint".to_string()))?,
    };
    if !checkpoint.exists() {
        return Err(CliError::Runtime(format!(
            "missing checkpoint: {}",
            checkpoint.display()
        )));
    }
    let data_dir: PathBuf = file.resolve("data_dir", args.data_dir, PathBuf::from("data/desk"))?;
    let out_dir: PathBuf = file.resolve("out_dir", args.out_dir, PathBuf::from("runs/eval"))?;
    let split_name: String = file.resolve("split", args.split, "test".to_string())?;
    let split = Split::parse(&split_name)
        .ok_or_else(|| CliError::Usage(format!("unknown split `{split_name}`")))?;
    let heatmaps: usize = file.resolve("heatmaps", args.heatmaps, 0usize)?;

    let manifest = load_manifest(&data_dir)?;
    let params = load_model_params(&checkpoint).map_err(runtime)?;
    let report = evaluate(&params, &manifest, split).map_err(runtime)?;
    print!("{}", report.to_table_string());
    std::fs::create_dir_all(&out_dir).map_err(runtime)?;
    std::fs::write(out_dir.join("report.tsv"), report.to_table_string()).map_err(runtime)?;
    std::fs::write(out_dir.join("report.kv"), report.to_kv_string()).map_err(runtime)?;

    if heatmaps > 0 {
        use fflc_core::model::run_model;
        use fflc_core::pipeline::DataPipe;
        let pipe = DataPipe::new(&manifest, &params.config).map_err(runtime)?;
        let indices: Vec<usize> = (0..manifest.len())
            .filter(|&i| manifest.records()[i].split == split)
            .take(heatmaps)
            .collect();
        let dir = out_dir.join("heatmaps");
        std::fs::create_dir_all(&dir).map_err(runtime)?;
        for &idx in &indices {
            let batch = pipe.batch(&[idx], &[1.0]).map_err(runtime)?;
            let outputs =
                run_model(&params, &batch.images, batch.landmark_maps.as_ref()).map_err(runtime)?;
            let (h, w) = (batch.masks.shape()[2], batch.masks.shape()[3]);
            let probs = fflc_core::tensor::Tensor::new(&[1, h, w], outputs.mask_probs.data().to_vec())
                .map_err(runtime)?;
            let gt = fflc_core::tensor::Tensor::new(&[1, h, w], batch.masks.data().to_vec())
                .map_err(runtime)?;
            emit_heatmaps(&probs, &gt, &dir.join(format!("{idx:06}.pgm"))).map_err(runtime)?;
        }
        println!("wrote {} heat-map strips to {}", indices.len(), dir.display());
    }
    println!("report written to {}", out_dir.display());
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let file = file_config(&args.common)?;
    let data_dir: PathBuf = file.resolve("data_dir", args.data_dir, PathBuf::from("data/desk"))?;
    let out_dir: PathBuf = file.resolve("out_dir", args.out_dir, PathBuf::from("runs/ablate"))?;
    let manifest = load_manifest(&data_dir)?;
    let cfg = resolve_train_config(&file, &args.common, &args.model, &args.optim, None, &manifest)?;
    let rows = ablate(&manifest, &cfg, &out_dir).map_err(runtime)?;
    print!("{}", ablation_table(&rows));
    println!("ablation artifacts written to {}", out_dir.display());
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let _ = file_config(&args.common)?;
    let start = std::time::Instant::now();
    let reports = fflc_core::verify::full_suite().map_err(runtime)?;
    let mut failed = 0;
    for r in &reports {
        let status = if r.passed() { "ok  " } else { "FAIL" };
        println!(
            "{status} {:<28} max rel err {:.3e} ({} coords)",
            r.name, r.max_rel_err, r.coords
        );
        failed += (!r.passed()) as usize;
    }
    println!(
        "{} checks in {:.1}s, tolerance {:.0e}",
        reports.len(),
        start.elapsed().as_secs_f64(),
        fflc_core::tensor::gradcheck::GRAD_TOL
    );
    if failed > 0 {
        return Err(CliError::Verification(format!(
            "{failed} gradient checks exceeded the tolerance"
        )));
    }
    Ok(())
}
