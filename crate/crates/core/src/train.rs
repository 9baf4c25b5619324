//! Training loop, train-state checkpointing and the ablation runner.
//!
//! Per step: balanced batch -> preprocess (random rescale, alignment,
//! landmark maps) -> forward -> combined loss -> backward -> ADAM.
//! Checkpoints capture everything needed to continue bit-identically:
//! parameters, optimizer moments, RNG stream positions and the loss
//! statistics.

use std::io::Write as IoWrite;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::eval::{evaluate, EvalError, Metric, MetricsReport};
use crate::geometry::draw_rescale;
use crate::model::{
    combined_loss, config_from_kv, config_to_kv, forward, save_checkpoint, BoundParams,
    BranchMode, CheckpointError, ModelConfig, ModelParams,
};
use crate::pipeline::{DataPipe, PipelineError, PreparedBatch};
use crate::seed::{self, TAG_AUGMENT, TAG_SAMPLER};
use crate::synth::dataset::{Manifest, Split};
use crate::synth::{BalancedSampler, SynthError};
use crate::tensor::{adam_step, AdamState, Graph, Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("tensor: {0}")]
    Tensor(#[from] TensorError),
    #[error("pipeline: {0}")]
    Pipeline(#[from] PipelineError),
    #[error("synth: {0}")]
    Synth(#[from] SynthError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("eval: {0}")]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("training aborted at step {step}: {cause}; last good checkpoint: {last_checkpoint}")]
    Aborted {
        step: u64,
        cause: String,
        last_checkpoint: String,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub root_seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub branches: BranchMode,
    pub checkpoint_interval: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            root_seed: 42,
            steps: 5000,
            batch_size: 64,
            alpha: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            branches: BranchMode::Both,
            checkpoint_interval: 1000,
            log_every: 50,
        }
    }
}

/// Everything the loop mutates between steps.
pub struct TrainState {
    pub step: u64,
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
    pub sampler_rng: ChaCha8Rng,
    pub aug_rng: ChaCha8Rng,
    pub loss_sum: f64,
    pub loss_count: u64,
}

impl TrainState {
    pub fn init(cfg: &TrainConfig) -> Result<TrainState> {
        let params = ModelParams::<f32>::init(&cfg.model, cfg.root_seed)?;
        let shapes = params.shapes();
        let adam = AdamState::new(&shapes, cfg.alpha).with_hyper(cfg.beta1, cfg.beta2, cfg.epsilon);
        Ok(TrainState {
            step: 0,
            params,
            adam,
            sampler_rng: seed::stream(cfg.root_seed, TAG_SAMPLER, 0, 0),
            aug_rng: seed::stream(cfg.root_seed, TAG_AUGMENT, 0, 0),
            loss_sum: 0.0,
            loss_count: 0,
        })
    }

    pub fn mean_loss(&self) -> f64 {
        if self.loss_count == 0 {
            0.0
        } else {
            self.loss_sum / self.loss_count as f64
        }
    }
}

/// One optimizer step over a prepared batch; returns the loss.
pub fn train_step(state: &mut TrainState, cfg: &TrainConfig, batch: PreparedBatch) -> Result<f64> {
    let g = Graph::new();
    let bound = BoundParams::bind(&state.params, &g, true);
    let image = g.leaf_named("image", batch.images);
    let maps = batch
        .landmark_maps
        .map(|m| g.leaf_named("landmark_maps", m));
    let out = forward(&bound, &cfg.model, image, maps)?;
    let loss = combined_loss(&out, &cfg.model, &batch.labels, &batch.masks, cfg.branches)?;
    let loss_value = loss.to_tensor().item() as f64;
    let grads = g.backward(loss)?;
    let grad_tensors: Vec<Tensor<f32>> = bound.ordered().map(|(_, v)| grads.tensor(v)).collect();
    let mut refs: Vec<&mut Tensor<f32>> = state.params.tensors_mut().collect();
    adam_step(&mut refs, &grad_tensors, &mut state.adam)?;
    state.step += 1;
    state.loss_sum += loss_value;
    state.loss_count += 1;
    Ok(loss_value)
}

const LATEST_NAME: &str = "checkpoint_latest.fflc";

/// Serialize the full training state (parameters, moments, RNG positions,
/// loss statistics) into one checkpoint file.
pub fn save_train_state(path: &Path, state: &TrainState, cfg: &TrainConfig) -> Result<()> {
    let mut tensors: Vec<(String, Tensor<f32>)> = state
        .params
        .entries()
        .iter()
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect();
    for (i, (name, _)) in state.params.entries().iter().enumerate() {
        tensors.push((format!("adam.m.{name}"), state.adam.first_moment[i].clone()));
        tensors.push((format!("adam.v.{name}"), state.adam.second_moment[i].clone()));
    }
    let mut kv = config_to_kv(&cfg.model);
    kv.push(("step".into(), state.step.to_string()));
    kv.push(("root_seed".into(), cfg.root_seed.to_string()));
    kv.push(("alpha".into(), format!("{}", state.adam.alpha)));
    kv.push(("beta1".into(), format!("{}", state.adam.beta1)));
    kv.push(("beta2".into(), format!("{}", state.adam.beta2)));
    kv.push(("epsilon".into(), format!("{}", state.adam.epsilon)));
    kv.push(("branches".into(), cfg.branches.name().into()));
    kv.push(("sampler_pos".into(), state.sampler_rng.get_word_pos().to_string()));
    kv.push(("aug_pos".into(), state.aug_rng.get_word_pos().to_string()));
    kv.push(("loss_sum_bits".into(), state.loss_sum.to_bits().to_string()));
    kv.push(("loss_count".into(), state.loss_count.to_string()));
    save_checkpoint(path, &tensors, &kv)?;
    Ok(())
}

/// Restore a [`TrainState`] and the training hyperparameters it was saved
/// with.
pub fn load_train_state(path: &Path) -> Result<(TrainState, TrainConfig)> {
    let (tensors, kv) = crate::model::load_checkpoint(path)?;
    let model = config_from_kv(&kv)?;
    let get = |k: &str| -> Result<&String> {
        kv.get(k)
            .ok_or_else(|| TrainError::Invalid(format!("checkpoint missing key {k}")))
    };
    let parse_f64 = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| TrainError::Invalid(format!("bad value for {k}")))
    };
    let mut params_entries = Vec::new();
    let mut moments_m = Vec::new();
    let mut moments_v = Vec::new();
    for (name, t) in tensors {
        if let Some(stripped) = name.strip_prefix("adam.m.") {
            moments_m.push((stripped.to_string(), t));
        } else if let Some(stripped) = name.strip_prefix("adam.v.") {
            moments_v.push((stripped.to_string(), t));
        } else {
            params_entries.push((name, t));
        }
    }
    let params = ModelParams::from_entries(model.clone(), params_entries)?;
    if moments_m.len() != params.entries().len() || moments_v.len() != params.entries().len() {
        return Err(TrainError::Invalid(
            "checkpoint does not carry full optimizer state".into(),
        ));
    }
    let order = |wanted: &str, list: &[(String, Tensor<f32>)]| -> Result<Tensor<f32>> {
        list.iter()
            .find(|(n, _)| n == wanted)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| TrainError::Invalid(format!("checkpoint missing moment for {wanted}")))
    };
    let mut adam = AdamState::new(&params.shapes(), parse_f64("alpha")?).with_hyper(
        parse_f64("beta1")?,
        parse_f64("beta2")?,
        parse_f64("epsilon")?,
    );
    adam.first_moment = params
        .entries()
        .iter()
        .map(|(n, _)| order(n, &moments_m))
        .collect::<Result<_>>()?;
    adam.second_moment = params
        .entries()
        .iter()
        .map(|(n, _)| order(n, &moments_v))
        .collect::<Result<_>>()?;
    let step: u64 = get("step")?
        .parse()
        .map_err(|_| TrainError::Invalid("bad step".into()))?;
    adam.step_count = step;
    let root_seed: u64 = get("root_seed")?
        .parse()
        .map_err(|_| TrainError::Invalid("bad root_seed".into()))?;
    let mut sampler_rng = seed::stream(root_seed, TAG_SAMPLER, 0, 0);
    let mut aug_rng = seed::stream(root_seed, TAG_AUGMENT, 0, 0);
    sampler_rng.set_word_pos(
        get("sampler_pos")?
            .parse()
            .map_err(|_| TrainError::Invalid("bad sampler_pos".into()))?,
    );
    aug_rng.set_word_pos(
        get("aug_pos")?
            .parse()
            .map_err(|_| TrainError::Invalid("bad aug_pos".into()))?,
    );
    let loss_sum = f64::from_bits(
        get("loss_sum_bits")?
            .parse()
            .map_err(|_| TrainError::Invalid("bad loss_sum_bits".into()))?,
    );
    let loss_count: u64 = get("loss_count")?
        .parse()
        .map_err(|_| TrainError::Invalid("bad loss_count".into()))?;
    let branches = BranchMode::parse(get("branches")?)
        .ok_or_else(|| TrainError::Invalid("bad branches".into()))?;
    let cfg = TrainConfig {
        model,
        root_seed,
        alpha: adam.alpha,
        beta1: adam.beta1,
        beta2: adam.beta2,
        epsilon: adam.epsilon,
        branches,
        ..Default::default()
    };
    Ok((
        TrainState {
            step,
            params,
            adam,
            sampler_rng,
            aug_rng,
            loss_sum,
            loss_count,
        },
        cfg,
    ))
}

/// Run (or resume) training. Artifacts in `out_dir`: `loss.log` with one
/// `step<TAB>loss` line per logging interval, periodic
/// `checkpoint_<step>.fflc` files and `checkpoint_latest.fflc`.
pub fn train(
    manifest: &Manifest,
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainState> {
    std::fs::create_dir_all(out_dir)?;
    let mut state = match resume {
        Some(path) => {
            let (state, saved_cfg) = load_train_state(path)?;
            if saved_cfg.model.num_classes != cfg.model.num_classes {
                return Err(TrainError::Invalid(
                    "resume checkpoint disagrees with the configured class count".into(),
                ));
            }
            state
        }
        None => TrainState::init(cfg)?,
    };
    let pipe = DataPipe::new(manifest, &cfg.model)?;
    let sampler = BalancedSampler::new(manifest, Split::Train)?;
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out_dir.join("loss.log"))?;
    let mut last_checkpoint = resume
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "none".to_string());
    while state.step < cfg.steps {
        let indices = sampler.next_batch(&mut state.sampler_rng, cfg.batch_size);
        let scales: Vec<f64> = indices.iter().map(|_| draw_rescale(&mut state.aug_rng)).collect();
        let batch = pipe.batch(&indices, &scales)?;
        let loss = match train_step(&mut state, cfg, batch) {
            Ok(l) => l,
            Err(e) => {
                return Err(TrainError::Aborted {
                    step: state.step,
                    cause: e.to_string(),
                    last_checkpoint,
                })
            }
        };
        if !loss.is_finite() {
            return Err(TrainError::Aborted {
                step: state.step,
                cause: "non-finite loss".into(),
                last_checkpoint,
            });
        }
        if state.step % cfg.log_every == 0 || state.step == cfg.steps {
            writeln!(log, "{}\t{:.6}", state.step, loss)?;
        }
        if cfg.checkpoint_interval > 0 && state.step % cfg.checkpoint_interval == 0 {
            let path = out_dir.join(format!("checkpoint_{:07}.fflc", state.step));
            save_train_state(&path, &state, cfg)?;
            save_train_state(&out_dir.join(LATEST_NAME), &state, cfg)?;
            last_checkpoint = path.display().to_string();
        }
    }
    save_train_state(&out_dir.join(LATEST_NAME), &state, cfg)?;
    log.flush()?;
    Ok(state)
}

/// One ablation row: totals of the five metric families, `None` where the
/// configuration cannot produce the metric.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub fbd: Option<f64>,
    pub fbdm: Option<f64>,
    pub ftc: Option<f64>,
    pub fsc: Option<f64>,
    pub lc: Option<f64>,
}

impl AblationRow {
    fn from_report(label: &str, report: &MetricsReport, branches: BranchMode) -> AblationRow {
        let class_side = branches != BranchMode::MaskOnly;
        let mask_side = branches != BranchMode::ClassOnly;
        AblationRow {
            label: label.to_string(),
            fbd: class_side.then(|| report.total(Metric::Fbd)).flatten(),
            fbdm: mask_side.then(|| report.total(Metric::Fbdm)).flatten(),
            ftc: class_side.then(|| report.total(Metric::Ftc)).flatten(),
            fsc: class_side.then(|| report.total(Metric::Fsc)).flatten(),
            lc: mask_side.then(|| report.total(Metric::Iou)).flatten(),
        }
    }
}

/// Render the ablation table (columns FBD, FBDM, FTC, FSC, LC; dashes for
/// metrics a configuration does not produce).
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("config\tFBD\tFBDM\tFTC\tFSC\tLC\n");
    for r in rows {
        let cell = |v: Option<f64>| match v {
            Some(x) => format!("{:.2}", x * 100.0),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.label,
            cell(r.fbd),
            cell(r.fbdm),
            cell(r.ftc),
            cell(r.fsc),
            cell(r.lc)
        ));
    }
    out
}

/// Train and evaluate the four ablation configurations from one shared
/// root seed: class branch only, mask branch only, the full model, and
/// the full model without landmarks.
pub fn ablate(manifest: &Manifest, base: &TrainConfig, out_dir: &Path) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    let runs: [(&str, BranchMode, bool); 4] = [
        ("class-only", BranchMode::ClassOnly, base.model.use_landmarks),
        ("mask-only", BranchMode::MaskOnly, base.model.use_landmarks),
        ("full", BranchMode::Both, true),
        ("no-landmarks", BranchMode::Both, false),
    ];
    for (label, branches, use_landmarks) in runs {
        let cfg = TrainConfig {
            model: ModelConfig {
                use_landmarks,
                ..base.model.clone()
            },
            branches,
            ..base.clone()
        };
        let run_dir = out_dir.join(label);
        let state = train(manifest, &cfg, &run_dir, None)?;
        let report = evaluate(&state.params, manifest, Split::Test)?;
        std::fs::write(run_dir.join("report.tsv"), report.to_table_string())?;
        std::fs::write(run_dir.join("report.kv"), report.to_kv_string())?;
        rows.push(AblationRow::from_report(label, &report, branches));
    }
    std::fs::write(out_dir.join("ablation.tsv"), ablation_table(&rows))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;
    use crate::synth::dataset::{build_manifest, SynthConfig};

    fn toy_setup() -> (tempfile::TempDir, Manifest, TrainConfig) {
        let dir = tempfile::tempdir().unwrap();
        let synth = SynthConfig {
            counts_override: Some([8, 0, 8, 0, 0, 0, 0, 0, 8, 0]),
            root_seed: 5,
            ..Default::default()
        };
        let (manifest, _) = build_manifest(&synth, dir.path().join("data").as_path()).unwrap();
        let cfg = TrainConfig {
            model: ModelConfig {
                num_classes: 3,
                input_size: (32, 32),
                variant: Variant::Soft,
                use_landmarks: true,
                base_channels: 4,
                lambda: 100.0,
            },
            root_seed: 7,
            steps: 4,
            batch_size: 8,
            alpha: 1e-3,
            checkpoint_interval: 2,
            log_every: 1,
            ..Default::default()
        };
        (dir, manifest, cfg)
    }

    fn batch_clone(b: &PreparedBatch) -> PreparedBatch {
        PreparedBatch {
            images: b.images.clone(),
            landmark_maps: b.landmark_maps.clone(),
            masks: b.masks.clone(),
            labels: b.labels.clone(),
            sources: b.sources.clone(),
        }
    }

    #[test]
    fn loss_decreases_on_a_fixed_batch() {
        let (_dir, manifest, cfg) = toy_setup();
        let pipe = DataPipe::new(&manifest, &cfg.model).unwrap();
        let train_idx: Vec<usize> = (0..manifest.len())
            .filter(|&i| manifest.records()[i].split == Split::Train)
            .collect();
        let batch = pipe.batch(&train_idx[..8], &vec![1.0; 8]).unwrap();
        let mut state = TrainState::init(&cfg).unwrap();
        let mut losses = Vec::new();
        for _ in 0..20 {
            losses.push(train_step(&mut state, &cfg, batch_clone(&batch)).unwrap());
        }
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "loss did not strictly decrease: {losses:?}");
        }
    }

    #[test]
    fn fixed_seed_reproduces_the_loss_curve() {
        let (_dir, manifest, cfg) = toy_setup();
        let run = || {
            let out = tempfile::tempdir().unwrap();
            let state = train(&manifest, &cfg, out.path(), None).unwrap();
            let log = std::fs::read_to_string(out.path().join("loss.log")).unwrap();
            (log, state.params.get("img1.w").data().to_vec())
        };
        let (log1, w1) = run();
        let (log2, w2) = run();
        assert_eq!(log1, log2);
        assert!(w1.iter().zip(&w2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn resume_reproduces_uninterrupted_run_bitwise() {
        let (_dir, manifest, cfg) = toy_setup();
        let full_dir = tempfile::tempdir().unwrap();
        let full = train(&manifest, &cfg, full_dir.path(), None).unwrap();

        // run to step 2 (checkpoint_interval = 2), then resume to the end
        let part_cfg = TrainConfig { steps: 2, ..cfg.clone() };
        let part_dir = tempfile::tempdir().unwrap();
        train(&manifest, &part_cfg, part_dir.path(), None).unwrap();
        let resumed = train(
            &manifest,
            &cfg,
            part_dir.path(),
            Some(&part_dir.path().join("checkpoint_0000002.fflc")),
        )
        .unwrap();

        assert_eq!(full.step, resumed.step);
        for ((n1, t1), (n2, t2)) in full.params.entries().iter().zip(resumed.params.entries()) {
            assert_eq!(n1, n2);
            assert!(
                t1.data().iter().zip(t2.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
                "parameter {n1} diverged after resume"
            );
        }
        assert_eq!(full.loss_sum.to_bits(), resumed.loss_sum.to_bits());
        assert_eq!(
            full.sampler_rng.get_word_pos(),
            resumed.sampler_rng.get_word_pos()
        );
    }

    #[test]
    fn ablation_rows_have_the_expected_dashes() {
        let rows = vec![
            AblationRow {
                label: "class-only".into(),
                fbd: Some(0.9),
                fbdm: None,
                ftc: Some(0.8),
                fsc: Some(0.7),
                lc: None,
            },
            AblationRow {
                label: "mask-only".into(),
                fbd: None,
                fbdm: Some(0.95),
                ftc: None,
                fsc: None,
                lc: Some(0.85),
            },
        ];
        let table = ablation_table(&rows);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "config\tFBD\tFBDM\tFTC\tFSC\tLC");
        assert_eq!(lines[1], "class-only\t90.00\t-\t80.00\t70.00\t-");
        assert_eq!(lines[2], "mask-only\t-\t95.00\t-\t-\t85.00");
    }
}
