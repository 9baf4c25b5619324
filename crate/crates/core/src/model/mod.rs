//! The two-branch detection/localization network.
//!
//! Topology: an image stem of three stride-2 stages (the second and third
//! depthwise-separable), an optional mirrored landmark stem whose
//! activations are fused into the image stream by gated (SSMA-style)
//! blocks, two residual middle blocks, a class head (global average pool
//! + dense) and a mask head of three transposed convolutions, each fed by
//! a matching-resolution skip, closed by a 1x1 convolution.

mod checkpoint;
mod network;

pub use checkpoint::{load_checkpoint, load_model_params, save_checkpoint, CheckpointError, CHECKPOINT_MAGIC};
pub use network::{
    argmax_rows, combined_loss, forward, forward_unfused, fuse_skip, predict_mask_hard,
    predict_mask_shared, predict_mask_soft, run_model, BoundParams, ForwardOutputs, ModelOutputs,
};

use std::collections::HashMap;

use crate::num::Scalar;
use crate::seed::{self, TAG_INIT};
use crate::tensor::{Tensor, TensorError};
use crate::LANDMARK_COUNT;
use rand::Rng;

/// Mask-head flavors: one shared mask, per-class masks with hard argmax
/// selection, or per-class masks mixed by the class distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Share,
    Hard,
    Soft,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Share => "share",
            Variant::Hard => "hard",
            Variant::Soft => "soft",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s {
            "share" => Some(Variant::Share),
            "hard" => Some(Variant::Hard),
            "soft" => Some(Variant::Soft),
            _ => None,
        }
    }
}

/// Which loss terms train: both branches, or one branch in isolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchMode {
    Both,
    ClassOnly,
    MaskOnly,
}

impl BranchMode {
    pub fn name(self) -> &'static str {
        match self {
            BranchMode::Both => "both",
            BranchMode::ClassOnly => "class",
            BranchMode::MaskOnly => "mask",
        }
    }

    pub fn parse(s: &str) -> Option<BranchMode> {
        match s {
            "both" => Some(BranchMode::Both),
            "class" => Some(BranchMode::ClassOnly),
            "mask" => Some(BranchMode::MaskOnly),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub num_classes: usize,
    /// (width, height); both must be divisible by 8 (three 2x stages).
    pub input_size: (usize, usize),
    pub variant: Variant,
    pub use_landmarks: bool,
    pub base_channels: usize,
    pub lambda: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_classes: 10,
            input_size: (128, 128),
            variant: Variant::Soft,
            use_landmarks: true,
            base_channels: 16,
            lambda: 100.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.num_classes < 2 {
            return Err(TensorError::Invalid(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        let (w, h) = self.input_size;
        if w == 0 || h == 0 || w % 8 != 0 || h % 8 != 0 {
            return Err(TensorError::Invalid(format!(
                "input size {w}x{h} must be positive and divisible by 8"
            )));
        }
        if self.base_channels < 2 || self.base_channels % 2 != 0 {
            return Err(TensorError::Invalid(format!(
                "base_channels must be even and >= 2, got {}",
                self.base_channels
            )));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(TensorError::Invalid(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Mask-head output channels: 1 for Share, C otherwise.
    pub fn mask_channels(&self) -> usize {
        match self.variant {
            Variant::Share => 1,
            _ => self.num_classes,
        }
    }
}

/// Named weight tensors in creation order plus the configuration they
/// were built for.
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ModelParams<T> {
    /// Xavier-uniform initialization (`+-sqrt(6 / (fan_in + fan_out))`),
    /// zero biases, deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed_value: u64) -> Result<ModelParams<T>, TensorError> {
        config.validate()?;
        let mut rng = seed::stream(seed_value, TAG_INIT, 0, 0);
        let bc = config.base_channels;
        let k = config.mask_channels();
        let mut p = ModelParams {
            config: config.clone(),
            entries: Vec::new(),
            index: HashMap::new(),
        };

        let stem = |p: &mut ModelParams<T>, rng: &mut rand_chacha::ChaCha8Rng, prefix: &str, in_ch: usize| {
            p.add_conv(rng, &format!("{prefix}1.w"), bc, in_ch, 3);
            p.add_bias(&format!("{prefix}1.b"), bc);
            p.add_dw(rng, &format!("{prefix}2.dw"), bc, 3);
            p.add_conv(rng, &format!("{prefix}2.pw"), 2 * bc, bc, 1);
            p.add_bias(&format!("{prefix}2.b"), 2 * bc);
            p.add_dw(rng, &format!("{prefix}3.dw"), 2 * bc, 3);
            p.add_conv(rng, &format!("{prefix}3.pw"), 4 * bc, 2 * bc, 1);
            p.add_bias(&format!("{prefix}3.b"), 4 * bc);
        };
        stem(&mut p, &mut rng, "img", 3);
        if config.use_landmarks {
            stem(&mut p, &mut rng, "lm", LANDMARK_COUNT);
            for stage in 1..=3usize {
                let ch = bc << (stage - 1);
                let cat = 2 * ch;
                p.add_conv(&mut rng, &format!("ssma{stage}.r.w"), cat / 4, cat, 1);
                p.add_bias(&format!("ssma{stage}.r.b"), cat / 4);
                p.add_conv(&mut rng, &format!("ssma{stage}.e.w"), cat, cat / 4, 1);
                p.add_bias(&format!("ssma{stage}.e.b"), cat);
                p.add_conv(&mut rng, &format!("ssma{stage}.p.w"), ch, cat, 1);
                p.add_bias(&format!("ssma{stage}.p.b"), ch);
            }
        }
        for block in ["res1", "res2"] {
            p.add_dw(&mut rng, &format!("{block}.dw"), 4 * bc, 3);
            p.add_conv(&mut rng, &format!("{block}.pw"), 4 * bc, 4 * bc, 1);
            p.add_bias(&format!("{block}.b"), 4 * bc);
        }
        p.add_dense(&mut rng, "cls.w", config.num_classes, 4 * bc);
        p.add_bias("cls.b", config.num_classes);
        p.add_tconv(&mut rng, "up1.w", 8 * bc, 2 * bc, 2);
        p.add_bias("up1.b", 2 * bc);
        p.add_tconv(&mut rng, "up2.w", 4 * bc, bc, 2);
        p.add_bias("up2.b", bc);
        p.add_tconv(&mut rng, "up3.w", 2 * bc, bc / 2, 2);
        p.add_bias("up3.b", bc / 2);
        p.add_conv(&mut rng, "mask.w", k, bc / 2, 1);
        p.add_bias("mask.b", k);
        Ok(p)
    }

    fn push(&mut self, name: &str, t: Tensor<T>) {
        let id = self.entries.len();
        assert!(
            self.index.insert(name.to_string(), id).is_none(),
            "duplicate parameter {name}"
        );
        self.entries.push((name.to_string(), t));
    }

    fn xavier(&mut self, rng: &mut rand_chacha::ChaCha8Rng, name: &str, shape: &[usize], fan_in: usize, fan_out: usize) {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let t = Tensor::from_fn(shape, |_| T::of_f64(rng.gen_range(-limit..=limit)));
        self.push(name, t);
    }

    fn add_conv(&mut self, rng: &mut rand_chacha::ChaCha8Rng, name: &str, f: usize, c: usize, k: usize) {
        self.xavier(rng, name, &[f, c, k, k], c * k * k, f * k * k);
    }

    fn add_dw(&mut self, rng: &mut rand_chacha::ChaCha8Rng, name: &str, c: usize, k: usize) {
        self.xavier(rng, name, &[c, 1, k, k], k * k, k * k);
    }

    fn add_tconv(&mut self, rng: &mut rand_chacha::ChaCha8Rng, name: &str, c_in: usize, c_out: usize, k: usize) {
        self.xavier(rng, name, &[c_in, c_out, k, k], c_in * k * k, c_out * k * k);
    }

    fn add_dense(&mut self, rng: &mut rand_chacha::ChaCha8Rng, name: &str, o: usize, i: usize) {
        self.xavier(rng, name, &[o, i], i, o);
    }

    fn add_bias(&mut self, name: &str, n: usize) {
        self.push(name, Tensor::zeros(&[n]));
    }

    pub fn entries(&self) -> &[(String, Tensor<T>)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        &self.entries[*self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))].1
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<T> {
        let id = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut self.entries[id].1
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn shapes(&self) -> Vec<&[usize]> {
        self.entries.iter().map(|(_, t)| t.shape()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn from_entries(
        config: ModelConfig,
        entries: Vec<(String, Tensor<T>)>,
    ) -> Result<ModelParams<T>, TensorError> {
        config.validate()?;
        let mut index = HashMap::new();
        for (i, (name, _)) in entries.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(TensorError::Invalid(format!("duplicate parameter {name}")));
            }
        }
        Ok(ModelParams {
            config,
            entries,
            index,
        })
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Config <-> flat key=value mapping used in checkpoints.
pub fn config_to_kv(cfg: &ModelConfig) -> Vec<(String, String)> {
    vec![
        ("variant".into(), cfg.variant.name().into()),
        ("num_classes".into(), cfg.num_classes.to_string()),
        ("input_w".into(), cfg.input_size.0.to_string()),
        ("input_h".into(), cfg.input_size.1.to_string()),
        ("use_landmarks".into(), cfg.use_landmarks.to_string()),
        ("base_channels".into(), cfg.base_channels.to_string()),
        ("lambda".into(), format!("{}", cfg.lambda)),
    ]
}

pub fn config_from_kv(kv: &std::collections::BTreeMap<String, String>) -> Result<ModelConfig, TensorError> {
    let get = |k: &str| {
        kv.get(k)
            .ok_or_else(|| TensorError::Invalid(format!("checkpoint config missing key {k}")))
    };
    let parse_usize = |k: &str| -> Result<usize, TensorError> {
        get(k)?
            .parse()
            .map_err(|_| TensorError::Invalid(format!("bad value for {k}")))
    };
    let cfg = ModelConfig {
        variant: Variant::parse(get("variant")?)
            .ok_or_else(|| TensorError::Invalid("bad variant in checkpoint".into()))?,
        num_classes: parse_usize("num_classes")?,
        input_size: (parse_usize("input_w")?, parse_usize("input_h")?),
        use_landmarks: get("use_landmarks")? == "true",
        base_channels: parse_usize("base_channels")?,
        lambda: get("lambda")?
            .parse()
            .map_err(|_| TensorError::Invalid("bad lambda in checkpoint".into()))?,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_counts_params() {
        let cfg = ModelConfig {
            base_channels: 4,
            input_size: (32, 32),
            num_classes: 3,
            ..Default::default()
        };
        let a = ModelParams::<f32>::init(&cfg, 7).unwrap();
        let b = ModelParams::<f32>::init(&cfg, 7).unwrap();
        assert_eq!(a.param_count(), b.param_count());
        for ((n1, t1), (n2, t2)) in a.entries().iter().zip(b.entries()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.data(), t2.data());
        }
        let c = ModelParams::<f32>::init(&cfg, 8).unwrap();
        assert_ne!(a.get("img1.w").data(), c.get("img1.w").data());
    }

    #[test]
    fn mask_head_channels_follow_variant() {
        let mut cfg = ModelConfig {
            base_channels: 4,
            num_classes: 5,
            ..Default::default()
        };
        cfg.variant = Variant::Share;
        assert_eq!(ModelParams::<f32>::init(&cfg, 1).unwrap().get("mask.w").shape()[0], 1);
        cfg.variant = Variant::Hard;
        assert_eq!(ModelParams::<f32>::init(&cfg, 1).unwrap().get("mask.w").shape()[0], 5);
    }

    #[test]
    fn landmark_stem_only_when_enabled() {
        let cfg = ModelConfig {
            base_channels: 4,
            use_landmarks: false,
            ..Default::default()
        };
        let p = ModelParams::<f32>::init(&cfg, 1).unwrap();
        assert!(!p.entries().iter().any(|(n, _)| n.starts_with("lm") || n.starts_with("ssma")));
    }

    #[test]
    fn config_validation_rejects_bad_sizes() {
        let mut cfg = ModelConfig::default();
        cfg.input_size = (100, 128);
        assert!(cfg.validate().is_err());
        cfg.input_size = (128, 128);
        cfg.num_classes = 1;
        assert!(cfg.validate().is_err());
        cfg.num_classes = 10;
        cfg.base_channels = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_kv_roundtrip() {
        let cfg = ModelConfig {
            variant: Variant::Hard,
            num_classes: 7,
            input_size: (64, 32),
            use_landmarks: false,
            base_channels: 8,
            lambda: 12.5,
        };
        let kv: std::collections::BTreeMap<_, _> = config_to_kv(&cfg).into_iter().collect();
        let back = config_from_kv(&kv).unwrap();
        assert_eq!(back.variant, Variant::Hard);
        assert_eq!(back.num_classes, 7);
        assert_eq!(back.input_size, (64, 32));
        assert!(!back.use_landmarks);
        assert_eq!(back.base_channels, 8);
        assert_eq!(back.lambda, 12.5);
    }
}
