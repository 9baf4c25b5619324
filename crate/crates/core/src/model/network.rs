//! Forward pass, gated skip fusion, mask-prediction rules and the
//! combined loss.

use super::{BranchMode, ModelConfig, ModelParams, Variant};
use crate::num::Scalar;
use crate::tensor::ops::softmax_rows_tensor;
use crate::tensor::{Graph, Result, Tensor, TensorError, Value};

/// Parameters bound into a graph as (optionally trainable) leaves.
pub struct BoundParams<'g, T: Scalar> {
    values: Vec<(String, Value<'g, T>)>,
}

impl<'g, T: Scalar> BoundParams<'g, T> {
    pub fn bind(params: &ModelParams<T>, graph: &'g Graph<T>, trainable: bool) -> Self {
        let values = params
            .entries()
            .iter()
            .map(|(name, t)| {
                let mut t = t.clone();
                if trainable {
                    t = t.with_grad();
                }
                (name.clone(), graph.leaf_named(name, t))
            })
            .collect();
        BoundParams { values }
    }

    /// Assemble from pre-existing graph values (verification harnesses
    /// that differentiate with respect to the parameters themselves).
    pub fn from_values(values: Vec<(String, Value<'g, T>)>) -> Self {
        BoundParams { values }
    }

    pub fn get(&self, name: &str) -> Value<'g, T> {
        self.values
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
            .1
    }

    /// Values aligned with `ModelParams::entries` order.
    pub fn ordered(&self) -> impl Iterator<Item = (&str, Value<'g, T>)> {
        self.values.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

/// Class and mask logits of one forward pass, still on the graph.
pub struct ForwardOutputs<'g, T: Scalar> {
    pub class_logits: Value<'g, T>,
    pub mask_logits: Value<'g, T>,
}

/// Evaluated network outputs.
#[derive(Debug, Clone)]
pub struct ModelOutputs<T> {
    pub class_logits: Tensor<T>,
    pub mask_logits: Tensor<T>,
    pub class_probs: Tensor<T>,
    pub mask_probs: Tensor<T>,
}

fn maybe_relu<T: Scalar>(v: Value<'_, T>, fused: bool) -> Result<Value<'_, T>> {
    if fused {
        Ok(v)
    } else {
        v.relu()
    }
}

fn stem<'g, T: Scalar>(
    p: &BoundParams<'g, T>,
    prefix: &str,
    x: Value<'g, T>,
    fuse: bool,
) -> Result<(Value<'g, T>, Value<'g, T>, Value<'g, T>)> {
    let e1 = maybe_relu(
        x.conv2d(p.get(&format!("{prefix}1.w")), Some(p.get(&format!("{prefix}1.b"))), 2, 1, fuse)?,
        fuse,
    )?;
    let e2 = maybe_relu(
        e1.dwconv2d(p.get(&format!("{prefix}2.dw")), 2, 1)?
            .conv2d(p.get(&format!("{prefix}2.pw")), Some(p.get(&format!("{prefix}2.b"))), 1, 0, fuse)?,
        fuse,
    )?;
    let e3 = maybe_relu(
        e2.dwconv2d(p.get(&format!("{prefix}3.dw")), 2, 1)?
            .conv2d(p.get(&format!("{prefix}3.pw")), Some(p.get(&format!("{prefix}3.b"))), 1, 0, fuse)?,
        fuse,
    )?;
    Ok((e1, e2, e3))
}

/// Gated fusion of one skip level: concat, bottleneck to a quarter of the
/// concat width, sigmoid gate over the concatenation, projection back to
/// the image stream width.
pub fn fuse_skip<'g, T: Scalar>(
    p: &BoundParams<'g, T>,
    stage: usize,
    image_feat: Value<'g, T>,
    landmark_feat: Value<'g, T>,
) -> Result<Value<'g, T>> {
    let img_shape = image_feat.shape();
    let lm_shape = landmark_feat.shape();
    if img_shape != lm_shape {
        return Err(TensorError::shape(
            "fuse_skip",
            format!("image {img_shape:?} vs landmark {lm_shape:?}"),
        ));
    }
    let cat = image_feat.concat_channels(&[landmark_feat])?;
    let mid = cat
        .conv2d(p.get(&format!("ssma{stage}.r.w")), Some(p.get(&format!("ssma{stage}.r.b"))), 1, 0, false)?
        .relu()?;
    let gate = mid
        .conv2d(p.get(&format!("ssma{stage}.e.w")), Some(p.get(&format!("ssma{stage}.e.b"))), 1, 0, false)?
        .sigmoid()?;
    cat.mul(gate)?
        .conv2d(p.get(&format!("ssma{stage}.p.w")), Some(p.get(&format!("ssma{stage}.p.b"))), 1, 0, false)
}

fn residual<'g, T: Scalar>(
    p: &BoundParams<'g, T>,
    block: &str,
    x: Value<'g, T>,
) -> Result<Value<'g, T>> {
    let h = x
        .dwconv2d(p.get(&format!("{block}.dw")), 1, 1)?
        .conv2d(p.get(&format!("{block}.pw")), Some(p.get(&format!("{block}.b"))), 1, 0, false)?;
    x.add(h)?.relu()
}

/// Full two-branch forward pass. `landmark_maps` must be present exactly
/// when the configuration enables landmarks. Activations are fused into
/// the preceding layer.
pub fn forward<'g, T: Scalar>(
    p: &BoundParams<'g, T>,
    config: &ModelConfig,
    image: Value<'g, T>,
    landmark_maps: Option<Value<'g, T>>,
) -> Result<ForwardOutputs<'g, T>> {
    forward_styled(p, config, image, landmark_maps, true)
}

/// Forward pass with standalone ReLU nodes, so preactivations stay
/// readable for kink-margin probes in finite-difference checks.
pub fn forward_unfused<'g, T: Scalar>(
    p: &BoundParams<'g, T>,
    config: &ModelConfig,
    image: Value<'g, T>,
    landmark_maps: Option<Value<'g, T>>,
) -> Result<ForwardOutputs<'g, T>> {
    forward_styled(p, config, image, landmark_maps, false)
}

fn forward_styled<'g, T: Scalar>(
    p: &BoundParams<'g, T>,
    config: &ModelConfig,
    image: Value<'g, T>,
    landmark_maps: Option<Value<'g, T>>,
    fuse: bool,
) -> Result<ForwardOutputs<'g, T>> {
    config.validate()?;
    let shape = image.shape();
    let (w, h) = config.input_size;
    if shape.len() != 4 || shape[1] != 3 || shape[2] != h || shape[3] != w {
        return Err(TensorError::shape(
            "forward",
            format!("image {shape:?} vs configured [N,3,{h},{w}]"),
        ));
    }
    if config.use_landmarks != landmark_maps.is_some() {
        return Err(TensorError::Invalid(format!(
            "forward: landmark maps {} but use_landmarks = {}",
            if landmark_maps.is_some() { "given" } else { "missing" },
            config.use_landmarks
        )));
    }
    let (i1, i2, i3) = stem(p, "img", image, fuse)?;
    let (f1, f2, f3) = match landmark_maps {
        Some(lm) => {
            let lm_shape = lm.shape();
            if lm_shape != [shape[0], crate::LANDMARK_COUNT, h, w] {
                return Err(TensorError::shape(
                    "forward",
                    format!(
                        "landmark maps {lm_shape:?} vs expected [N,{},{h},{w}]",
                        crate::LANDMARK_COUNT
                    ),
                ));
            }
            let (l1, l2, l3) = stem(p, "lm", lm, fuse)?;
            (
                fuse_skip(p, 1, i1, l1)?,
                fuse_skip(p, 2, i2, l2)?,
                fuse_skip(p, 3, i3, l3)?,
            )
        }
        None => (i1, i2, i3),
    };
    let r1 = residual(p, "res1", f3)?;
    let r2 = residual(p, "res2", r1)?;

    let class_logits = r2
        .global_avg_pool()?
        .dense(p.get("cls.w"), Some(p.get("cls.b")), false)?;

    let u1 = maybe_relu(
        r2.concat_channels(&[r1])?
            .conv2d_transpose(p.get("up1.w"), Some(p.get("up1.b")), 2, fuse)?,
        fuse,
    )?;
    let u2 = maybe_relu(
        u1.concat_channels(&[f2])?
            .conv2d_transpose(p.get("up2.w"), Some(p.get("up2.b")), 2, fuse)?,
        fuse,
    )?;
    let u3 = maybe_relu(
        u2.concat_channels(&[f1])?
            .conv2d_transpose(p.get("up3.w"), Some(p.get("up3.b")), 2, fuse)?,
        fuse,
    )?;
    let mask_logits = u3.conv2d(p.get("mask.w"), Some(p.get("mask.b")), 1, 0, false)?;

    Ok(ForwardOutputs {
        class_logits,
        mask_logits,
    })
}

/// Shared-mask rule: per-pixel sigmoid of the single mask channel.
pub fn predict_mask_shared<T: Scalar>(mask_logits: &Tensor<T>) -> Result<Tensor<T>> {
    let s = mask_logits.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(TensorError::shape(
            "predict_mask_shared",
            format!("expected [N,1,H,W], got {s:?}"),
        ));
    }
    Ok(Tensor::from_fn(s, |i| {
        crate::tensor::ops::sigmoid(mask_logits.data()[i])
    }))
}

/// Row argmax; ties resolve to the lowest index.
pub fn argmax_rows<T: Scalar>(t: &Tensor<T>) -> Vec<usize> {
    let s = t.shape();
    assert_eq!(s.len(), 2, "argmax_rows: need [N,C]");
    let (n, c) = (s[0], s[1]);
    (0..n)
        .map(|r| {
            let row = &t.data()[r * c..(r + 1) * c];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Hard rule: sigmoid of the mask channel picked by the class argmax.
pub fn predict_mask_hard<T: Scalar>(
    mask_logits: &Tensor<T>,
    class_probs: &Tensor<T>,
) -> Result<Tensor<T>> {
    let s = mask_logits.shape();
    let ps = class_probs.shape();
    if s.len() != 4 || ps.len() != 2 || s[0] != ps[0] || s[1] != ps[1] {
        return Err(TensorError::shape(
            "predict_mask_hard",
            format!("mask logits {s:?} vs class probs {ps:?}"),
        ));
    }
    let (n, c, hh, ww) = (s[0], s[1], s[2], s[3]);
    let picks = argmax_rows(class_probs);
    let hw = hh * ww;
    let mut out = vec![T::zero(); n * hw];
    for (sample, &cls) in picks.iter().enumerate() {
        let src = &mask_logits.data()[(sample * c + cls) * hw..(sample * c + cls + 1) * hw];
        for (o, &v) in out[sample * hw..(sample + 1) * hw].iter_mut().zip(src) {
            *o = crate::tensor::ops::sigmoid(v);
        }
    }
    Tensor::new(&[n, 1, hh, ww], out)
}

/// Soft rule: sigmoid of the class-probability-weighted mean of the
/// per-class mask logits.
pub fn predict_mask_soft<T: Scalar>(
    mask_logits: &Tensor<T>,
    class_probs: &Tensor<T>,
) -> Result<Tensor<T>> {
    let s = mask_logits.shape();
    let ps = class_probs.shape();
    if s.len() != 4 || ps.len() != 2 || s[0] != ps[0] || s[1] != ps[1] {
        return Err(TensorError::shape(
            "predict_mask_soft",
            format!("mask logits {s:?} vs class probs {ps:?}"),
        ));
    }
    let (n, c, hh, ww) = (s[0], s[1], s[2], s[3]);
    let hw = hh * ww;
    let inv_c = T::one() / T::of_f64(c as f64);
    let mut out = vec![T::zero(); n * hw];
    for sample in 0..n {
        let dst = &mut out[sample * hw..(sample + 1) * hw];
        for cls in 0..c {
            let p = class_probs.data()[sample * c + cls];
            let src = &mask_logits.data()[(sample * c + cls) * hw..(sample * c + cls + 1) * hw];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d += p * v;
            }
        }
        for d in dst.iter_mut() {
            *d = crate::tensor::ops::sigmoid(*d * inv_c);
        }
    }
    Tensor::new(&[n, 1, hh, ww], out)
}

/// Combined objective: class cross-entropy plus `lambda` times the mean
/// per-pixel binary cross-entropy of the variant's mask logits. Share
/// uses the single channel, Hard the ground-truth class channel, Soft the
/// probability-weighted mixture (differentiable through the class
/// branch).
pub fn combined_loss<'g, T: Scalar>(
    outputs: &ForwardOutputs<'g, T>,
    config: &ModelConfig,
    gt_class: &[usize],
    gt_mask: &Tensor<T>,
    branches: BranchMode,
) -> Result<Value<'g, T>> {
    let class_term = outputs.class_logits.softmax_cross_entropy(gt_class)?;
    if branches == BranchMode::ClassOnly {
        return Ok(class_term);
    }
    let z = match config.variant {
        Variant::Share => outputs.mask_logits,
        Variant::Hard => outputs.mask_logits.select_channel(gt_class)?,
        Variant::Soft => {
            let probs = outputs.class_logits.softmax()?;
            outputs
                .mask_logits
                .channel_mix(probs)?
                .scale(T::one() / T::of_f64(config.num_classes as f64))?
        }
    };
    let mask_term = z.sigmoid_bce(gt_mask)?;
    let lambda = T::of_f64(config.lambda);
    match branches {
        BranchMode::MaskOnly => mask_term.scale(lambda),
        BranchMode::ClassOnly => unreachable!(),
        BranchMode::Both => {
            if config.lambda == 0.0 {
                Ok(class_term)
            } else {
                class_term.add(mask_term.scale(lambda)?)
            }
        }
    }
}

/// Inference: forward pass plus the variant's mask rule, producing plain
/// tensors.
pub fn run_model<T: Scalar>(
    params: &ModelParams<T>,
    image: &Tensor<T>,
    landmark_maps: Option<&Tensor<T>>,
) -> Result<ModelOutputs<T>> {
    let config = &params.config;
    let g = Graph::new();
    let bound = BoundParams::bind(params, &g, false);
    let image_v = g.leaf_named("image", image.clone());
    let lm_v = landmark_maps.map(|t| g.leaf_named("landmark_maps", t.clone()));
    let out = forward(&bound, config, image_v, lm_v)?;
    let class_logits = out.class_logits.to_tensor();
    let mask_logits = out.mask_logits.to_tensor();
    let class_probs = softmax_rows_tensor(&class_logits);
    let mask_probs = match config.variant {
        Variant::Share => predict_mask_shared(&mask_logits)?,
        Variant::Hard => predict_mask_hard(&mask_logits, &class_probs)?,
        Variant::Soft => predict_mask_soft(&mask_logits, &class_probs)?,
    };
    Ok(ModelOutputs {
        class_logits,
        mask_logits,
        class_probs,
        mask_probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelParams, Variant};
    use crate::tensor::uniform_tensor;

    fn toy_config(variant: Variant, use_landmarks: bool) -> ModelConfig {
        ModelConfig {
            num_classes: 3,
            input_size: (16, 16),
            variant,
            use_landmarks,
            base_channels: 4,
            lambda: 100.0,
        }
    }

    fn toy_inputs(n: usize, with_lm: bool) -> (Tensor<f32>, Option<Tensor<f32>>) {
        let mut rng = crate::seed::stream(3, 9, 0, 0);
        let img = uniform_tensor::<f32, _>(&[n, 3, 16, 16], 0.5, &mut rng);
        let lm = with_lm.then(|| {
            Tensor::from_fn(&[n, crate::LANDMARK_COUNT, 16, 16], |i| {
                if i % 97 == 0 {
                    1.0
                } else {
                    0.0
                }
            })
        });
        (img, lm)
    }

    #[test]
    fn shape_contract_all_variants_and_landmark_modes() {
        for variant in [Variant::Share, Variant::Hard, Variant::Soft] {
            for lm_on in [false, true] {
                let cfg = toy_config(variant, lm_on);
                let params = ModelParams::<f32>::init(&cfg, 5).unwrap();
                let (img, lm) = toy_inputs(2, lm_on);
                let out = run_model(&params, &img, lm.as_ref()).unwrap();
                assert_eq!(out.class_logits.shape(), &[2, 3]);
                let k = cfg.mask_channels();
                assert_eq!(out.mask_logits.shape(), &[2, k, 16, 16]);
                assert_eq!(out.class_probs.shape(), &[2, 3]);
                assert_eq!(out.mask_probs.shape(), &[2, 1, 16, 16]);
                for r in 0..2 {
                    let s: f32 = out.class_probs.data()[r * 3..(r + 1) * 3].iter().sum();
                    assert!((s - 1.0).abs() < 1e-6);
                }
                assert!(out.mask_probs.data().iter().all(|&p| p > 0.0 && p < 1.0));
            }
        }
    }

    #[test]
    fn default_sized_shape_contract() {
        let cfg = ModelConfig {
            num_classes: 10,
            variant: Variant::Share,
            use_landmarks: false,
            ..Default::default()
        };
        let params = ModelParams::<f32>::init(&cfg, 2).unwrap();
        let mut rng = crate::seed::stream(4, 4, 0, 0);
        let img = uniform_tensor::<f32, _>(&[2, 3, 128, 128], 0.5, &mut rng);
        let out = run_model(&params, &img, None).unwrap();
        assert_eq!(out.class_logits.shape(), &[2, 10]);
        assert_eq!(out.mask_logits.shape(), &[2, 1, 128, 128]);

        let soft_cfg = ModelConfig {
            variant: Variant::Soft,
            use_landmarks: false,
            ..cfg
        };
        let soft_params = ModelParams::<f32>::init(&soft_cfg, 2).unwrap();
        let out = run_model(&soft_params, &img, None).unwrap();
        assert_eq!(out.mask_logits.shape(), &[2, 10, 128, 128]);
    }

    #[test]
    fn duplicated_sample_rows_are_identical() {
        let cfg = toy_config(Variant::Soft, true);
        let params = ModelParams::<f32>::init(&cfg, 11).unwrap();
        let (img1, lm1) = toy_inputs(1, true);
        // batch of three copies of the same sample
        let rep = |t: &Tensor<f32>, reps: usize| {
            let mut data = Vec::new();
            for _ in 0..reps {
                data.extend_from_slice(t.data());
            }
            let mut shape = t.shape().to_vec();
            shape[0] = reps;
            Tensor::new(&shape, data).unwrap()
        };
        let img3 = rep(&img1, 3);
        let lm3 = rep(lm1.as_ref().unwrap(), 3);
        let out = run_model(&params, &img3, Some(&lm3)).unwrap();
        let hw = 16 * 16;
        let row0 = &out.mask_probs.data()[0..hw];
        for s in 1..3 {
            assert_eq!(row0, &out.mask_probs.data()[s * hw..(s + 1) * hw]);
        }
        let c0 = &out.class_logits.data()[0..3];
        for s in 1..3 {
            assert_eq!(c0, &out.class_logits.data()[s * 3..(s + 1) * 3]);
        }
    }

    #[test]
    fn landmark_maps_required_iff_configured() {
        let cfg = toy_config(Variant::Share, true);
        let params = ModelParams::<f32>::init(&cfg, 1).unwrap();
        let (img, _) = toy_inputs(1, false);
        assert!(run_model(&params, &img, None).is_err());

        let cfg2 = toy_config(Variant::Share, false);
        let params2 = ModelParams::<f32>::init(&cfg2, 1).unwrap();
        let (_, lm) = toy_inputs(1, true);
        assert!(run_model(&params2, &img, lm.as_ref()).is_err());
    }

    #[test]
    fn predict_rules_match_their_closed_forms() {
        // shared: logit 0 -> 0.5; logit 4 -> 0.9820
        let logits = Tensor::<f64>::from_fn(&[1, 1, 1, 2], |i| if i == 0 { 0.0 } else { 4.0 });
        let p = predict_mask_shared(&logits).unwrap();
        assert!((p.data()[0] - 0.5).abs() < 1e-12);
        assert!((p.data()[1] - 0.9820137900379085).abs() < 1e-12);

        // hard: class logits (3,1) pick channel 0; logits +2 -> 0.8808
        let mask = Tensor::<f64>::from_fn(&[1, 2, 1, 1], |i| if i == 0 { 2.0 } else { -7.0 });
        let probs = softmax_rows_tensor(&Tensor::new(&[1, 2], vec![3.0, 1.0]).unwrap());
        let p = predict_mask_hard(&mask, &probs).unwrap();
        assert!((p.data()[0] - 0.8807970779778823).abs() < 1e-12);

        // hard tie -> lowest class index
        let tie = Tensor::new(&[1, 2], vec![0.5, 0.5]).unwrap();
        let p = predict_mask_hard(&mask, &tie).unwrap();
        assert!((p.data()[0] - 0.8807970779778823).abs() < 1e-12);

        // changing a non-selected channel leaves the hard output unchanged
        let mask2 = Tensor::<f64>::from_fn(&[1, 2, 1, 1], |i| if i == 0 { 2.0 } else { 55.0 });
        let p2 = predict_mask_hard(&mask2, &probs).unwrap();
        assert_eq!(p.data(), p2.data());

        // soft symmetry: uniform probs with antisymmetric logits -> exactly 0.5
        let anti = Tensor::<f64>::from_fn(&[1, 2, 1, 1], |i| if i == 0 { 2.0 } else { -2.0 });
        let p = predict_mask_soft(&anti, &tie).unwrap();
        assert_eq!(p.data()[0], 0.5);

        // soft with one-hot probs = sigmoid(logit / C)
        let onehot = Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap();
        let p = predict_mask_soft(&anti, &onehot).unwrap();
        assert!((p.data()[0] - crate::tensor::ops::sigmoid(1.0)).abs() < 1e-12);
    }

    #[test]
    fn hard_and_soft_binarize_identically_under_one_hot() {
        let mut rng = crate::seed::stream(21, 0, 0, 0);
        for trial in 0..100 {
            let c = 2 + (trial % 4);
            let mask = uniform_tensor::<f64, _>(&[2, c, 3, 3], 4.0, &mut rng);
            let mut probs = Tensor::zeros(&[2, c]);
            for s in 0..2 {
                let hot = (trial + s) % c;
                probs.data_mut()[s * c + hot] = 1.0;
            }
            let hard = predict_mask_hard(&mask, &probs).unwrap();
            let soft = predict_mask_soft(&mask, &probs).unwrap();
            for (h, s) in hard.data().iter().zip(soft.data()) {
                assert_eq!(*h >= 0.5, *s >= 0.5);
            }
        }
    }

    #[test]
    fn fuse_skip_ignores_zero_landmark_features() {
        let cfg = toy_config(Variant::Share, true);
        let params = ModelParams::<f32>::init(&cfg, 3).unwrap();
        let g = Graph::new();
        let bound = BoundParams::bind(&params, &g, false);
        let mut rng = crate::seed::stream(8, 8, 0, 0);
        let img_feat = g.leaf(uniform_tensor::<f32, _>(&[2, 4, 8, 8], 1.0, &mut rng));
        let zero_lm = g.leaf(Tensor::zeros(&[2, 4, 8, 8]));
        let fused = fuse_skip(&bound, 1, img_feat, zero_lm).unwrap();
        assert_eq!(fused.shape(), vec![2, 4, 8, 8]);

        // reference: gate computed from [img, 0], final projection sees a
        // zero landmark half, so only the image half contributes
        let g2 = Graph::new();
        let bound2 = BoundParams::bind(&params, &g2, false);
        let img_feat2 = g2.leaf(img_feat.to_tensor());
        let zero2 = g2.leaf(Tensor::zeros(&[2, 4, 8, 8]));
        let cat = img_feat2.concat_channels(&[zero2]).unwrap();
        let mid = cat
            .conv2d(bound2.get("ssma1.r.w"), Some(bound2.get("ssma1.r.b")), 1, 0, false)
            .unwrap()
            .relu()
            .unwrap();
        let gate = mid
            .conv2d(bound2.get("ssma1.e.w"), Some(bound2.get("ssma1.e.b")), 1, 0, false)
            .unwrap()
            .sigmoid()
            .unwrap();
        let manual = cat
            .mul(gate)
            .unwrap()
            .conv2d(bound2.get("ssma1.p.w"), Some(bound2.get("ssma1.p.b")), 1, 0, false)
            .unwrap();
        assert_eq!(fused.to_tensor().data(), manual.to_tensor().data());
    }

    #[test]
    fn fuse_skip_gradients_reach_both_stems() {
        let cfg = toy_config(Variant::Soft, true);
        let params = ModelParams::<f32>::init(&cfg, 13).unwrap();
        let g = Graph::new();
        let bound = BoundParams::bind(&params, &g, true);
        let (img, lm) = toy_inputs(2, true);
        let image_v = g.leaf_named("image", img);
        let lm_v = g.leaf_named("lm", lm.unwrap());
        let out = forward(&bound, &cfg, image_v, Some(lm_v)).unwrap();
        let gt_mask = Tensor::from_fn(&[2, 1, 16, 16], |i| (i % 2) as f32);
        let loss = combined_loss(&out, &cfg, &[0, 2], &gt_mask, BranchMode::Both).unwrap();
        let grads = g.backward(loss).unwrap();
        let norm = |name: &str| -> f64 {
            grads
                .tensor(bound.get(name))
                .data()
                .iter()
                .map(|v| (v.abs()) as f64)
                .sum()
        };
        assert!(norm("img1.w") > 0.0, "image stem got no gradient");
        assert!(norm("lm1.w") > 0.0, "landmark stem got no gradient");
        assert!(norm("ssma1.p.w") > 0.0, "fusion gate got no gradient");
    }

    #[test]
    fn hard_loss_gradient_zero_on_non_target_channels() {
        let g = Graph::new();
        let mut rng = crate::seed::stream(17, 2, 0, 0);
        let logits = g.leaf(uniform_tensor::<f64, _>(&[2, 4, 4, 4], 2.0, &mut rng).with_grad());
        let gt = [1usize, 3];
        let z = logits.select_channel(&gt).unwrap();
        let target = Tensor::from_fn(&[2, 1, 4, 4], |i| ((i / 3) % 2) as f64);
        let loss = z.sigmoid_bce(&target).unwrap();
        let grads = g.backward(loss).unwrap();
        let gl = grads.tensor(logits);
        let hw = 16;
        for s in 0..2 {
            for c in 0..4 {
                let slice = &gl.data()[(s * 4 + c) * hw..(s * 4 + c + 1) * hw];
                if c == gt[s] {
                    assert!(slice.iter().any(|&v| v != 0.0));
                } else {
                    assert!(slice.iter().all(|&v| v == 0.0), "channel {c} leaked gradient");
                }
            }
        }
    }

    #[test]
    fn combined_loss_closed_forms() {
        // uniform class logits and zero mask logits: L = ln2 + lambda ln2
        // (2 classes)
        let cfg = ModelConfig {
            num_classes: 2,
            input_size: (8, 8),
            variant: Variant::Share,
            use_landmarks: false,
            base_channels: 4,
            lambda: 100.0,
        };
        let g = Graph::new();
        let out = ForwardOutputs {
            class_logits: g.leaf(Tensor::<f64>::zeros(&[2, 2])),
            mask_logits: g.leaf(Tensor::<f64>::zeros(&[2, 1, 8, 8])),
        };
        let gt_mask = Tensor::from_fn(&[2, 1, 8, 8], |i| (i % 2) as f64);
        let loss = combined_loss(&out, &cfg, &[0, 1], &gt_mask, BranchMode::Both)
            .unwrap()
            .to_tensor()
            .item();
        let ln2 = std::f64::consts::LN_2;
        assert!((loss - (ln2 + 100.0 * ln2)).abs() < 1e-9);

        // lambda = 0 reduces to the classification loss exactly
        let cfg0 = ModelConfig { lambda: 0.0, ..cfg };
        let loss0 = combined_loss(&out, &cfg0, &[0, 1], &gt_mask, BranchMode::Both)
            .unwrap()
            .to_tensor()
            .item();
        assert_eq!(loss0, ln2);
    }

    #[test]
    fn landmark_perturbation_moves_the_mask_output() {
        let cfg = toy_config(Variant::Soft, true);
        let params = ModelParams::<f32>::init(&cfg, 23).unwrap();
        let (img, lm) = toy_inputs(1, true);
        let lm = lm.unwrap();
        let base = run_model(&params, &img, Some(&lm)).unwrap();
        let mut lm2 = lm.clone();
        for v in lm2.data_mut().iter_mut().step_by(41) {
            *v = 1.0 - *v;
        }
        let moved = run_model(&params, &img, Some(&lm2)).unwrap();
        let diff = base.mask_probs.max_abs_diff(&moved.mask_probs);
        assert!(diff > 0.0, "mask output insensitive to landmark maps");
    }
}
