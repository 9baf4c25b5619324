//! The full gradient-verification suite: every differentiable operation
//! plus the combined loss of the complete two-branch network for all
//! three mask-head variants, checked against central finite differences
//! in `f64`.
//!
//! Whole-model checks use a smaller probe step than per-op checks and a
//! ReLU margin guard: seeds are scanned deterministically until no
//! preactivation sits inside the probe window, which keeps the central
//! difference on one smooth branch everywhere.

use crate::model::{
    combined_loss, forward_unfused, BoundParams, BranchMode, ModelConfig, ModelParams, Variant,
};
use crate::tensor::gradcheck::{
    check_gradients, op_suite, CheckReport, MODEL_FD_STEP, RELU_MARGIN_FACTOR,
};
use crate::tensor::{Graph, Result, Tensor};
use crate::LANDMARK_COUNT;
use rand::Rng;

fn toy_model_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        num_classes: 3,
        input_size: (16, 16),
        variant,
        use_landmarks: true,
        base_channels: 2,
        lambda: 100.0,
    }
}

fn toy_inputs(seed: u64) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>, Vec<usize>) {
    let mut rng = crate::seed::stream(seed, 0x47, 0, 0);
    let image = Tensor::from_fn(&[2, 3, 16, 16], |_| rng.gen_range(-1.0..1.0));
    let mut maps = Tensor::zeros(&[2, LANDMARK_COUNT, 16, 16]);
    for s in 0..2 {
        for k in 0..LANDMARK_COUNT {
            let pos = rng.gen_range(0..256);
            maps.data_mut()[(s * LANDMARK_COUNT + k) * 256 + pos] = 1.0;
        }
    }
    let gt_mask = Tensor::from_fn(&[2, 1, 16, 16], |_| f64::from(rng.gen_range(0..2)));
    let gt_class = vec![rng.gen_range(0..3), rng.gen_range(0..3)];
    (image, maps, gt_mask, gt_class)
}

/// Finite-difference check of the combined loss for one variant over all
/// trainable parameters of a toy instance.
pub fn check_full_loss(variant: Variant) -> Result<CheckReport> {
    let cfg = toy_model_config(variant);
    let h = MODEL_FD_STEP;
    let needed_margin = RELU_MARGIN_FACTOR * h;

    // deterministic seed scan for a kink-free operating point; biases are
    // re-randomized away from zero because zero-initialized biases put
    // every empty landmark-map region exactly on the ReLU kink
    let mut chosen = None;
    for seed in 0..256u64 {
        let mut params = ModelParams::<f64>::init(&cfg, seed)?;
        let mut prng = crate::seed::stream(seed, 0x48, 0, 0);
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                *v = prng.gen_range(-0.4..0.4);
            }
        }
        let (image, maps, gt_mask, gt_class) = toy_inputs(seed);
        let g = Graph::new();
        let bound = BoundParams::bind(&params, &g, false);
        let image_v = g.leaf_named("image", image.clone());
        let maps_v = g.leaf_named("maps", maps.clone());
        let out = forward_unfused(&bound, &cfg, image_v, Some(maps_v))?;
        combined_loss(&out, &cfg, &gt_class, &gt_mask, BranchMode::Both)?;
        let margin = g
            .relu_input_margin()
            .expect("model forward uses standalone relu nodes");
        if margin > needed_margin {
            chosen = Some((params, image, maps, gt_mask, gt_class));
            break;
        }
    }
    let (params, image, maps, gt_mask, gt_class) =
        chosen.expect("no kink-free seed found in 256 attempts");

    let names: Vec<String> = params.entries().iter().map(|(n, _)| n.clone()).collect();
    let tensors: Vec<Tensor<f64>> = params.entries().iter().map(|(_, t)| t.clone()).collect();
    let report = check_gradients(
        &format!("combined loss ({})", variant.name()),
        &tensors,
        h,
        move |g, leaves| {
            let bound = BoundParams::from_values(
                names
                    .iter()
                    .cloned()
                    .zip(leaves.iter().copied())
                    .collect(),
            );
            let image_v = g.leaf_named("image", image.clone());
            let maps_v = g.leaf_named("maps", maps.clone());
            let out = forward_unfused(&bound, &cfg, image_v, Some(maps_v))?;
            combined_loss(&out, &cfg, &gt_class, &gt_mask, BranchMode::Both)
        },
    )?;
    Ok(report)
}

/// Every per-operation check plus the three whole-model checks.
pub fn full_suite() -> Result<Vec<CheckReport>> {
    let mut reports = op_suite()?;
    for variant in [Variant::Share, Variant::Hard, Variant::Soft] {
        reports.push(check_full_loss(variant)?);
    }
    Ok(reports)
}
