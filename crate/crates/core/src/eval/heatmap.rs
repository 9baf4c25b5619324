//! Qualitative difference heat-maps.

use super::{EvalError, Result};
use crate::num::Scalar;
use crate::pnm::{write_pgm, GrayImage};
use crate::tensor::Tensor;
use std::path::Path;

/// Write a vertical three-panel strip per sample — predicted mask
/// probabilities, ground truth, |prediction - truth| — as one 8-bit PGM.
pub fn emit_heatmaps<T: Scalar>(
    mask_probs: &Tensor<T>,
    gt_mask: &Tensor<T>,
    out_path: &Path,
) -> Result<()> {
    if mask_probs.shape() != gt_mask.shape() {
        return Err(EvalError::Tensor(crate::tensor::TensorError::shape(
            "emit_heatmaps",
            format!("{:?} vs {:?}", mask_probs.shape(), gt_mask.shape()),
        )));
    }
    let (h, w) = match *mask_probs.shape() {
        [1, h, w] => (h, w),
        ref s => {
            return Err(EvalError::Invalid(format!(
                "emit_heatmaps: expected [1,H,W], got {s:?}"
            )))
        }
    };
    let quant = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut data = Vec::with_capacity(3 * h * w);
    for &p in mask_probs.data() {
        data.push(quant(p.as_f64()));
    }
    for &g in gt_mask.data() {
        data.push(quant(g.as_f64()));
    }
    for (&p, &g) in mask_probs.data().iter().zip(gt_mask.data()) {
        data.push(quant((p.as_f64() - g.as_f64()).abs()));
    }
    write_pgm(
        out_path,
        &GrayImage {
            w,
            h: 3 * h,
            data,
        },
    )
    .map_err(|e| EvalError::Invalid(format!("write {}: {e}", out_path.display())))
}
