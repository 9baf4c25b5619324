//! Evaluation: the four metric families, IoU, report aggregation and the
//! deterministic test-split pass.
//!
//! Metric families (matching the result-table layout):
//! - FBD — binary detection from the class branch (real vs fake)
//! - FBDM — binary detection from the mask ("one edited pixel == fake")
//! - FTC — forensic type classification (real / generated / edited)
//! - FSC — source classification (exact class)
//! - IoU — localization, positive class = edited (0) pixels

mod heatmap;

pub use heatmap::emit_heatmaps;

use crate::model::{argmax_rows, run_model, ModelParams};
use crate::num::Scalar;
use crate::pipeline::{DataPipe, PipelineError};
use crate::synth::dataset::{Manifest, Split};
use crate::synth::SourceClass;
use crate::tensor::{Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("pipeline: {0}")]
    Pipeline(#[from] PipelineError),
    #[error("tensor: {0}")]
    Tensor(#[from] TensorError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Mask binarization threshold: probabilities >= 0.5 count as pristine.
pub const MASK_THRESHOLD: f64 = 0.5;

/// Fake iff any pixel binarizes to edited (probability below threshold).
pub fn mask_binary_detection<T: Scalar>(mask_probs: &Tensor<T>, threshold: f64) -> bool {
    mask_probs.data().iter().any(|&p| p.as_f64() < threshold)
}

/// Binarize pristine-probabilities: >= threshold -> 1, else 0.
pub fn binarize_mask<T: Scalar>(mask_probs: &Tensor<T>, threshold: f64) -> Tensor<T> {
    Tensor::from_fn(mask_probs.shape(), |i| {
        if mask_probs.data()[i].as_f64() >= threshold {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Intersection over union of the edited (0-valued) regions; both-empty
/// scores 1.0.
pub fn iou<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(EvalError::Tensor(TensorError::shape(
            "iou",
            format!("{:?} vs {:?}", pred.shape(), gt.shape()),
        )));
    }
    for t in [pred, gt] {
        if t.data().iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(EvalError::Invalid("iou: masks must be binary".into()));
        }
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let pf = p == T::zero();
        let gf = g == T::zero();
        inter += (pf && gf) as u64;
        union += (pf || gf) as u64;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Correctness of one class prediction at the three granularities.
#[derive(Debug, Clone, Copy)]
pub struct ClassifyOutcome {
    pub source_ok: bool,
    pub type_ok: bool,
    pub binary_ok: bool,
}

pub fn classify_outcome(pred: SourceClass, label: SourceClass) -> ClassifyOutcome {
    ClassifyOutcome {
        source_ok: pred == label,
        type_ok: pred.forensic_type() == label.forensic_type(),
        binary_ok: pred.is_real() == label.is_real(),
    }
}

/// One evaluated sample, ready for aggregation.
#[derive(Debug, Clone, Copy)]
pub struct SampleEval {
    pub label: SourceClass,
    pub pred_class: SourceClass,
    /// Mask rule says "fake".
    pub mask_says_fake: bool,
    pub iou: f64,
}

/// Per-class accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClassAgg {
    pub n: usize,
    pub fbd_correct: usize,
    pub fbdm_correct: usize,
    pub ftc_correct: usize,
    pub fsc_correct: usize,
    pub iou_sum: f64,
}

/// Per-class and total accuracies/IoU; classes absent from the evaluated
/// split report `None`.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub classes: Vec<SourceClass>,
    pub per_class: Vec<ClassAgg>,
}

/// The five metric rows of the report tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Fbd,
    Fbdm,
    Ftc,
    Fsc,
    Iou,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Fbd, Metric::Fbdm, Metric::Ftc, Metric::Fsc, Metric::Iou];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Fbd => "FBD",
            Metric::Fbdm => "FBDM",
            Metric::Ftc => "FTC",
            Metric::Fsc => "FSC",
            Metric::Iou => "IoU",
        }
    }
}

impl MetricsReport {
    /// Aggregate evaluated samples over the given class set.
    pub fn aggregate(classes: &[SourceClass], samples: &[SampleEval]) -> MetricsReport {
        let mut per_class = vec![ClassAgg::default(); classes.len()];
        for s in samples {
            let slot = classes
                .iter()
                .position(|&c| c == s.label)
                .expect("sample label is in the class set");
            let agg = &mut per_class[slot];
            let outcome = classify_outcome(s.pred_class, s.label);
            agg.n += 1;
            agg.fbd_correct += outcome.binary_ok as usize;
            agg.ftc_correct += outcome.type_ok as usize;
            agg.fsc_correct += outcome.source_ok as usize;
            let truly_fake = !s.label.is_real();
            agg.fbdm_correct += (s.mask_says_fake == truly_fake) as usize;
            agg.iou_sum += s.iou;
        }
        MetricsReport {
            classes: classes.to_vec(),
            per_class,
        }
    }

    fn class_value(&self, agg: &ClassAgg, metric: Metric) -> Option<f64> {
        if agg.n == 0 {
            return None;
        }
        let n = agg.n as f64;
        Some(match metric {
            Metric::Fbd => agg.fbd_correct as f64 / n,
            Metric::Fbdm => agg.fbdm_correct as f64 / n,
            Metric::Ftc => agg.ftc_correct as f64 / n,
            Metric::Fsc => agg.fsc_correct as f64 / n,
            Metric::Iou => agg.iou_sum / n,
        })
    }

    /// Per-class value; `None` when the class is absent from the split.
    pub fn per_class_value(&self, class: SourceClass, metric: Metric) -> Option<f64> {
        let slot = self.classes.iter().position(|&c| c == class)?;
        self.class_value(&self.per_class[slot], metric)
    }

    /// Sample-weighted total over all classes.
    pub fn total(&self, metric: Metric) -> Option<f64> {
        let n: usize = self.per_class.iter().map(|a| a.n).sum();
        if n == 0 {
            return None;
        }
        let sum: f64 = self
            .per_class
            .iter()
            .filter_map(|a| self.class_value(a, metric).map(|v| v * a.n as f64))
            .sum();
        Some(sum / n as f64)
    }

    pub fn total_samples(&self) -> usize {
        self.per_class.iter().map(|a| a.n).sum()
    }

    /// Tab-separated table, classes as columns and metrics as rows,
    /// percentages with two decimals, `-` for absent classes.
    pub fn to_table_string(&self) -> String {
        let mut out = String::from("metric");
        for c in &self.classes {
            out.push('\t');
            out.push_str(c.name());
        }
        out.push_str("\tTotal\n");
        for metric in Metric::ALL {
            out.push_str(metric.name());
            for (slot, _) in self.classes.iter().enumerate() {
                out.push('\t');
                match self.class_value(&self.per_class[slot], metric) {
                    Some(v) => out.push_str(&format!("{:.2}", v * 100.0)),
                    None => out.push('-'),
                }
            }
            out.push('\t');
            match self.total(metric) {
                Some(v) => out.push_str(&format!("{:.2}", v * 100.0)),
                None => out.push('-'),
            }
            out.push('\n');
        }
        out.push('n');
        for agg in &self.per_class {
            out.push_str(&format!("\t{}", agg.n));
        }
        out.push_str(&format!("\t{}\n", self.total_samples()));
        out
    }

    /// Machine-readable flat form: `metric.class=value` lines.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        for metric in Metric::ALL {
            let key = metric.name().to_lowercase();
            for (slot, c) in self.classes.iter().enumerate() {
                if let Some(v) = self.class_value(&self.per_class[slot], metric) {
                    out.push_str(&format!("{key}.{}={v:.6}\n", c.name()));
                }
            }
            if let Some(v) = self.total(metric) {
                out.push_str(&format!("{key}.total={v:.6}\n"));
            }
        }
        for (slot, c) in self.classes.iter().enumerate() {
            out.push_str(&format!("n.{}={}\n", c.name(), self.per_class[slot].n));
        }
        out.push_str(&format!("n.total={}\n", self.total_samples()));
        out
    }
}

/// Batch size of the evaluation forward passes.
const EVAL_CHUNK: usize = 16;

/// Deterministic pass over one split: no augmentation (scale fixed at
/// 1.0), variant-specific mask rule, per-image IoU averaged per class.
pub fn evaluate(params: &ModelParams<f32>, manifest: &Manifest, split: Split) -> Result<MetricsReport> {
    let pipe = DataPipe::new(manifest, &params.config)?;
    let indices: Vec<usize> = (0..manifest.len())
        .filter(|&i| manifest.records()[i].split == split)
        .collect();
    if indices.is_empty() {
        return Err(EvalError::Invalid(format!(
            "split {} has no records",
            split.name()
        )));
    }
    let samples = evaluate_indices(params, &pipe, &indices)?;
    Ok(MetricsReport::aggregate(pipe.classes(), &samples))
}

/// Evaluate explicit record indices (used by the overfit check, which
/// scores the training split).
pub fn evaluate_indices(
    params: &ModelParams<f32>,
    pipe: &DataPipe<'_>,
    indices: &[usize],
) -> Result<Vec<SampleEval>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = pipe.batch(chunk, &vec![1.0; chunk.len()])?;
        let outputs = run_model(params, &batch.images, batch.landmark_maps.as_ref())?;
        let picks = argmax_rows(&outputs.class_probs);
        let (h, w) = (batch.masks.shape()[2], batch.masks.shape()[3]);
        let hw = h * w;
        for (slot, &pick) in picks.iter().enumerate() {
            let probs = Tensor::new(
                &[1, h, w],
                outputs.mask_probs.data()[slot * hw..(slot + 1) * hw].to_vec(),
            )?;
            let pred_mask = binarize_mask(&probs, MASK_THRESHOLD);
            let gt_mask = Tensor::new(
                &[1, h, w],
                batch.masks.data()[slot * hw..(slot + 1) * hw].to_vec(),
            )?;
            out.push(SampleEval {
                label: batch.sources[slot],
                pred_class: pipe.classes()[pick],
                mask_says_fake: mask_binary_detection(&probs, MASK_THRESHOLD),
                iou: iou(&pred_mask, &gt_mask)?,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_rule_examples() {
        let all_high = Tensor::<f32>::filled(&[1, 4, 4], 0.9);
        assert!(!mask_binary_detection(&all_high, MASK_THRESHOLD));
        let mut one_low = all_high.clone();
        one_low.data_mut()[7] = 0.2;
        assert!(mask_binary_detection(&one_low, MASK_THRESHOLD));
        // boundary: exactly 0.5 counts as pristine
        let boundary = Tensor::<f32>::filled(&[1, 4, 4], 0.5);
        assert!(!mask_binary_detection(&boundary, MASK_THRESHOLD));
    }

    #[test]
    fn iou_examples() {
        let a = Tensor::<f32>::from_fn(&[1, 2, 2], |i| (i % 2) as f32);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let ones = Tensor::<f32>::filled(&[1, 2, 2], 1.0);
        assert_eq!(iou(&ones, &ones).unwrap(), 1.0);
        // gt fake = 2 px, pred fake = 2 px, overlap 1 -> 1/3
        let gt = Tensor::<f32>::new(&[1, 2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let pred = Tensor::<f32>::new(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((iou(&pred, &gt).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_rejects_bad_inputs() {
        let a = Tensor::<f32>::filled(&[1, 2, 2], 1.0);
        let b = Tensor::<f32>::filled(&[1, 2, 3], 1.0);
        assert!(iou(&a, &b).is_err());
        let c = Tensor::<f32>::filled(&[1, 2, 2], 0.5);
        assert!(iou(&a, &c).is_err());
    }

    #[test]
    fn classify_mapping_examples() {
        let o = classify_outcome(SourceClass::GenB, SourceClass::GenC);
        assert!(!o.source_ok && o.type_ok && o.binary_ok);
        let o = classify_outcome(SourceClass::RealA, SourceClass::EditB);
        assert!(!o.source_ok && !o.type_ok && !o.binary_ok);
        let o = classify_outcome(SourceClass::EditA, SourceClass::EditA);
        assert!(o.source_ok && o.type_ok && o.binary_ok);
        // generated predicted as edited: binary still correct (both fake)
        let o = classify_outcome(SourceClass::GenA, SourceClass::EditA);
        assert!(!o.source_ok && !o.type_ok && o.binary_ok);
    }

    #[test]
    fn perfect_oracle_scores_ones_everywhere() {
        let classes = SourceClass::ALL.to_vec();
        let samples: Vec<SampleEval> = SourceClass::ALL
            .iter()
            .flat_map(|&c| {
                (0..5).map(move |_| SampleEval {
                    label: c,
                    pred_class: c,
                    mask_says_fake: !c.is_real(),
                    iou: 1.0,
                })
            })
            .collect();
        let report = MetricsReport::aggregate(&classes, &samples);
        for metric in Metric::ALL {
            assert_eq!(report.total(metric), Some(1.0));
            for c in SourceClass::ALL {
                assert_eq!(report.per_class_value(c, metric), Some(1.0));
            }
        }
    }

    #[test]
    fn totals_are_sample_weighted_means() {
        let classes = vec![SourceClass::RealA, SourceClass::GenA];
        let mut samples = Vec::new();
        // 3 RealA: 2 correct source; 1 GenA: 0 correct source
        for i in 0..3 {
            samples.push(SampleEval {
                label: SourceClass::RealA,
                pred_class: if i < 2 { SourceClass::RealA } else { SourceClass::GenA },
                mask_says_fake: false,
                iou: 0.5,
            });
        }
        samples.push(SampleEval {
            label: SourceClass::GenA,
            pred_class: SourceClass::RealA,
            mask_says_fake: false,
            iou: 0.25,
        });
        let report = MetricsReport::aggregate(&classes, &samples);
        let fsc_a = report.per_class_value(SourceClass::RealA, Metric::Fsc).unwrap();
        let fsc_b = report.per_class_value(SourceClass::GenA, Metric::Fsc).unwrap();
        let want = (fsc_a * 3.0 + fsc_b * 1.0) / 4.0;
        assert!((report.total(Metric::Fsc).unwrap() - want).abs() < 1e-12);
        let want_iou = (0.5 * 3.0 + 0.25) / 4.0;
        assert!((report.total(Metric::Iou).unwrap() - want_iou).abs() < 1e-12);
    }

    #[test]
    fn absent_class_reports_none_not_failure() {
        let classes = vec![SourceClass::RealA, SourceClass::GenA];
        let samples = vec![SampleEval {
            label: SourceClass::RealA,
            pred_class: SourceClass::RealA,
            mask_says_fake: false,
            iou: 1.0,
        }];
        let report = MetricsReport::aggregate(&classes, &samples);
        assert_eq!(report.per_class_value(SourceClass::GenA, Metric::Fbd), None);
        assert!(report.to_table_string().contains('-'));
        assert_eq!(report.total(Metric::Fbd), Some(1.0));
    }

    #[test]
    fn table_layout_has_class_columns_and_total() {
        let classes = SourceClass::ALL.to_vec();
        let report = MetricsReport::aggregate(&classes, &[]);
        let table = report.to_table_string();
        let header = table.lines().next().unwrap();
        for c in SourceClass::ALL {
            assert!(header.contains(c.name()));
        }
        assert!(header.ends_with("Total"));
        assert_eq!(table.lines().count(), 1 + Metric::ALL.len() + 1);
    }
}
