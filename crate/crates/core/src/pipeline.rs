//! Shared record-to-tensor preparation for training and evaluation.
//!
//! One sample's path: load PPM + PGM, rescale by the augmentation factor
//! (1.0 at evaluation), similarity-align the landmarks onto the canonical
//! template, warp image (bilinear) and mask (nearest) into the model
//! frame, and encode the post-alignment landmarks as binary maps.

use crate::geometry::{
    encode_landmark_maps_into, plan_alignment, warp_mask8_into, warp_rgb8_into,
    CanonicalTemplate, LandmarkSet,
};
use crate::model::ModelConfig;
use crate::synth::dataset::{Manifest, SampleRecord};
use crate::synth::SourceClass;
use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("synth: {0}")]
    Synth(#[from] crate::synth::SynthError),
    #[error("geometry: {0}")]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("tensor: {0}")]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// One aligned training/eval sample.
pub struct PreparedSample {
    pub image: Tensor<f32>,
    pub landmark_maps: Option<Tensor<f32>>,
    pub mask: Tensor<f32>,
    pub label: usize,
    pub source: SourceClass,
}

/// A batch stacked along the leading axis.
pub struct PreparedBatch {
    pub images: Tensor<f32>,
    pub landmark_maps: Option<Tensor<f32>>,
    pub masks: Tensor<f32>,
    pub labels: Vec<usize>,
    pub sources: Vec<SourceClass>,
}

/// Manifest + template + class mapping, ready to prepare samples.
pub struct DataPipe<'m> {
    manifest: &'m Manifest,
    template: LandmarkSet,
    classes: Vec<SourceClass>,
    use_landmarks: bool,
    input_size: (usize, usize),
}

impl<'m> DataPipe<'m> {
    pub fn new(manifest: &'m Manifest, config: &ModelConfig) -> Result<DataPipe<'m>> {
        let classes = manifest.classes_present();
        if classes.is_empty() {
            return Err(PipelineError::Invalid("manifest has no records".into()));
        }
        if classes.len() != config.num_classes {
            return Err(PipelineError::Invalid(format!(
                "manifest carries {} classes but the model expects {}",
                classes.len(),
                config.num_classes
            )));
        }
        Ok(DataPipe {
            manifest,
            template: CanonicalTemplate::bundled().scaled_to(config.input_size),
            classes,
            use_landmarks: config.use_landmarks,
            input_size: config.input_size,
        })
    }

    pub fn classes(&self) -> &[SourceClass] {
        &self.classes
    }

    pub fn label_of(&self, source: SourceClass) -> usize {
        self.classes
            .iter()
            .position(|&c| c == source)
            .expect("source class is present in the manifest")
    }

    pub fn manifest(&self) -> &Manifest {
        self.manifest
    }

    /// Prepare one record at the given augmentation scale.
    pub fn prepare(&self, record: &SampleRecord, scale: f64) -> Result<PreparedSample> {
        let (w, h) = self.input_size;
        let mut image = vec![0.0f32; 3 * h * w];
        let mut mask = vec![0.0f32; h * w];
        let mut maps = self
            .use_landmarks
            .then(|| vec![0.0f32; crate::LANDMARK_COUNT * h * w]);
        self.prepare_into(record, scale, &mut image, &mut mask, maps.as_deref_mut())?;
        Ok(PreparedSample {
            image: Tensor::new(&[3, h, w], image)?,
            landmark_maps: match maps {
                Some(m) => Some(Tensor::new(&[crate::LANDMARK_COUNT, h, w], m)?),
                None => None,
            },
            mask: Tensor::new(&[1, h, w], mask)?,
            label: self.label_of(record.source),
            source: record.source,
        })
    }

    /// Warp one record straight into pre-zeroed output slices: image
    /// (planar `[3,H,W]`), mask (`[H,W]`), optional landmark maps.
    fn prepare_into(
        &self,
        record: &SampleRecord,
        scale: f64,
        image_out: &mut [f32],
        mask_out: &mut [f32],
        maps_out: Option<&mut [f32]>,
    ) -> Result<()> {
        let rgb = crate::pnm::read_ppm(&self.manifest.image_path(record))
            .map_err(crate::synth::SynthError::Pnm)?;
        let gray = crate::pnm::read_pgm(&self.manifest.mask_path(record))
            .map_err(crate::synth::SynthError::Pnm)?;
        let (w, h) = self.input_size;
        let plan = plan_alignment(&record.landmarks, &self.template, scale, (h, w))?;
        let full = plan.full_transform();
        warp_rgb8_into(&rgb.data, (rgb.h, rgb.w), &full, (h, w), image_out);
        warp_mask8_into(&gray.data, (gray.h, gray.w), &full, (h, w), mask_out);
        if let Some(m) = maps_out {
            encode_landmark_maps_into(&plan.apply_landmarks(&record.landmarks), (h, w), m);
        }
        Ok(())
    }

    /// Prepare and stack a batch of record indices. `scales` must be one
    /// augmentation factor per index (all 1.0 at evaluation).
    pub fn batch(&self, indices: &[usize], scales: &[f64]) -> Result<PreparedBatch> {
        assert_eq!(indices.len(), scales.len());
        if indices.is_empty() {
            return Err(PipelineError::Invalid("empty batch".into()));
        }
        let n = indices.len();
        let (w, h) = self.input_size;
        let mut images = vec![0.0f32; n * 3 * h * w];
        let mut maps = self
            .use_landmarks
            .then(|| vec![0.0f32; n * crate::LANDMARK_COUNT * h * w]);
        let mut masks = vec![0.0f32; n * h * w];
        let mut labels = Vec::with_capacity(n);
        let mut sources = Vec::with_capacity(n);
        for (slot, (&idx, &scale)) in indices.iter().zip(scales).enumerate() {
            let record = &self.manifest.records()[idx];
            let span = crate::LANDMARK_COUNT * h * w;
            self.prepare_into(
                record,
                scale,
                &mut images[slot * 3 * h * w..(slot + 1) * 3 * h * w],
                &mut masks[slot * h * w..(slot + 1) * h * w],
                maps.as_mut().map(|all| &mut all[slot * span..(slot + 1) * span]),
            )?;
            labels.push(self.label_of(record.source));
            sources.push(record.source);
        }
        Ok(PreparedBatch {
            images: Tensor::new(&[n, 3, h, w], images)?,
            landmark_maps: match maps {
                Some(m) => Some(Tensor::new(&[n, crate::LANDMARK_COUNT, h, w], m)?),
                None => None,
            },
            masks: Tensor::new(&[n, 1, h, w], masks)?,
            labels,
            sources,
        })
    }
}
