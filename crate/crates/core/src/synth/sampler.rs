//! Class-balanced batch sampling.
//!
//! Each drawn sample first picks a class uniformly over the classes
//! present in the manifest, then a record uniformly within that class —
//! so heavily imbalanced datasets still feed the optimizer evenly.

use super::dataset::{Manifest, Split};
use super::{Result, SourceClass, SynthError};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct BalancedSampler {
    classes: Vec<SourceClass>,
    per_class: Vec<Vec<usize>>,
}

impl BalancedSampler {
    pub fn new(manifest: &Manifest, split: Split) -> Result<BalancedSampler> {
        let classes = manifest.classes_present();
        if classes.is_empty() {
            return Err(SynthError::Invalid("manifest has no records".to_string()));
        }
        let mut per_class = Vec::with_capacity(classes.len());
        for &c in &classes {
            let idx = manifest.indices(c, split);
            if idx.is_empty() {
                return Err(SynthError::Invalid(format!(
                    "class {c} has no {} records",
                    split.name()
                )));
            }
            per_class.push(idx);
        }
        Ok(BalancedSampler { classes, per_class })
    }

    pub fn classes(&self) -> &[SourceClass] {
        &self.classes
    }

    /// Record indices for one batch; classes are drawn uniformly.
    pub fn next_batch<R: Rng>(&self, rng: &mut R, batch_size: usize) -> Vec<usize> {
        assert!(batch_size >= 1, "batch_size must be >= 1");
        (0..batch_size)
            .map(|_| {
                let c = rng.gen_range(0..self.classes.len());
                let list = &self.per_class[c];
                list[rng.gen_range(0..list.len())]
            })
            .collect()
    }
}
