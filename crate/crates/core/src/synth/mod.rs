//! Synthetic dataset fabrication: a desk-scale 10-class corpus of real,
//! generated and partially edited faces with pixel-exact binary masks.

pub mod artifact;
pub mod dataset;
pub mod face;
pub mod mask;
pub mod sampler;

pub use dataset::{build_manifest, composite_edited, Manifest, SampleRecord, SynthConfig};
pub use face::{FaceGeometry, FaceSpec, FaceStyle, FeatureOffsets, RgbImage};
pub use mask::{gen_freeform_mask, FreeFormMaskParams, MaskGrid};
pub use sampler::BalancedSampler;

use crate::geometry::{CanonicalTemplate, LandmarkSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{0}")]
    Invalid(String),
    #[error("geometry: {0}")]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("image io: {0}")]
    Pnm(#[from] crate::pnm::PnmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// The ten image origins. Two real corpora, six generator families, two
/// editing methods; the order is fixed and is the label order everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SourceClass {
    RealA,
    RealB,
    GenA,
    GenB,
    GenC,
    GenD,
    GenE,
    GenF,
    EditA,
    EditB,
}

/// Three-way forensic grouping of the ten source classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ForensicType {
    Real,
    Generated,
    Edited,
}

impl SourceClass {
    pub const ALL: [SourceClass; 10] = [
        SourceClass::RealA,
        SourceClass::RealB,
        SourceClass::GenA,
        SourceClass::GenB,
        SourceClass::GenC,
        SourceClass::GenD,
        SourceClass::GenE,
        SourceClass::GenF,
        SourceClass::EditA,
        SourceClass::EditB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SourceClass::RealA => "RealA",
            SourceClass::RealB => "RealB",
            SourceClass::GenA => "GenA",
            SourceClass::GenB => "GenB",
            SourceClass::GenC => "GenC",
            SourceClass::GenD => "GenD",
            SourceClass::GenE => "GenE",
            SourceClass::GenF => "GenF",
            SourceClass::EditA => "EditA",
            SourceClass::EditB => "EditB",
        }
    }

    pub fn parse(s: &str) -> Option<SourceClass> {
        SourceClass::ALL.iter().copied().find(|c| c.name() == s)
    }

    pub fn index(self) -> usize {
        SourceClass::ALL.iter().position(|&c| c == self).unwrap()
    }

    pub fn forensic_type(self) -> ForensicType {
        match self {
            SourceClass::RealA | SourceClass::RealB => ForensicType::Real,
            SourceClass::EditA | SourceClass::EditB => ForensicType::Edited,
            _ => ForensicType::Generated,
        }
    }

    pub fn is_real(self) -> bool {
        self.forensic_type() == ForensicType::Real
    }

    /// Full-scale corpus size this class stands in for.
    pub fn reference_count(self) -> u64 {
        match self {
            SourceClass::RealA => 202_599,
            SourceClass::RealB => 70_000,
            SourceClass::GenA
            | SourceClass::GenB
            | SourceClass::GenC
            | SourceClass::GenD
            | SourceClass::GenE
            | SourceClass::GenF => 100_000,
            SourceClass::EditA => 202_599,
            SourceClass::EditB => 272_599,
        }
    }

    /// Native image size (w, h) of this source family.
    pub fn image_size(self) -> (usize, usize) {
        match self {
            SourceClass::RealA | SourceClass::EditA => (178, 218),
            SourceClass::RealB => (256, 256),
            SourceClass::GenE | SourceClass::GenF => (256, 256),
            _ => (128, 128),
        }
    }
}

impl std::fmt::Display for SourceClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl ForensicType {
    pub fn name(self) -> &'static str {
        match self {
            ForensicType::Real => "Real",
            ForensicType::Generated => "Generated",
            ForensicType::Edited => "Edited",
        }
    }
}

/// Canonical template derived from the painter's nominal landmark shape:
/// inter-ocular distance scaled to 40 px and centroid moved to the center
/// of the 128x128 frame. The bundled asset freezes this computation.
pub fn canonical_template_from_painter() -> CanonicalTemplate {
    let lm = FaceGeometry::nominal(128, 128).landmarks();
    CanonicalTemplate::new(normalize_template_shape(&lm)).expect("painter template in range")
}

fn normalize_template_shape(lm: &LandmarkSet) -> LandmarkSet {
    let scale = 40.0 / lm.interocular_distance();
    let c = lm.centroid();
    lm.map(|(x, y)| (63.5 + (x - c.0) * scale, 63.5 + (y - c.1) * scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_order_and_type_mapping() {
        assert_eq!(SourceClass::ALL.len(), 10);
        assert_eq!(SourceClass::RealB.index(), 1);
        assert_eq!(SourceClass::EditB.index(), 9);
        assert_eq!(SourceClass::RealA.forensic_type(), ForensicType::Real);
        assert_eq!(SourceClass::GenF.forensic_type(), ForensicType::Generated);
        assert_eq!(SourceClass::EditA.forensic_type(), ForensicType::Edited);
        for c in SourceClass::ALL {
            assert_eq!(SourceClass::parse(c.name()), Some(c));
        }
    }

    #[test]
    fn reference_counts_total() {
        let total: u64 = SourceClass::ALL.iter().map(|c| c.reference_count()).sum();
        assert_eq!(total, 1_347_797);
    }

    #[test]
    fn bundled_template_matches_painter_derivation() {
        let derived = canonical_template_from_painter();
        let bundled = CanonicalTemplate::bundled();
        let rms = derived.landmarks().rms_distance(bundled.landmarks());
        assert!(rms < 1e-3, "template drifted from painter shape: rms {rms}");
    }

    #[test]
    fn painter_template_is_normalized() {
        let t = canonical_template_from_painter();
        assert!((t.landmarks().interocular_distance() - 40.0).abs() < 1e-9);
        let c = t.landmarks().centroid();
        assert!((c.0 - 63.5).abs() < 1e-9 && (c.1 - 63.5).abs() < 1e-9);
    }
}
