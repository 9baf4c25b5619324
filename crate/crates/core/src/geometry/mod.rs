//! Landmark geometry: 68-point sets, least-squares similarity alignment
//! and the canonical face template.

mod warp;

pub use warp::{
    apply_alignment_image, apply_alignment_mask, draw_rescale, encode_landmark_maps,
    encode_landmark_maps_into, plan_alignment, preprocess, random_rescale, rescale,
    resize_bilinear, resize_nearest, warp_image, warp_mask8_into, warp_mask_nearest,
    warp_rgb8_into, Alignment, RESCALE_RANGE,
};

use crate::LANDMARK_COUNT;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("expected {LANDMARK_COUNT} landmarks, got {0}")]
    WrongCount(usize),
    #[error("non-finite landmark coordinates")]
    NotFinite,
    #[error("degenerate landmark configuration: {0}")]
    Degenerate(String),
    #[error("{0}")]
    Invalid(String),
    #[error("template parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// 68 ordered image-space points, x rightward and y downward.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: [(f64, f64); LANDMARK_COUNT],
}

impl LandmarkSet {
    pub fn new(points: [(f64, f64); LANDMARK_COUNT]) -> Result<Self> {
        if points.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(GeometryError::NotFinite);
        }
        Ok(LandmarkSet { points })
    }

    pub fn from_slice(points: &[(f64, f64)]) -> Result<Self> {
        let arr: [(f64, f64); LANDMARK_COUNT] = points
            .try_into()
            .map_err(|_| GeometryError::WrongCount(points.len()))?;
        Self::new(arr)
    }

    pub fn points(&self) -> &[(f64, f64); LANDMARK_COUNT] {
        &self.points
    }

    pub fn point(&self, i: usize) -> (f64, f64) {
        self.points[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().copied()
    }

    pub fn centroid(&self) -> (f64, f64) {
        let (mut sx, mut sy) = (0.0, 0.0);
        for (x, y) in self.iter() {
            sx += x;
            sy += y;
        }
        let n = LANDMARK_COUNT as f64;
        (sx / n, sy / n)
    }

    /// Apply a point map to every landmark.
    pub fn map(&self, f: impl Fn((f64, f64)) -> (f64, f64)) -> LandmarkSet {
        let mut points = self.points;
        for p in &mut points {
            *p = f(*p);
        }
        LandmarkSet { points }
    }

    pub fn transformed(&self, t: &SimilarityTransform) -> LandmarkSet {
        self.map(|p| t.apply(p))
    }

    pub fn scaled(&self, s: f64) -> LandmarkSet {
        self.map(|(x, y)| (x * s, y * s))
    }

    /// Root-mean-square distance to another set, pointwise.
    pub fn rms_distance(&self, other: &LandmarkSet) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.iter().zip(other.iter()) {
            let (dx, dy) = (a.0 - b.0, a.1 - b.1);
            acc += dx * dx + dy * dy;
        }
        (acc / LANDMARK_COUNT as f64).sqrt()
    }

    /// Midpoint of the left/right eye landmark rings (indices 36-41 and
    /// 42-47) — the inter-ocular segment endpoints.
    pub fn eye_centers(&self) -> ((f64, f64), (f64, f64)) {
        let mean = |range: std::ops::Range<usize>| {
            let mut sx = 0.0;
            let mut sy = 0.0;
            let n = range.len() as f64;
            for i in range {
                sx += self.points[i].0;
                sy += self.points[i].1;
            }
            (sx / n, sy / n)
        };
        (mean(36..42), mean(42..48))
    }

    pub fn interocular_distance(&self) -> f64 {
        let (a, b) = self.eye_centers();
        ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
    }
}

/// Rigid-plus-scale planar map `p -> s R(theta) p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: f64,
    pub translation: (f64, f64),
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: 0.0,
            translation: (0.0, 0.0),
        }
    }

    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let (a, b) = (
            self.scale * self.rotation.cos(),
            self.scale * self.rotation.sin(),
        );
        (
            a * x - b * y + self.translation.0,
            b * x + a * y + self.translation.1,
        )
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let inv_scale = 1.0 / self.scale;
        let rot = -self.rotation;
        let (a, b) = (inv_scale * rot.cos(), inv_scale * rot.sin());
        let (tx, ty) = self.translation;
        SimilarityTransform {
            scale: inv_scale,
            rotation: rot,
            translation: (-(a * tx - b * ty), -(b * tx + a * ty)),
        }
    }

    /// `self . other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        let t = self.apply(other.translation);
        SimilarityTransform {
            scale: self.scale * other.scale,
            rotation: self.rotation + other.rotation,
            translation: t,
        }
    }
}

/// Least-squares similarity (scale, rotation, translation) mapping `src`
/// onto `dst`, minimizing the summed squared point distances. Closed form
/// via centered cross-moments.
pub fn estimate_similarity(src: &LandmarkSet, dst: &LandmarkSet) -> Result<SimilarityTransform> {
    let sc = src.centroid();
    let dc = dst.centroid();
    let mut num_a = 0.0;
    let mut num_b = 0.0;
    let mut den = 0.0;
    for ((sx, sy), (dx, dy)) in src.iter().zip(dst.iter()) {
        let (sx, sy) = (sx - sc.0, sy - sc.1);
        let (dx, dy) = (dx - dc.0, dy - dc.1);
        num_a += sx * dx + sy * dy;
        num_b += sx * dy - sy * dx;
        den += sx * sx + sy * sy;
    }
    if den < 1e-12 {
        return Err(GeometryError::Degenerate(
            "source landmarks have zero variance".to_string(),
        ));
    }
    let a = num_a / den;
    let b = num_b / den;
    let scale = a.hypot(b);
    if scale <= 0.0 {
        return Err(GeometryError::Degenerate(
            "estimated scale is zero".to_string(),
        ));
    }
    let rotation = b.atan2(a);
    let translation = (
        dc.0 - (a * sc.0 - b * sc.1),
        dc.1 - (b * sc.0 + a * sc.1),
    );
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

/// Fixed 68-point reference shape inside the 128x128 target frame.
#[derive(Debug, Clone)]
pub struct CanonicalTemplate {
    points: LandmarkSet,
}

/// Frame size the shipped template is expressed in.
pub const TEMPLATE_FRAME: f64 = 128.0;

impl CanonicalTemplate {
    /// The versioned template asset bundled with the crate.
    pub fn bundled() -> CanonicalTemplate {
        Self::parse(include_str!("../../data/canonical_template_v1.txt"))
            .expect("bundled template is valid")
    }

    pub fn new(points: LandmarkSet) -> Result<Self> {
        for (x, y) in points.iter() {
            if !(8.0..=119.0).contains(&x) || !(8.0..=119.0).contains(&y) {
                return Err(GeometryError::Invalid(format!(
                    "template point ({x}, {y}) outside [8, 119]"
                )));
            }
        }
        Ok(CanonicalTemplate { points })
    }

    /// Parse the plain-text format: 68 lines of "x y".
    pub fn parse(text: &str) -> Result<Self> {
        let mut pts = Vec::with_capacity(LANDMARK_COUNT);
        for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let mut it = line.split_whitespace();
            let x = it
                .next()
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| GeometryError::Parse(format!("line {}: missing x", i + 1)))?;
            let y = it
                .next()
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| GeometryError::Parse(format!("line {}: missing y", i + 1)))?;
            if it.next().is_some() {
                return Err(GeometryError::Parse(format!("line {}: trailing tokens", i + 1)));
            }
            pts.push((x, y));
        }
        Self::new(LandmarkSet::from_slice(&pts)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (x, y) in self.points.iter() {
            out.push_str(&format!("{x:.4} {y:.4}\n"));
        }
        out
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn landmarks(&self) -> &LandmarkSet {
        &self.points
    }

    /// Template landmarks rescaled from the 128-frame to `(w, h)`.
    pub fn scaled_to(&self, (w, h): (usize, usize)) -> LandmarkSet {
        let (fx, fy) = (w as f64 / TEMPLATE_FRAME, h as f64 / TEMPLATE_FRAME);
        self.points.map(|(x, y)| (x * fx, y * fy))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_landmarks() -> LandmarkSet {
        let mut pts = [(0.0, 0.0); LANDMARK_COUNT];
        for (i, p) in pts.iter_mut().enumerate() {
            *p = (20.0 + (i % 10) as f64 * 9.0, 25.0 + (i / 10) as f64 * 11.0);
        }
        LandmarkSet::new(pts).unwrap()
    }

    #[test]
    fn identity_fit() {
        let lm = grid_landmarks();
        let t = estimate_similarity(&lm, &lm).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!(t.rotation.abs() < 1e-12);
        assert!(t.translation.0.abs() < 1e-9 && t.translation.1.abs() < 1e-9);
    }

    #[test]
    fn pure_shift_fit() {
        // src = dst shifted by (+5, 0): mapping src -> dst translates by (-5, 0)
        let dst = grid_landmarks();
        let src = dst.map(|(x, y)| (x + 5.0, y));
        let t = estimate_similarity(&src, &dst).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!(t.rotation.abs() < 1e-12);
        assert!((t.translation.0 + 5.0).abs() < 1e-9);
        assert!(t.translation.1.abs() < 1e-9);
    }

    #[test]
    fn rotation_recovery_about_centroid() {
        let dst = grid_landmarks();
        let c = dst.centroid();
        let th = 30f64.to_radians();
        let src = dst.map(|(x, y)| {
            let (dx, dy) = (x - c.0, y - c.1);
            (
                c.0 + th.cos() * dx - th.sin() * dy,
                c.1 + th.sin() * dx + th.cos() * dy,
            )
        });
        let t = estimate_similarity(&src, &dst).unwrap();
        assert!((t.rotation + th).abs() < 1e-6, "rotation {}", t.rotation);
        let resid = src.transformed(&t).rms_distance(&dst);
        assert!(resid < 1e-9, "residual {resid}");
    }

    #[test]
    fn degenerate_source_is_error() {
        let src = LandmarkSet::new([(5.0, 7.0); LANDMARK_COUNT]).unwrap();
        assert!(matches!(
            estimate_similarity(&src, &grid_landmarks()),
            Err(GeometryError::Degenerate(_))
        ));
    }

    #[test]
    fn inverse_composes_to_identity() {
        let t = SimilarityTransform {
            scale: 1.7,
            rotation: 0.6,
            translation: (12.0, -3.5),
        };
        let id = t.compose(&t.inverse());
        for p in [(0.0, 0.0), (10.0, 5.0), (-7.0, 113.0)] {
            let q = id.apply(p);
            assert!((q.0 - p.0).abs() < 1e-9 && (q.1 - p.1).abs() < 1e-9);
        }
    }

    #[test]
    fn bundled_template_is_valid_and_in_margin() {
        let t = CanonicalTemplate::bundled();
        assert_eq!(t.landmarks().points().len(), LANDMARK_COUNT);
        // iod pinned by construction
        assert!((t.landmarks().interocular_distance() - 40.0).abs() < 0.05);
    }

    #[test]
    fn template_roundtrip() {
        let t = CanonicalTemplate::bundled();
        let parsed = CanonicalTemplate::parse(&t.to_text()).unwrap();
        assert!(t.landmarks().rms_distance(parsed.landmarks()) < 1e-3);
    }
}
