//! Dataset fabrication and the manifest format.
//!
//! Every record is a pure function of `(config, root seed)`: per-record
//! ChaCha8 streams are derived with the splittable mixer, so rebuilding
//! with the same seed reproduces every file byte for byte.
//!
//! Labelling scheme: real sources carry all-ones masks, generated sources
//! all-zeros, edited sources the free-form mask used for compositing
//! (1 = pristine pixel, 0 = edited pixel).

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::artifact::apply_artifact;
use super::face::{BackgroundKind, Canvas, FaceGeometry, FaceSpec, FaceStyle, FeatureOffsets, RgbImage};
use super::mask::{gen_freeform_mask_grid, FreeFormMaskParams, MaskGrid};
use super::{Result, SourceClass, SynthError};
use crate::geometry::LandmarkSet;
use crate::num::Scalar;
use crate::pnm::{self, GrayImage};
use crate::seed::{self, TAG_RECORD};
use crate::tensor::Tensor;
use crate::LANDMARK_COUNT;

/// Drawn-feature displacement (px at the 128 scale) applied to fake
/// renders at strength 1: the rendered geometry disagrees with the
/// annotated landmarks by this much.
pub const GEOMETRY_JITTER_PX: f64 = 2.5;

/// Train/test membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One dataset item.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub image_path: String,
    pub mask_path: String,
    pub landmarks: LandmarkSet,
    pub source: SourceClass,
    pub split: Split,
}

/// Dataset generation settings.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub root_seed: u64,
    /// Fraction of each class's reference corpus size (0.01 gives the
    /// default desk dataset of 13,478 records).
    pub scale: f64,
    pub artifact_strength: f64,
    /// Explicit per-class counts override `scale` when present.
    pub counts_override: Option<[usize; 10]>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            root_seed: 42,
            scale: 0.01,
            artifact_strength: 1.0,
            counts_override: None,
        }
    }
}

impl SynthConfig {
    pub fn counts(&self) -> [usize; 10] {
        if let Some(c) = self.counts_override {
            return c;
        }
        let mut out = [0usize; 10];
        for (i, class) in SourceClass::ALL.iter().enumerate() {
            out[i] = (class.reference_count() as f64 * self.scale).round() as usize;
        }
        out
    }
}

fn real_style_for<R: Rng>(rng: &mut R, family: SourceClass) -> FaceStyle {
    match family {
        SourceClass::RealA | SourceClass::EditA => {
            FaceStyle::sample(rng, BackgroundKind::HorizontalGradient, 0.015)
        }
        SourceClass::RealB => FaceStyle::sample(rng, BackgroundKind::Radial, 0.004),
        _ => FaceStyle::sample(rng, BackgroundKind::VerticalGradient, 0.008),
    }
}

/// Deterministic pristine face for the two real corpora stand-ins.
pub fn gen_real_face(seed: u64, family: SourceClass) -> (RgbImage, LandmarkSet) {
    assert!(
        matches!(family, SourceClass::RealA | SourceClass::RealB),
        "gen_real_face: {family} is not a real family"
    );
    let mut rng = chacha(seed);
    let (w, h) = family.image_size();
    let spec = FaceSpec {
        geometry: FaceGeometry::sample(&mut rng, w, h),
        style: real_style_for(&mut rng, family),
        offsets: FeatureOffsets::zero(),
    };
    let lm = spec.landmarks();
    (spec.render(&mut rng).quantize(), lm)
}

fn chacha(seed: u64) -> ChaCha8Rng {
    use rand_chacha::rand_core::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

fn fake_canvas(seed: u64, family: SourceClass, strength: f64) -> (Canvas, LandmarkSet, ChaCha8Rng) {
    let mut rng = chacha(seed);
    let (w, h) = family.image_size();
    let u = w.min(h) as f64;
    let geometry = FaceGeometry::sample(&mut rng, w, h);
    let style = real_style_for(&mut rng, family);
    let offsets = FeatureOffsets::sample(&mut rng, GEOMETRY_JITTER_PX * strength * u / 128.0);
    let spec = FaceSpec {
        geometry,
        style,
        offsets,
    };
    let lm = spec.landmarks();
    let canvas = spec.render(&mut rng);
    (canvas, lm, rng)
}

/// The degenerate control for [`gen_fake_face`]: same seed and stream,
/// no artifact overlay.
pub fn gen_base_face(seed: u64, family: SourceClass, strength: f64) -> (RgbImage, LandmarkSet) {
    let (canvas, lm, _) = fake_canvas(seed, family, strength);
    (canvas.quantize(), lm)
}

/// Generator-family face: painted with feature offsets inconsistent with
/// its landmark annotations, then overlaid with the family's artifact
/// signature.
pub fn gen_fake_face(seed: u64, family: SourceClass, strength: f64) -> (RgbImage, LandmarkSet) {
    assert!(
        matches!(
            family,
            SourceClass::GenA
                | SourceClass::GenB
                | SourceClass::GenC
                | SourceClass::GenD
                | SourceClass::GenE
                | SourceClass::GenF
        ),
        "gen_fake_face: {family} is not a generator family"
    );
    let (mut canvas, lm, mut rng) = fake_canvas(seed, family, strength);
    apply_artifact(&mut canvas, family, strength, &mut rng);
    (canvas.quantize(), lm)
}

fn posterize(canvas: &mut Canvas, levels: f64) {
    for v in &mut canvas.data {
        *v = (*v * levels).round() / levels;
    }
}

fn box_blur(canvas: &mut Canvas, radius: usize, mix: f64) {
    // reuse the GenC kernel through a throwaway rng-free path
    let (w, h, hw) = (canvas.w, canvas.h, canvas.w * canvas.h);
    let mut blurred = vec![0.0f64; 3 * hw];
    for ch in 0..3 {
        let src = &canvas.data[ch * hw..(ch + 1) * hw];
        let dst = &mut blurred[ch * hw..(ch + 1) * hw];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                let mut n = 0.0;
                for dy in -(radius as isize)..=(radius as isize) {
                    let yy = y as isize + dy;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for dx in -(radius as isize)..=(radius as isize) {
                        let xx = x as isize + dx;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        acc += src[yy as usize * w + xx as usize];
                        n += 1.0;
                    }
                }
                dst[y * w + x] = acc / n;
            }
        }
    }
    for (v, b) in canvas.data.iter_mut().zip(&blurred) {
        *v = *v * (1.0 - mix) + b * mix;
    }
}

/// Components of one edited record before compositing.
pub struct EditedParts {
    pub real: RgbImage,
    pub fake: RgbImage,
    pub mask: MaskGrid,
    pub landmarks: LandmarkSet,
}

/// Deterministic components for an edited record: a pristine base render,
/// a counterfeit re-render of the same face geometry, and a free-form
/// mask. EditA's counterfeit is a color-graded re-render; EditB's is a
/// smoothed, posterized completion-style render.
pub fn gen_edited_parts(seed: u64, family: SourceClass, base: SourceClass, strength: f64) -> EditedParts {
    assert!(
        matches!(family, SourceClass::EditA | SourceClass::EditB),
        "gen_edited_parts: {family} is not an edited family"
    );
    let mut rng = chacha(seed);
    let (w, h) = base.image_size();
    let u = w.min(h) as f64;
    let geometry = FaceGeometry::sample(&mut rng, w, h);
    let real_spec = FaceSpec {
        geometry: geometry.clone(),
        style: real_style_for(&mut rng, base),
        offsets: FeatureOffsets::zero(),
    };
    let landmarks = real_spec.landmarks();
    let real = real_spec.render(&mut rng).quantize();

    // counterfeit re-render: new palette, offset features
    let fake_style = FaceStyle::sample(
        &mut rng,
        match family {
            SourceClass::EditA => BackgroundKind::HorizontalGradient,
            _ => BackgroundKind::Radial,
        },
        0.0,
    );
    let offsets = FeatureOffsets::sample(&mut rng, GEOMETRY_JITTER_PX * strength * u / 128.0);
    let fake_spec = FaceSpec {
        geometry,
        style: fake_style,
        offsets,
    };
    let mut fake_canvas = fake_spec.render(&mut rng);
    match family {
        SourceClass::EditA => {
            // attribute re-render look: shifted hue, slight smoothing
            super::artifact::hue_shift_for_edit(&mut fake_canvas, (0.22 * strength).min(1.0));
            box_blur(&mut fake_canvas, 1, (0.5 * strength).min(1.0));
        }
        _ => {
            // completion look: heavy smoothing plus posterization
            box_blur(&mut fake_canvas, 2, (0.85 * strength).min(1.0));
            posterize(&mut fake_canvas, 12.0);
        }
    }
    let fake = fake_canvas.quantize();

    // free-form mask, guaranteed to keep both values present
    let params = FreeFormMaskParams::default().scaled(u / 128.0);
    let mask = loop {
        let m = gen_freeform_mask_grid(&params, (h, w), &mut rng);
        let zeros = m.data.iter().filter(|&&v| v == 0).count();
        if zeros > 0 && zeros < m.data.len() {
            break m;
        }
    };
    EditedParts {
        real,
        fake,
        mask,
        landmarks,
    }
}

/// Byte-level compositing: pristine pixels from `real`, edited pixels
/// from `fake`.
pub fn composite_u8(real: &RgbImage, fake: &RgbImage, mask: &MaskGrid) -> RgbImage {
    assert_eq!((real.w, real.h), (fake.w, fake.h), "composite_u8: size mismatch");
    assert_eq!((real.w, real.h), (mask.w, mask.h), "composite_u8: mask size mismatch");
    let mut out = RgbImage::new(real.w, real.h);
    for (i, &m) in mask.data.iter().enumerate() {
        let src = if m != 0 { &real.data } else { &fake.data };
        out.data[i * 3..i * 3 + 3].copy_from_slice(&src[i * 3..i * 3 + 3]);
    }
    out
}

/// Tensor compositing: `real * mask + fake * (1 - mask)` per pixel and
/// channel; the ground-truth mask of the result is exactly `mask`.
pub fn composite_edited<T: Scalar>(
    real: &Tensor<T>,
    fake: &Tensor<T>,
    mask: &Tensor<T>,
) -> crate::tensor::Result<Tensor<T>> {
    use crate::tensor::TensorError;
    if real.shape() != fake.shape() {
        return Err(TensorError::shape(
            "composite_edited",
            format!("real {:?} vs fake {:?}", real.shape(), fake.shape()),
        ));
    }
    let (c, h, w) = match *real.shape() {
        [c, h, w] => (c, h, w),
        ref s => {
            return Err(TensorError::shape(
                "composite_edited",
                format!("expected [C,H,W], got {s:?}"),
            ))
        }
    };
    if mask.shape() != [1, h, w] {
        return Err(TensorError::shape(
            "composite_edited",
            format!("mask {:?} vs image {:?}", mask.shape(), real.shape()),
        ));
    }
    if mask.data().iter().any(|&v| v != T::zero() && v != T::one()) {
        return Err(TensorError::Invalid(
            "composite_edited: mask must be binary".to_string(),
        ));
    }
    let mut data = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for i in 0..h * w {
            let m = mask.data()[i];
            data[ch * h * w + i] =
                real.data()[ch * h * w + i] * m + fake.data()[ch * h * w + i] * (T::one() - m);
        }
    }
    Tensor::new(&[c, h, w], data)
}

/// Edited-record base family: EditA composites over CelebA-like bases;
/// EditB covers both corpora, CelebA-like first.
pub fn edited_base_for(family: SourceClass, idx: usize, counts: &[usize; 10]) -> SourceClass {
    match family {
        SourceClass::EditA => SourceClass::RealA,
        SourceClass::EditB => {
            // proportional split mirroring the two pristine corpora
            let total = counts[SourceClass::EditB.index()];
            let celeba_like = (total as f64 * 202_599.0 / 272_599.0).round() as usize;
            if idx < celeba_like {
                SourceClass::RealA
            } else {
                SourceClass::RealB
            }
        }
        _ => panic!("edited_base_for: {family} is not an edited family"),
    }
}

/// Seed for one record's generation stream.
pub fn record_seed(root_seed: u64, class: SourceClass, idx: usize) -> u64 {
    seed::derive(root_seed, TAG_RECORD, class.index() as u64, idx as u64)
}

/// Generate one record's image, mask and landmarks in memory.
pub fn generate_record(
    cfg: &SynthConfig,
    class: SourceClass,
    idx: usize,
) -> (RgbImage, MaskGrid, LandmarkSet) {
    let seed = record_seed(cfg.root_seed, class, idx);
    match class.forensic_type() {
        super::ForensicType::Real => {
            let (img, lm) = gen_real_face(seed, class);
            let mask = MaskGrid::ones(img.w, img.h);
            (img, mask, lm)
        }
        super::ForensicType::Generated => {
            let (img, lm) = gen_fake_face(seed, class, cfg.artifact_strength);
            let mask = MaskGrid::zeros(img.w, img.h);
            (img, mask, lm)
        }
        super::ForensicType::Edited => {
            let base = edited_base_for(class, idx, &cfg.counts());
            let parts = gen_edited_parts(seed, class, base, cfg.artifact_strength);
            let img = composite_u8(&parts.real, &parts.fake, &parts.mask);
            (img, parts.mask, parts.landmarks)
        }
    }
}

/// The dataset index: records plus the directory they live in.
#[derive(Debug, Clone)]
pub struct Manifest {
    base_dir: PathBuf,
    records: Vec<SampleRecord>,
}

impl Manifest {
    pub const FILE_NAME: &'static str = "manifest.tsv";

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Classes with at least one record, in canonical order. Class labels
    /// for training are positions in this list.
    pub fn classes_present(&self) -> Vec<SourceClass> {
        SourceClass::ALL
            .iter()
            .copied()
            .filter(|c| self.records.iter().any(|r| r.source == *c))
            .collect()
    }

    /// Record indices of one class restricted to a split.
    pub fn indices(&self, class: SourceClass, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.source == class && r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn image_path(&self, r: &SampleRecord) -> PathBuf {
        self.base_dir.join(&r.image_path)
    }

    pub fn mask_path(&self, r: &SampleRecord) -> PathBuf {
        self.base_dir.join(&r.mask_path)
    }

    pub fn load_image<T: Scalar>(&self, r: &SampleRecord) -> Result<Tensor<T>> {
        Ok(pnm::read_ppm(&self.image_path(r))?.to_tensor())
    }

    pub fn load_mask<T: Scalar>(&self, r: &SampleRecord) -> Result<Tensor<T>> {
        Ok(pnm::read_pgm(&self.mask_path(r))?.to_mask_tensor())
    }

    fn format_record(r: &SampleRecord) -> String {
        let mut line = format!(
            "{}\t{}\t{}\t{}",
            r.image_path,
            r.mask_path,
            r.source.name(),
            r.split.name()
        );
        for (x, y) in r.landmarks.iter() {
            line.push_str(&format!("\t{x:.4},{y:.4}"));
        }
        line.push('\n');
        line
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.records {
            out.write_all(Self::format_record(r).as_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let text = std::fs::read_to_string(path)?;
        let mut records = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 + LANDMARK_COUNT {
                return Err(SynthError::Invalid(format!(
                    "manifest line {}: expected {} fields, got {}",
                    ln + 1,
                    4 + LANDMARK_COUNT,
                    fields.len()
                )));
            }
            let source = SourceClass::parse(fields[2]).ok_or_else(|| {
                SynthError::Invalid(format!("manifest line {}: unknown class {}", ln + 1, fields[2]))
            })?;
            let split = Split::parse(fields[3]).ok_or_else(|| {
                SynthError::Invalid(format!("manifest line {}: unknown split {}", ln + 1, fields[3]))
            })?;
            let mut pts = Vec::with_capacity(LANDMARK_COUNT);
            for f in &fields[4..] {
                let (x, y) = f.split_once(',').ok_or_else(|| {
                    SynthError::Invalid(format!("manifest line {}: bad landmark {f}", ln + 1))
                })?;
                let parse = |v: &str| {
                    v.parse::<f64>().map_err(|_| {
                        SynthError::Invalid(format!("manifest line {}: bad number {v}", ln + 1))
                    })
                };
                pts.push((parse(x)?, parse(y)?));
            }
            records.push(SampleRecord {
                image_path: fields[0].to_string(),
                mask_path: fields[1].to_string(),
                landmarks: LandmarkSet::from_slice(&pts)?,
                source,
                split,
            });
        }
        Ok(Manifest { base_dir, records })
    }
}

/// Per-class train/test counts of a freshly built dataset.
#[derive(Debug, Clone, Default)]
pub struct BuildSummary {
    pub per_class: Vec<(SourceClass, usize, usize)>,
}

impl BuildSummary {
    pub fn total(&self) -> usize {
        self.per_class.iter().map(|(_, tr, te)| tr + te).sum()
    }
}

/// Generate the whole dataset under `out_dir` and write the manifest.
/// The split assigns the first 80% of each class (by record index) to
/// train and the rest to test.
pub fn build_manifest(cfg: &SynthConfig, out_dir: &Path) -> Result<(Manifest, BuildSummary)> {
    let counts = cfg.counts();
    std::fs::create_dir_all(out_dir)?;
    let mut records = Vec::new();
    let mut seen_paths = HashSet::new();
    let mut summary = BuildSummary::default();
    for class in SourceClass::ALL {
        let n = counts[class.index()];
        if n == 0 {
            continue;
        }
        std::fs::create_dir_all(out_dir.join("images").join(class.name()))?;
        std::fs::create_dir_all(out_dir.join("masks").join(class.name()))?;
        let train_n = (0.8 * n as f64).floor() as usize;
        for idx in 0..n {
            let (img, mask, landmarks) = generate_record(cfg, class, idx);
            let image_path = format!("images/{}/{idx:06}.ppm", class.name());
            let mask_path = format!("masks/{}/{idx:06}.pgm", class.name());
            for p in [&image_path, &mask_path] {
                if !seen_paths.insert(p.clone()) {
                    return Err(SynthError::Invalid(format!("duplicate path {p}")));
                }
            }
            pnm::write_ppm(&out_dir.join(&image_path), &img)?;
            pnm::write_pgm(
                &out_dir.join(&mask_path),
                &GrayImage {
                    w: mask.w,
                    h: mask.h,
                    data: mask.data.iter().map(|&v| if v == 0 { 0 } else { 255 }).collect(),
                },
            )?;
            records.push(SampleRecord {
                image_path,
                mask_path,
                landmarks,
                source: class,
                split: if idx < train_n { Split::Train } else { Split::Test },
            });
        }
        summary.per_class.push((class, train_n, n - train_n));
    }
    let manifest = Manifest {
        base_dir: out_dir.to_path_buf(),
        records,
    };
    manifest.save(&out_dir.join(Manifest::FILE_NAME))?;
    crate::geometry::CanonicalTemplate::bundled()
        .save(&out_dir.join("template.txt"))
        .map_err(SynthError::Geometry)?;
    Ok((manifest, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_face_sizes_match_their_corpora() {
        let (a, _) = gen_real_face(1, SourceClass::RealA);
        assert_eq!((a.w, a.h), (178, 218));
        let (b, _) = gen_real_face(1, SourceClass::RealB);
        assert_eq!((b.w, b.h), (256, 256));
    }

    #[test]
    fn same_seed_reproduces_bits() {
        let (i1, l1) = gen_real_face(99, SourceClass::RealA);
        let (i2, l2) = gen_real_face(99, SourceClass::RealA);
        assert_eq!(i1, i2);
        assert_eq!(l1, l2);
        let (f1, _) = gen_fake_face(7, SourceClass::GenE, 1.0);
        let (f2, _) = gen_fake_face(7, SourceClass::GenE, 1.0);
        assert_eq!(f1, f2);
    }

    #[test]
    fn zero_strength_fake_equals_base_face() {
        for fam in [SourceClass::GenA, SourceClass::GenE] {
            let (fake, flm) = gen_fake_face(13, fam, 0.0);
            let (base, blm) = gen_base_face(13, fam, 0.0);
            assert_eq!(fake, base);
            assert_eq!(flm, blm);
        }
    }

    #[test]
    fn composite_tensor_selection_semantics() {
        let real = Tensor::<f32>::from_fn(&[3, 4, 4], |i| i as f32 / 48.0);
        let fake = Tensor::<f32>::from_fn(&[3, 4, 4], |i| 1.0 - i as f32 / 48.0);
        let ones = Tensor::<f32>::filled(&[1, 4, 4], 1.0);
        let zeros = Tensor::<f32>::zeros(&[1, 4, 4]);
        assert_eq!(composite_edited(&real, &fake, &ones).unwrap(), real);
        assert_eq!(composite_edited(&real, &fake, &zeros).unwrap(), fake);

        let mask = Tensor::<f32>::from_fn(&[1, 4, 4], |i| (i % 3 == 0) as u8 as f32);
        let out = composite_edited(&real, &fake, &mask).unwrap();
        for c in 0..3 {
            for i in 0..16 {
                let want = if mask.data()[i] == 1.0 {
                    real.data()[c * 16 + i]
                } else {
                    fake.data()[c * 16 + i]
                };
                assert_eq!(out.data()[c * 16 + i], want);
            }
        }
    }

    #[test]
    fn composite_rejects_mismatched_shapes() {
        let real = Tensor::<f32>::zeros(&[3, 4, 4]);
        let fake = Tensor::<f32>::zeros(&[3, 4, 5]);
        let mask = Tensor::<f32>::zeros(&[1, 4, 4]);
        let err = composite_edited(&real, &fake, &mask).unwrap_err().to_string();
        assert!(err.contains("[3, 4, 4]") && err.contains("[3, 4, 5]"));
        let bad_mask = Tensor::<f32>::filled(&[1, 4, 4], 0.5);
        let real2 = Tensor::<f32>::zeros(&[3, 4, 4]);
        assert!(composite_edited(&real2, &real2.clone(), &bad_mask).is_err());
    }

    #[test]
    fn edited_record_recomposites_byte_exactly() {
        let cfg = SynthConfig::default();
        let counts = cfg.counts();
        for idx in [0usize, 5] {
            let seed = record_seed(cfg.root_seed, SourceClass::EditB, idx);
            let base = edited_base_for(SourceClass::EditB, idx, &counts);
            let parts = gen_edited_parts(seed, SourceClass::EditB, base, cfg.artifact_strength);
            let (img, mask, _) = generate_record(&cfg, SourceClass::EditB, idx);
            assert_eq!(composite_u8(&parts.real, &parts.fake, &parts.mask), img);
            assert_eq!(parts.mask, mask);
        }
    }

    #[test]
    fn default_counts_match_scaled_reference() {
        let counts = SynthConfig::default().counts();
        assert_eq!(counts, [2026, 700, 1000, 1000, 1000, 1000, 1000, 1000, 2026, 2726]);
        assert_eq!(counts.iter().sum::<usize>(), 13_478);
    }

    #[test]
    fn tiny_dataset_roundtrips_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            counts_override: Some([3, 2, 2, 0, 0, 0, 0, 0, 2, 3]),
            ..Default::default()
        };
        let (manifest, summary) = build_manifest(&cfg, dir.path()).unwrap();
        assert_eq!(manifest.len(), 12);
        assert_eq!(summary.total(), 12);
        // first 80% per class: floor(0.8 * 3) = 2 train, 1 test
        assert_eq!(manifest.indices(SourceClass::RealA, Split::Train).len(), 2);
        assert_eq!(manifest.indices(SourceClass::RealA, Split::Test).len(), 1);

        let loaded = Manifest::load(&dir.path().join(Manifest::FILE_NAME)).unwrap();
        assert_eq!(loaded.len(), manifest.len());
        for (a, b) in manifest.records().iter().zip(loaded.records()) {
            assert_eq!(a.image_path, b.image_path);
            assert_eq!(a.source, b.source);
            assert_eq!(a.split, b.split);
            assert!(a.landmarks.rms_distance(&b.landmarks) < 1e-3);
        }
        // class <-> mask consistency
        for r in loaded.records() {
            let mask = loaded.load_mask::<f32>(r).unwrap();
            let zeros = mask.data().iter().filter(|&&v| v == 0.0).count();
            match r.source.forensic_type() {
                super::super::ForensicType::Real => assert_eq!(zeros, 0),
                super::super::ForensicType::Generated => assert_eq!(zeros, mask.len()),
                super::super::ForensicType::Edited => {
                    assert!(zeros > 0 && zeros < mask.len())
                }
            }
        }
        let img = loaded.load_image::<f32>(&loaded.records()[0]).unwrap();
        assert_eq!(img.shape(), &[3, 218, 178]);
    }
}
