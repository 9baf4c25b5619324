//! Procedural face painter with analytically known landmarks.
//!
//! A face is a parametric arrangement of ellipses and strokes: head,
//! brows, eyes, nose, mouth, optional hair rim, plus a background and
//! sensor noise. The 68 landmark positions are computed from the same
//! parameters that drive the painter, so ground truth is exact by
//! construction.
//!
//! `FeatureOffsets` shift where features are *drawn* without moving the
//! nominal landmarks. Real faces use zero offsets; generated and edited
//! fakes carry offsets, so their rendered geometry is inconsistent with
//! the landmark annotations — the kind of cue a landmark-aware detector
//! can exploit.

use crate::geometry::LandmarkSet;
use crate::tensor::Tensor;
use crate::LANDMARK_COUNT;
use rand::Rng;

/// 8-bit RGB image, interleaved rows (PPM pixel order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub w: usize,
    pub h: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(w: usize, h: usize) -> Self {
        RgbImage {
            w,
            h,
            data: vec![0; w * h * 3],
        }
    }

    /// Planar `[3,H,W]` tensor with values on the `k/255` grid.
    pub fn to_tensor<T: crate::num::Scalar>(&self) -> Tensor<T> {
        let (w, h) = (self.w, self.h);
        let mut data = vec![T::zero(); 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data[c * h * w + y * w + x] =
                        T::of_f64(self.data[(y * w + x) * 3 + c] as f64 / 255.0);
                }
            }
        }
        Tensor::new(&[3, h, w], data).expect("image tensor")
    }
}

/// Floating-point canvas used while painting; quantized once at the end.
pub struct Canvas {
    pub w: usize,
    pub h: usize,
    /// planar r, g, b
    pub data: Vec<f64>,
}

impl Canvas {
    pub fn new(w: usize, h: usize) -> Self {
        Canvas {
            w,
            h,
            data: vec![0.0; 3 * w * h],
        }
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let hw = self.w * self.h;
        let i = y * self.w + x;
        self.data[i] = rgb[0];
        self.data[i + hw] = rgb[1];
        self.data[i + 2 * hw] = rgb[2];
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let hw = self.w * self.h;
        let i = y * self.w + x;
        [self.data[i], self.data[i + hw], self.data[i + 2 * hw]]
    }

    pub fn fill_ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, rgb: [f64; 3]) {
        let x0 = ((cx - rx).floor().max(0.0)) as usize;
        let x1 = ((cx + rx).ceil().min(self.w as f64 - 1.0)) as usize;
        let y0 = ((cy - ry).floor().max(0.0)) as usize;
        let y1 = ((cy + ry).ceil().min(self.h as f64 - 1.0)) as usize;
        if rx <= 0.0 || ry <= 0.0 || x0 > x1 || y0 > y1 {
            return;
        }
        for y in y0..=y1 {
            let ny = (y as f64 - cy) / ry;
            for x in x0..=x1 {
                let nx = (x as f64 - cx) / rx;
                if nx * nx + ny * ny <= 1.0 {
                    self.put(x, y, rgb);
                }
            }
        }
    }

    /// Thick segment with round caps.
    pub fn fill_capsule(&mut self, a: (f64, f64), b: (f64, f64), radius: f64, rgb: [f64; 3]) {
        let x0 = ((a.0.min(b.0) - radius).floor().max(0.0)) as usize;
        let x1 = ((a.0.max(b.0) + radius).ceil().min(self.w as f64 - 1.0)) as usize;
        let y0 = ((a.1.min(b.1) - radius).floor().max(0.0)) as usize;
        let y1 = ((a.1.max(b.1) + radius).ceil().min(self.h as f64 - 1.0)) as usize;
        if x0 > x1 || y0 > y1 {
            return;
        }
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        let r2 = radius * radius;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (px, py) = (x as f64 - a.0, y as f64 - a.1);
                let t = if len2 > 0.0 {
                    ((px * dx + py * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (qx, qy) = (px - t * dx, py - t * dy);
                if qx * qx + qy * qy <= r2 {
                    self.put(x, y, rgb);
                }
            }
        }
    }

    pub fn stroke_polyline(&mut self, pts: &[(f64, f64)], radius: f64, rgb: [f64; 3]) {
        for seg in pts.windows(2) {
            self.fill_capsule(seg[0], seg[1], radius, rgb);
        }
    }

    pub fn quantize(&self) -> RgbImage {
        let mut img = RgbImage::new(self.w, self.h);
        let hw = self.w * self.h;
        for i in 0..hw {
            for c in 0..3 {
                let v = (self.data[i + c * hw].clamp(0.0, 1.0) * 255.0).round() as u8;
                img.data[i * 3 + c] = v;
            }
        }
        img
    }
}

/// Pixel-space parameters of one face.
#[derive(Debug, Clone)]
pub struct FaceGeometry {
    pub w: usize,
    pub h: usize,
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub eye_dx: f64,
    pub eye_y: f64,
    pub eye_rx: f64,
    pub eye_ry: f64,
    pub brow_y: f64,
    pub brow_half: f64,
    pub brow_lift: f64,
    pub nose_top_y: f64,
    pub nose_tip_y: f64,
    pub nostril_y: f64,
    pub nostril_half: f64,
    pub mouth_cy: f64,
    pub mouth_rx: f64,
    pub mouth_ry: f64,
}

fn jitter<R: Rng>(rng: &mut R, rel: f64) -> f64 {
    1.0 + rng.gen_range(-rel..=rel)
}

impl FaceGeometry {
    /// Nominal (jitter-free) geometry for a given image size.
    pub fn nominal(w: usize, h: usize) -> FaceGeometry {
        let u = w.min(h) as f64;
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let rx = 0.30 * u;
        let ry = 0.40 * u;
        FaceGeometry {
            w,
            h,
            cx,
            cy,
            rx,
            ry,
            eye_dx: 0.42 * rx,
            eye_y: cy - 0.18 * ry,
            eye_rx: 0.16 * rx,
            eye_ry: 0.10 * ry,
            brow_y: cy - 0.18 * ry - 0.16 * ry,
            brow_half: 0.20 * rx,
            brow_lift: 0.035 * ry,
            nose_top_y: cy - 0.14 * ry,
            nose_tip_y: cy + 0.10 * ry,
            nostril_y: cy + 0.155 * ry,
            nostril_half: 0.10 * rx,
            mouth_cy: cy + 0.42 * ry,
            mouth_rx: 0.26 * rx,
            mouth_ry: 0.085 * ry,
        }
    }

    /// Randomized geometry; jitters are kept small enough that similarity
    /// alignment lands every face close to the canonical shape.
    pub fn sample<R: Rng>(rng: &mut R, w: usize, h: usize) -> FaceGeometry {
        let u = w.min(h) as f64;
        let cx = w as f64 / 2.0 + u * rng.gen_range(-0.015..=0.015);
        let cy = h as f64 / 2.0 + u * rng.gen_range(-0.015..=0.015);
        let rx = 0.30 * u * jitter(rng, 0.03);
        let ry = 0.40 * u * jitter(rng, 0.03);
        let eye_y = cy - 0.18 * ry * jitter(rng, 0.04);
        FaceGeometry {
            w,
            h,
            cx,
            cy,
            rx,
            ry,
            eye_dx: 0.42 * rx * jitter(rng, 0.02),
            eye_y,
            eye_rx: 0.16 * rx * jitter(rng, 0.05),
            eye_ry: 0.10 * ry * jitter(rng, 0.05),
            brow_y: eye_y - 0.16 * ry * jitter(rng, 0.07),
            brow_half: 0.20 * rx * jitter(rng, 0.05),
            brow_lift: 0.035 * ry * jitter(rng, 0.10),
            nose_top_y: cy - 0.14 * ry * jitter(rng, 0.04),
            nose_tip_y: cy + 0.10 * ry * jitter(rng, 0.05),
            nostril_y: cy + 0.155 * ry * jitter(rng, 0.04),
            nostril_half: 0.10 * rx * jitter(rng, 0.05),
            mouth_cy: cy + 0.42 * ry * jitter(rng, 0.025),
            mouth_rx: 0.26 * rx * jitter(rng, 0.05),
            mouth_ry: 0.085 * ry * jitter(rng, 0.07),
        }
    }

    /// The 68 nominal landmark positions implied by this geometry.
    pub fn landmarks(&self) -> LandmarkSet {
        let mut pts = [(0.0f64, 0.0f64); LANDMARK_COUNT];
        // 0..17 jaw along the lower head ellipse, slightly inset
        for i in 0..17 {
            let theta = std::f64::consts::PI * (1.0 - i as f64 / 16.0);
            pts[i] = (
                self.cx + 0.98 * self.rx * theta.cos(),
                self.cy + 0.98 * self.ry * theta.sin(),
            );
        }
        // 17..22, 22..27 brows (subject right then left), parabolic arch
        for (base, ex) in [(17, self.cx - self.eye_dx), (22, self.cx + self.eye_dx)] {
            for j in 0..5 {
                let t = (j as f64 / 4.0 - 0.5) * 2.0;
                pts[base + j] = (
                    ex + t * self.brow_half,
                    self.brow_y - self.brow_lift * (1.0 - t * t),
                );
            }
        }
        // 27..31 nose bridge
        for j in 0..4 {
            let f = j as f64 / 3.0;
            pts[27 + j] = (
                self.cx,
                self.nose_top_y + f * (self.nose_tip_y - self.nose_top_y),
            );
        }
        // 31..36 nostril row with a mild arc
        for j in 0..5 {
            let t = (j as f64 / 4.0 - 0.5) * 2.0;
            pts[31 + j] = (
                self.cx + t * self.nostril_half,
                self.nostril_y + 0.15 * self.nostril_half * (1.0 - t * t),
            );
        }
        // 36..42, 42..48 eyes: corner, two upper, corner, two lower
        let eye_offsets = [
            (-1.0, 0.0),
            (-0.45, -0.9),
            (0.45, -0.9),
            (1.0, 0.0),
            (0.45, 0.9),
            (-0.45, 0.9),
        ];
        for (base, ex) in [(36, self.cx - self.eye_dx), (42, self.cx + self.eye_dx)] {
            for (j, (ox, oy)) in eye_offsets.iter().enumerate() {
                pts[base + j] = (ex + ox * self.eye_rx, self.eye_y + oy * self.eye_ry);
            }
        }
        // 48..60 outer lips
        pts[48] = (self.cx - self.mouth_rx, self.mouth_cy);
        for (j, deg) in [150.0, 120.0, 90.0, 60.0, 30.0].iter().enumerate() {
            let t = deg * std::f64::consts::PI / 180.0;
            pts[49 + j] = (
                self.cx + self.mouth_rx * t.cos(),
                self.mouth_cy - self.mouth_ry * t.sin(),
            );
        }
        pts[54] = (self.cx + self.mouth_rx, self.mouth_cy);
        for (j, deg) in [30.0, 60.0, 90.0, 120.0, 150.0].iter().enumerate() {
            let t = deg * std::f64::consts::PI / 180.0;
            pts[55 + j] = (
                self.cx + self.mouth_rx * t.cos(),
                self.mouth_cy + self.mouth_ry * t.sin(),
            );
        }
        // 60..68 inner lips
        let (irx, iry) = (0.6 * self.mouth_rx, 0.45 * self.mouth_ry);
        pts[60] = (self.cx - irx, self.mouth_cy);
        for (j, deg) in [135.0, 90.0, 45.0].iter().enumerate() {
            let t = deg * std::f64::consts::PI / 180.0;
            pts[61 + j] = (self.cx + irx * t.cos(), self.mouth_cy - iry * t.sin());
        }
        pts[64] = (self.cx + irx, self.mouth_cy);
        for (j, deg) in [45.0, 90.0, 135.0].iter().enumerate() {
            let t = deg * std::f64::consts::PI / 180.0;
            pts[65 + j] = (self.cx + irx * t.cos(), self.mouth_cy + iry * t.sin());
        }
        LandmarkSet::new(pts).expect("face landmarks")
    }

    /// Whether a point lies inside the head ellipse (inclusive).
    pub fn contains(&self, (x, y): (f64, f64)) -> bool {
        let nx = (x - self.cx) / self.rx;
        let ny = (y - self.cy) / self.ry;
        nx * nx + ny * ny <= 1.0 + 1e-9
    }
}

/// Background styles, one flavor per source family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundKind {
    HorizontalGradient,
    VerticalGradient,
    Radial,
}

/// Colors and texture of one face.
#[derive(Debug, Clone)]
pub struct FaceStyle {
    pub skin: [f64; 3],
    pub sclera: [f64; 3],
    pub iris: [f64; 3],
    pub lips: [f64; 3],
    pub brow: [f64; 3],
    pub hair: Option<[f64; 3]>,
    pub bg_a: [f64; 3],
    pub bg_b: [f64; 3],
    pub bg_kind: BackgroundKind,
    pub noise_sigma: f64,
}

impl FaceStyle {
    pub fn sample<R: Rng>(rng: &mut R, bg_kind: BackgroundKind, noise_sigma: f64) -> FaceStyle {
        let r = rng.gen_range(0.72..=0.92);
        let g = r - rng.gen_range(0.10..=0.20);
        let b = g - rng.gen_range(0.08..=0.16);
        let skin = [r, g, b];
        let iris_palette = [
            [0.35, 0.22, 0.10],
            [0.24, 0.40, 0.58],
            [0.25, 0.45, 0.30],
            [0.20, 0.16, 0.12],
        ];
        let mut iris = iris_palette[rng.gen_range(0..iris_palette.len())];
        for c in &mut iris {
            *c = (*c * jitter(rng, 0.15)).clamp(0.0, 1.0);
        }
        let sv = rng.gen_range(0.90..=0.98);
        let hair = if rng.gen::<f64>() < 0.8 {
            let hv = rng.gen_range(0.04..=0.35);
            Some([hv, hv * rng.gen_range(0.6..=0.9), hv * rng.gen_range(0.4..=0.7)])
        } else {
            None
        };
        let bg_a = [
            rng.gen_range(0.1..=0.9),
            rng.gen_range(0.1..=0.9),
            rng.gen_range(0.1..=0.9),
        ];
        let bg_b = [
            rng.gen_range(0.1..=0.9),
            rng.gen_range(0.1..=0.9),
            rng.gen_range(0.1..=0.9),
        ];
        FaceStyle {
            skin,
            sclera: [sv, sv, sv],
            iris,
            lips: [(r * 0.85 + 0.15).min(1.0), g * 0.45, b * 0.45],
            brow: [0.15 * jitter(rng, 0.5), 0.10 * jitter(rng, 0.5), 0.08 * jitter(rng, 0.5)],
            hair,
            bg_a,
            bg_b,
            bg_kind,
            noise_sigma,
        }
    }
}

/// Where features are drawn relative to their nominal landmark geometry.
/// All-zero for pristine renders.
#[derive(Debug, Clone, Default)]
pub struct FeatureOffsets {
    pub left_eye: (f64, f64),
    pub right_eye: (f64, f64),
    pub brows: (f64, f64),
    pub nose: (f64, f64),
    pub mouth: (f64, f64),
}

impl FeatureOffsets {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Independent per-feature shifts, uniform in `[-mag, mag]` pixels.
    pub fn sample<R: Rng>(rng: &mut R, mag: f64) -> Self {
        let mut d = || (rng.gen_range(-mag..=mag), rng.gen_range(-mag..=mag));
        FeatureOffsets {
            left_eye: d(),
            right_eye: d(),
            brows: d(),
            nose: d(),
            mouth: d(),
        }
    }
}

/// Complete description of one renderable face.
#[derive(Debug, Clone)]
pub struct FaceSpec {
    pub geometry: FaceGeometry,
    pub style: FaceStyle,
    pub offsets: FeatureOffsets,
}

impl FaceSpec {
    pub fn landmarks(&self) -> LandmarkSet {
        self.geometry.landmarks()
    }

    /// Paint the face onto a fresh canvas. `noise_rng` drives the sensor
    /// noise layer and must be a dedicated stream for reproducibility.
    pub fn render<R: Rng>(&self, noise_rng: &mut R) -> Canvas {
        let g = &self.geometry;
        let s = &self.style;
        let off = &self.offsets;
        let mut c = Canvas::new(g.w, g.h);
        let u = g.w.min(g.h) as f64;

        // background
        for y in 0..g.h {
            for x in 0..g.w {
                let t = match s.bg_kind {
                    BackgroundKind::HorizontalGradient => x as f64 / (g.w - 1).max(1) as f64,
                    BackgroundKind::VerticalGradient => y as f64 / (g.h - 1).max(1) as f64,
                    BackgroundKind::Radial => {
                        let dx = (x as f64 - g.cx) / g.w as f64;
                        let dy = (y as f64 - g.cy) / g.h as f64;
                        (dx * dx + dy * dy).sqrt().min(1.0)
                    }
                };
                let rgb = [
                    s.bg_a[0] * (1.0 - t) + s.bg_b[0] * t,
                    s.bg_a[1] * (1.0 - t) + s.bg_b[1] * t,
                    s.bg_a[2] * (1.0 - t) + s.bg_b[2] * t,
                ];
                c.put(x, y, rgb);
            }
        }

        // head
        c.fill_ellipse(g.cx, g.cy, g.rx, g.ry, s.skin);

        // hair: rim and top of the head ellipse
        if let Some(hair) = s.hair {
            let y_line = g.cy - 0.50 * g.ry;
            let x0 = ((g.cx - g.rx).floor().max(0.0)) as usize;
            let x1 = ((g.cx + g.rx).ceil().min(g.w as f64 - 1.0)) as usize;
            let y0 = ((g.cy - g.ry).floor().max(0.0)) as usize;
            let y1 = ((g.cy + g.ry).ceil().min(g.h as f64 - 1.0)) as usize;
            for y in y0..=y1 {
                let ny = (y as f64 - g.cy) / g.ry;
                for x in x0..=x1 {
                    let nx = (x as f64 - g.cx) / g.rx;
                    let r2 = nx * nx + ny * ny;
                    if r2 <= 1.0 && ((y as f64) < y_line || r2 > 0.90) {
                        c.put(x, y, hair);
                    }
                }
            }
        }

        let lm = g.landmarks();

        // brows drawn through their landmark arcs
        let shift = |range: std::ops::Range<usize>, d: (f64, f64)| -> Vec<(f64, f64)> {
            range.map(|i| (lm.point(i).0 + d.0, lm.point(i).1 + d.1)).collect()
        };
        c.stroke_polyline(&shift(17..22, off.brows), 0.018 * u, s.brow);
        c.stroke_polyline(&shift(22..27, off.brows), 0.018 * u, s.brow);

        // eyes
        for (ex_sign, d) in [(-1.0, off.right_eye), (1.0, off.left_eye)] {
            let ex = g.cx + ex_sign * g.eye_dx + d.0;
            let ey = g.eye_y + d.1;
            c.fill_ellipse(ex, ey, g.eye_rx, g.eye_ry, s.sclera);
            let iris_r = 0.62 * g.eye_ry.min(g.eye_rx);
            c.fill_ellipse(ex, ey, iris_r, iris_r, s.iris);
            c.fill_ellipse(ex, ey, 0.45 * iris_r, 0.45 * iris_r, [0.02, 0.02, 0.02]);
        }

        // nose: bridge stroke and nostril arc
        let nose_shade = [s.skin[0] * 0.82, s.skin[1] * 0.82, s.skin[2] * 0.82];
        c.fill_capsule(
            (g.cx + off.nose.0, g.nose_top_y + off.nose.1),
            (g.cx + off.nose.0, g.nose_tip_y + off.nose.1),
            0.010 * u,
            nose_shade,
        );
        let nostrils = shift(31..36, off.nose);
        c.stroke_polyline(&nostrils, 0.008 * u, nose_shade);

        // mouth
        c.fill_ellipse(
            g.cx + off.mouth.0,
            g.mouth_cy + off.mouth.1,
            g.mouth_rx,
            g.mouth_ry,
            s.lips,
        );
        c.fill_capsule(
            (g.cx - g.mouth_rx + off.mouth.0, g.mouth_cy + off.mouth.1),
            (g.cx + g.mouth_rx + off.mouth.0, g.mouth_cy + off.mouth.1),
            0.006 * u,
            [s.lips[0] * 0.55, s.lips[1] * 0.55, s.lips[2] * 0.55],
        );

        // sensor noise
        if s.noise_sigma > 0.0 {
            let a = s.noise_sigma * 1.732; // uniform with matching std dev
            for v in &mut c.data {
                *v = (*v + noise_rng.gen_range(-a..=a)).clamp(0.0, 1.0);
            }
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn nominal_landmarks_inside_face_ellipse() {
        let g = FaceGeometry::nominal(128, 128);
        for p in g.landmarks().iter() {
            assert!(g.contains(p), "{p:?} outside the head ellipse");
        }
    }

    #[test]
    fn sampled_landmarks_inside_face_ellipse_10k() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10_000 {
            let g = FaceGeometry::sample(&mut rng, 178, 218);
            for p in g.landmarks().iter() {
                assert!(g.contains(p), "{p:?} outside the head ellipse");
            }
        }
    }

    #[test]
    fn render_is_deterministic() {
        let build = || {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
            let spec = FaceSpec {
                geometry: FaceGeometry::sample(&mut rng, 64, 64),
                style: FaceStyle::sample(&mut rng, BackgroundKind::Radial, 0.01),
                offsets: FeatureOffsets::zero(),
            };
            spec.render(&mut rng).quantize()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn landmark_shapes_stay_close_to_nominal_after_similarity_fit() {
        use crate::geometry::estimate_similarity;
        let nominal = FaceGeometry::nominal(128, 128).landmarks();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let lm = FaceGeometry::sample(&mut rng, 128, 128).landmarks();
            let t = estimate_similarity(&lm, &nominal).unwrap();
            let rms = lm.transformed(&t).rms_distance(&nominal);
            assert!(rms < 1.5, "rms {rms}");
        }
    }
}
