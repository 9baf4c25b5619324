//! Image warping, the rescale/align/crop pipeline and landmark maps.
//!
//! Images are `[C,H,W]` tensors. Warps are inverse-mapped: each output
//! pixel samples the source at the back-projected position, bilinearly
//! for images and nearest-neighbor for binary masks. Out-of-source
//! samples reflect at the borders ("mirror" fill), so the output range
//! never leaves the input range.

use super::{
    estimate_similarity, GeometryError, LandmarkSet, Result, SimilarityTransform,
};
use crate::num::Scalar;
use crate::tensor::Tensor;
use crate::LANDMARK_COUNT;
use rand::Rng;

/// Reflect an index into `[0, n)` without repeating the border sample.
fn mirror(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i % period;
    if m < 0 {
        m += period;
    }
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

fn bilinear<T: Scalar>(plane: &[T], h: usize, w: usize, x: f64, y: f64) -> T {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let x0i = x0 as isize;
    let y0i = y0 as isize;
    let (v00, v01, v10, v11) = if x0i >= 0 && y0i >= 0 && x0i + 1 < w as isize && y0i + 1 < h as isize {
        let base = y0i as usize * w + x0i as usize;
        (
            plane[base].as_f64(),
            plane[base + 1].as_f64(),
            plane[base + w].as_f64(),
            plane[base + w + 1].as_f64(),
        )
    } else {
        let (xa, xb) = (mirror(x0i, w), mirror(x0i + 1, w));
        let (ya, yb) = (mirror(y0i, h), mirror(y0i + 1, h));
        (
            plane[ya * w + xa].as_f64(),
            plane[ya * w + xb].as_f64(),
            plane[yb * w + xa].as_f64(),
            plane[yb * w + xb].as_f64(),
        )
    };
    let top = v00 * (1.0 - fx) + v01 * fx;
    let bot = v10 * (1.0 - fx) + v11 * fx;
    T::of_f64(top * (1.0 - fy) + bot * fy)
}

/// Bilinear sample of one channel of an interleaved 8-bit image, with
/// mirror fill; values map onto the k/255 grid.
fn bilinear_u8(data: &[u8], channels: usize, c: usize, h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let x0i = x0 as isize;
    let y0i = y0 as isize;
    let at = |yy: usize, xx: usize| data[(yy * w + xx) * channels + c] as f64 / 255.0;
    let (v00, v01, v10, v11) = if x0i >= 0 && y0i >= 0 && x0i + 1 < w as isize && y0i + 1 < h as isize {
        let (xu, yu) = (x0i as usize, y0i as usize);
        (at(yu, xu), at(yu, xu + 1), at(yu + 1, xu), at(yu + 1, xu + 1))
    } else {
        let (xa, xb) = (mirror(x0i, w), mirror(x0i + 1, w));
        let (ya, yb) = (mirror(y0i, h), mirror(y0i + 1, h));
        (at(ya, xa), at(ya, xb), at(yb, xa), at(yb, xb))
    };
    let top = v00 * (1.0 - fx) + v01 * fx;
    let bot = v10 * (1.0 - fx) + v11 * fx;
    top * (1.0 - fy) + bot * fy
}

fn nearest<T: Scalar>(plane: &[T], h: usize, w: usize, x: f64, y: f64) -> T {
    let xi = mirror(x.round() as isize, w);
    let yi = mirror(y.round() as isize, h);
    plane[yi * w + xi]
}

fn check_chw<T: Scalar>(img: &Tensor<T>, op: &str) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(GeometryError::Invalid(format!(
            "{op}: expected [C,H,W] image, got {s:?}"
        ))),
    }
}

/// Warp an image so that source points map to `transform(point)` in the
/// output frame; bilinear sampling with mirror fill.
pub fn warp_image<T: Scalar>(
    image: &Tensor<T>,
    transform: &SimilarityTransform,
    out_size: (usize, usize),
) -> Result<Tensor<T>> {
    let (c, h, w) = check_chw(image, "warp_image")?;
    let (oh, ow) = out_size;
    if oh == 0 || ow == 0 {
        return Err(GeometryError::Invalid(format!(
            "warp_image: non-positive output size {out_size:?}"
        )));
    }
    let inv = transform.inverse();
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let (sx, sy) = inv.apply((ox as f64, oy as f64));
                dst[oy * ow + ox] = bilinear(plane, h, w, sx, sy);
            }
        }
    }
    Ok(Tensor::new(&[c, oh, ow], out).expect("warp output"))
}

/// Same geometry as [`warp_image`] but nearest-neighbor, keeping binary
/// masks binary.
pub fn warp_mask_nearest<T: Scalar>(
    mask: &Tensor<T>,
    transform: &SimilarityTransform,
    out_size: (usize, usize),
) -> Result<Tensor<T>> {
    let (c, h, w) = check_chw(mask, "warp_mask_nearest")?;
    let (oh, ow) = out_size;
    if oh == 0 || ow == 0 {
        return Err(GeometryError::Invalid(format!(
            "warp_mask_nearest: non-positive output size {out_size:?}"
        )));
    }
    let inv = transform.inverse();
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        let plane = &mask.data()[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let (sx, sy) = inv.apply((ox as f64, oy as f64));
                dst[oy * ow + ox] = nearest(plane, h, w, sx, sy);
            }
        }
    }
    Ok(Tensor::new(&[c, oh, ow], out).expect("warp output"))
}

/// Bilinear resize by scale factor `s` (output pixel x samples `x / s`).
pub fn resize_bilinear<T: Scalar>(image: &Tensor<T>, s: f64) -> Result<Tensor<T>> {
    let (c, h, w) = check_chw(image, "resize_bilinear")?;
    let (oh, ow) = scaled_size(h, w, s);
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                dst[oy * ow + ox] = bilinear(plane, h, w, ox as f64 / s, oy as f64 / s);
            }
        }
    }
    Ok(Tensor::new(&[c, oh, ow], out).expect("resize output"))
}

/// Nearest-neighbor resize by scale factor `s`.
pub fn resize_nearest<T: Scalar>(image: &Tensor<T>, s: f64) -> Result<Tensor<T>> {
    let (c, h, w) = check_chw(image, "resize_nearest")?;
    let (oh, ow) = scaled_size(h, w, s);
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                dst[oy * ow + ox] = nearest(plane, h, w, ox as f64 / s, oy as f64 / s);
            }
        }
    }
    Ok(Tensor::new(&[c, oh, ow], out).expect("resize output"))
}

fn scaled_size(h: usize, w: usize, s: f64) -> (usize, usize) {
    (
        ((h as f64 * s).round() as usize).max(1),
        ((w as f64 * s).round() as usize).max(1),
    )
}

/// Deterministic core of the random-rescale augmentation: scale both the
/// image and the landmark coordinates by `s`.
pub fn rescale<T: Scalar>(
    image: &Tensor<T>,
    landmarks: &LandmarkSet,
    s: f64,
) -> Result<(Tensor<T>, LandmarkSet)> {
    if s == 1.0 {
        return Ok((image.clone(), landmarks.clone()));
    }
    Ok((resize_bilinear(image, s)?, landmarks.scaled(s)))
}

/// Scale range of the rescale augmentation.
pub const RESCALE_RANGE: (f64, f64) = (0.8, 1.2);

/// Draw the augmentation scale uniformly from [`RESCALE_RANGE`].
pub fn draw_rescale<R: Rng>(rng: &mut R) -> f64 {
    let (lo, hi) = RESCALE_RANGE;
    lo + rng.gen::<f64>() * (hi - lo)
}

/// Uniformly rescale image and landmarks with `s ~ U[0.8, 1.2]`.
pub fn random_rescale<T: Scalar, R: Rng>(
    image: &Tensor<T>,
    landmarks: &LandmarkSet,
    rng: &mut R,
) -> Result<(Tensor<T>, LandmarkSet, f64)> {
    let s = draw_rescale(rng);
    let (img, lm) = rescale(image, landmarks, s)?;
    Ok((img, lm, s))
}

/// Geometry of one preprocessing pass: the augmentation scale and the
/// similarity mapping the rescaled frame onto the canonical frame.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub scale: f64,
    pub transform: SimilarityTransform,
    pub out_size: (usize, usize),
}

impl Alignment {
    /// Landmarks in the output (aligned) frame.
    pub fn apply_landmarks(&self, landmarks: &LandmarkSet) -> LandmarkSet {
        landmarks.scaled(self.scale).transformed(&self.transform)
    }

    /// Single similarity from the original frame to the output frame:
    /// the rescale and the alignment fit composed, so pixels resample
    /// exactly once.
    pub fn full_transform(&self) -> SimilarityTransform {
        self.transform.compose(&SimilarityTransform {
            scale: self.scale,
            rotation: 0.0,
            translation: (0.0, 0.0),
        })
    }
}

/// Fit the alignment for an image whose landmarks are `landmarks`: first
/// rescale by `scale`, then map least-squares onto `template` (already
/// expressed in the `out_size` frame).
pub fn plan_alignment(
    landmarks: &LandmarkSet,
    template: &LandmarkSet,
    scale: f64,
    out_size: (usize, usize),
) -> Result<Alignment> {
    let transform = estimate_similarity(&landmarks.scaled(scale), template)?;
    Ok(Alignment {
        scale,
        transform,
        out_size,
    })
}

/// Apply a planned alignment to the image (one bilinear resampling of
/// the composed rescale-plus-fit map).
pub fn apply_alignment_image<T: Scalar>(image: &Tensor<T>, plan: &Alignment) -> Result<Tensor<T>> {
    warp_image(image, &plan.full_transform(), plan.out_size)
}

/// Apply a planned alignment to a binary mask (nearest everywhere).
pub fn apply_alignment_mask<T: Scalar>(mask: &Tensor<T>, plan: &Alignment) -> Result<Tensor<T>> {
    warp_mask_nearest(mask, &plan.full_transform(), plan.out_size)
}

/// Warp an interleaved 8-bit RGB image straight into planar `[3,H,W]`
/// output slices, skipping the intermediate float image.
pub fn warp_rgb8_into<T: Scalar>(
    data: &[u8],
    (h, w): (usize, usize),
    transform: &SimilarityTransform,
    (oh, ow): (usize, usize),
    out: &mut [T],
) {
    assert_eq!(data.len(), 3 * h * w, "warp_rgb8_into: bad input length");
    assert_eq!(out.len(), 3 * oh * ow, "warp_rgb8_into: bad output length");
    let inv = transform.inverse();
    for oy in 0..oh {
        for ox in 0..ow {
            let (sx, sy) = inv.apply((ox as f64, oy as f64));
            for c in 0..3 {
                out[c * oh * ow + oy * ow + ox] = T::of_f64(bilinear_u8(data, 3, c, h, w, sx, sy));
            }
        }
    }
}

/// Warp an 8-bit mask (>=128 pristine) straight into a `[H,W]` slice of
/// exact zeros and ones, nearest-neighbor.
pub fn warp_mask8_into<T: Scalar>(
    data: &[u8],
    (h, w): (usize, usize),
    transform: &SimilarityTransform,
    (oh, ow): (usize, usize),
    out: &mut [T],
) {
    assert_eq!(data.len(), h * w, "warp_mask8_into: bad input length");
    assert_eq!(out.len(), oh * ow, "warp_mask8_into: bad output length");
    let inv = transform.inverse();
    for oy in 0..oh {
        for ox in 0..ow {
            let (sx, sy) = inv.apply((ox as f64, oy as f64));
            let xi = mirror(sx.round() as isize, w);
            let yi = mirror(sy.round() as isize, h);
            out[oy * ow + ox] = if data[yi * w + xi] >= 128 {
                T::one()
            } else {
                T::zero()
            };
        }
    }
}

/// Full pipeline: rescale by `scale`, similarity-align the landmarks onto
/// the template, warp to `(w, h)` with mirror fill. Returns the aligned
/// image and the post-alignment landmarks.
pub fn preprocess<T: Scalar>(
    image: &Tensor<T>,
    landmarks: &LandmarkSet,
    template: &LandmarkSet,
    out_wh: (usize, usize),
    scale: f64,
) -> Result<(Tensor<T>, LandmarkSet)> {
    let (w, h) = out_wh;
    let plan = plan_alignment(landmarks, template, scale, (h, w))?;
    let warped = apply_alignment_image(image, &plan)?;
    Ok((warped, plan.apply_landmarks(landmarks)))
}

/// 68-channel binary maps: channel `k` carries a single 1 at the rounded
/// position of landmark `k`, clamped to the image border.
pub fn encode_landmark_maps<T: Scalar>(landmarks: &LandmarkSet, (h, w): (usize, usize)) -> Tensor<T> {
    assert!(h > 0 && w > 0, "encode_landmark_maps: empty size");
    let mut data = vec![T::zero(); LANDMARK_COUNT * h * w];
    encode_landmark_maps_into(landmarks, (h, w), &mut data);
    Tensor::new(&[LANDMARK_COUNT, h, w], data).expect("landmark map")
}

/// Write the 68 ones of the landmark maps into an already-zeroed slice.
pub fn encode_landmark_maps_into<T: Scalar>(
    landmarks: &LandmarkSet,
    (h, w): (usize, usize),
    out: &mut [T],
) {
    assert_eq!(out.len(), LANDMARK_COUNT * h * w, "encode_landmark_maps_into: bad length");
    for (k, (x, y)) in landmarks.iter().enumerate() {
        let xi = (x.round() as isize).clamp(0, w as isize - 1) as usize;
        let yi = (y.round() as isize).clamp(0, h as isize - 1) as usize;
        out[k * h * w + yi * w + xi] = T::one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_image(c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(&[c, h, w], |i| (i % 251) as f64 / 250.0)
    }

    fn face_like_landmarks() -> LandmarkSet {
        let mut pts = [(0.0, 0.0); LANDMARK_COUNT];
        for (i, p) in pts.iter_mut().enumerate() {
            let a = i as f64 / LANDMARK_COUNT as f64 * std::f64::consts::TAU;
            *p = (32.0 + 20.0 * a.cos(), 30.0 + 24.0 * a.sin());
        }
        LandmarkSet::new(pts).unwrap()
    }

    #[test]
    fn mirror_reflects_without_edge_repeat() {
        assert_eq!(mirror(-1, 5), 1);
        assert_eq!(mirror(-2, 5), 2);
        assert_eq!(mirror(5, 5), 3);
        assert_eq!(mirror(4, 5), 4);
        assert_eq!(mirror(0, 1), 0);
        assert_eq!(mirror(-7, 1), 0);
    }

    #[test]
    fn identity_warp_reproduces_input() {
        let img = ramp_image(3, 10, 12);
        let out = warp_image(&img, &SimilarityTransform::identity(), (10, 12)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn integer_translation_is_exact() {
        let img = ramp_image(1, 8, 9);
        let t = SimilarityTransform {
            scale: 1.0,
            rotation: 0.0,
            translation: (3.0, -2.0),
        };
        let out = warp_image(&img, &t, (8, 9)).unwrap();
        // output pixel (x, y) = source pixel (x - 3, y + 2), mirrored at borders
        for oy in 0..8usize {
            for ox in 0..9usize {
                let sx = mirror(ox as isize - 3, 9);
                let sy = mirror(oy as isize + 2, 8);
                assert_eq!(out.at(&[0, oy, ox]), img.at(&[0, sy, sx]));
            }
        }
    }

    #[test]
    fn warp_output_stays_within_input_range() {
        let img = ramp_image(1, 6, 6);
        let t = SimilarityTransform {
            scale: 0.31,
            rotation: 1.2,
            translation: (-40.0, 25.0),
        };
        let out = warp_image(&img, &t, (30, 30)).unwrap();
        let lo = img.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = img.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for &v in out.data() {
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn non_positive_output_size_is_error() {
        let img = ramp_image(1, 4, 4);
        assert!(warp_image(&img, &SimilarityTransform::identity(), (0, 4)).is_err());
    }

    #[test]
    fn rescale_identity_and_forced_values() {
        let img = ramp_image(3, 100, 100);
        let lm = face_like_landmarks();
        let (i1, l1) = rescale(&img, &lm, 1.0).unwrap();
        assert_eq!(i1, img);
        assert_eq!(l1, lm);

        let (i2, l2) = rescale(&img, &lm, 1.2).unwrap();
        assert_eq!(i2.shape(), &[3, 120, 120]);
        let mid = lm.point(0);
        assert!((l2.point(0).0 - mid.0 * 1.2).abs() < 1e-12);
        // spec anchor: (50, 50) -> (60, 60)
        let probe = lm.map(|_| (50.0, 50.0));
        let (_, lp) = rescale(&img, &probe, 1.2).unwrap();
        assert_eq!(lp.point(10), (60.0, 60.0));
    }

    #[test]
    fn rescale_scale_distribution_is_uniform() {
        // KS test against U[0.8, 1.2]; critical value at alpha = 0.01 for
        // n = 10000 is 1.628 / sqrt(n) = 0.01628.
        let mut rng = crate::seed::stream(99, 7, 0, 0);
        let n = 10_000;
        let mut draws: Vec<f64> = (0..n).map(|_| draw_rescale(&mut rng)).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d: f64 = 0.0;
        for (i, &s) in draws.iter().enumerate() {
            let cdf = ((s - 0.8) / 0.4).clamp(0.0, 1.0);
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            d = d.max((cdf - lo).abs()).max((hi - cdf).abs());
        }
        assert!(d < 0.01628, "KS statistic {d}");
    }

    #[test]
    fn preprocess_identity_when_landmarks_equal_template() {
        let template = crate::geometry::CanonicalTemplate::bundled();
        let tlm = template.scaled_to((128, 128));
        let img = ramp_image(3, 128, 128);
        let (out, lm) = preprocess(&img, &tlm, &tlm, (128, 128), 1.0).unwrap();
        assert!(out.max_abs_diff(&img) < 1e-9);
        assert!(lm.rms_distance(&tlm) < 1e-9);
    }

    #[test]
    fn preprocess_output_shape_contract() {
        let template = crate::geometry::CanonicalTemplate::bundled();
        let tlm = template.scaled_to((64, 64));
        for (h, w) in [(50usize, 40usize), (218, 178), (300, 300)] {
            let img = ramp_image(3, h, w);
            let (out, _) = preprocess(&img, &face_like_landmarks(), &tlm, (64, 64), 1.1).unwrap();
            assert_eq!(out.shape(), &[3, 64, 64]);
        }
    }

    #[test]
    fn landmark_maps_one_hot_per_channel() {
        let lm = face_like_landmarks();
        let maps = encode_landmark_maps::<f32>(&lm, (128, 128));
        assert_eq!(maps.shape(), &[LANDMARK_COUNT, 128, 128]);
        let total: f32 = maps.data().iter().sum();
        assert_eq!(total, LANDMARK_COUNT as f32);
        for k in 0..LANDMARK_COUNT {
            let s: f32 = maps.data()[k * 128 * 128..(k + 1) * 128 * 128].iter().sum();
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn landmark_map_clamps_and_rounds() {
        let mut pts = [(64.0, 64.0); LANDMARK_COUNT];
        pts[0] = (-3.0, 5.0);
        pts[1] = (10.6, 20.2);
        pts[2] = (200.0, 127.9);
        let lm = LandmarkSet::new(pts).unwrap();
        let maps = encode_landmark_maps::<f32>(&lm, (128, 128));
        assert_eq!(maps.at(&[0, 5, 0]), 1.0);
        assert_eq!(maps.at(&[1, 20, 11]), 1.0);
        assert_eq!(maps.at(&[2, 127, 127]), 1.0);
    }
}
