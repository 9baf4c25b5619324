//! Family-specific artifact signatures layered onto generated faces.
//!
//! Each generator family overlays one texture statistic onto the painted
//! canvas, strong enough that the six families separate in the power
//! spectrum but subtle enough to keep the face recognizable:
//!
//! - GenA: 2x2 checkerboard modulation (deconvolution-style)
//! - GenB: radial ring/halo pattern around the face center
//! - GenC: low-pass box blur
//! - GenD: hue rotation toward the next color channel
//! - GenE: blocky 8x8 grid noise
//! - GenF: high-frequency sinusoidal comb
//!
//! `strength = 0` leaves the canvas untouched.

use super::face::Canvas;
use super::SourceClass;
use rand::Rng;

/// Apply the family's signature in place. `rng` must be a dedicated
/// stream: only GenE consumes randomness.
pub fn apply_artifact<R: Rng>(
    canvas: &mut Canvas,
    family: SourceClass,
    strength: f64,
    rng: &mut R,
) {
    if strength == 0.0 {
        return;
    }
    match family {
        SourceClass::GenA => checkerboard(canvas, 0.035 * strength),
        SourceClass::GenB => rings(canvas, 0.030 * strength, 9.0),
        SourceClass::GenC => box_blur_mix(canvas, 2, (0.85 * strength).min(1.0)),
        SourceClass::GenD => hue_rotate(canvas, (0.28 * strength).min(1.0)),
        SourceClass::GenE => grid_noise(canvas, 8, 0.05 * strength, rng),
        SourceClass::GenF => comb(canvas, 0.025 * strength, 3.0),
        _ => panic!("apply_artifact: {family} is not a generator family"),
    }
}

/// Hue shift reused for the EditA counterfeit re-render.
pub fn hue_shift_for_edit(canvas: &mut Canvas, k: f64) {
    hue_rotate(canvas, k);
}

fn checkerboard(c: &mut Canvas, amp: f64) {
    let (w, h, hw) = (c.w, c.h, c.w * c.h);
    for y in 0..h {
        for x in 0..w {
            let s = if (x + y) % 2 == 0 { amp } else { -amp };
            for ch in 0..3 {
                let v = &mut c.data[ch * hw + y * w + x];
                *v = (*v + s).clamp(0.0, 1.0);
            }
        }
    }
}

fn rings(c: &mut Canvas, amp: f64, period: f64) {
    let (w, h, hw) = (c.w, c.h, c.w * c.h);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    for y in 0..h {
        for x in 0..w {
            let r = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            let s = amp * (std::f64::consts::TAU * r / period).sin();
            for ch in 0..3 {
                let v = &mut c.data[ch * hw + y * w + x];
                *v = (*v + s).clamp(0.0, 1.0);
            }
        }
    }
}

fn box_blur_mix(c: &mut Canvas, radius: usize, mix: f64) {
    let (w, h, hw) = (c.w, c.h, c.w * c.h);
    let mut blurred = vec![0.0f64; 3 * hw];
    for ch in 0..3 {
        let src = &c.data[ch * hw..(ch + 1) * hw];
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
    for (v, b) in c.data.iter_mut().zip(&blurred) {
        *v = *v * (1.0 - mix) + b * mix;
    }
}

fn hue_rotate(c: &mut Canvas, k: f64) {
    let hw = c.w * c.h;
    for i in 0..hw {
        let r = c.data[i];
        let g = c.data[i + hw];
        let b = c.data[i + 2 * hw];
        c.data[i] = (1.0 - k) * r + k * g;
        c.data[i + hw] = (1.0 - k) * g + k * b;
        c.data[i + 2 * hw] = (1.0 - k) * b + k * r;
    }
}

fn grid_noise<R: Rng>(c: &mut Canvas, block: usize, amp: f64, rng: &mut R) {
    let (w, h, hw) = (c.w, c.h, c.w * c.h);
    let bw = w.div_ceil(block);
    let bh = h.div_ceil(block);
    let offsets: Vec<f64> = (0..bw * bh * 3).map(|_| rng.gen_range(-amp..=amp)).collect();
    for y in 0..h {
        for x in 0..w {
            let bi = (y / block) * bw + x / block;
            for ch in 0..3 {
                let v = &mut c.data[ch * hw + y * w + x];
                *v = (*v + offsets[bi * 3 + ch]).clamp(0.0, 1.0);
            }
        }
    }
}

fn comb(c: &mut Canvas, amp: f64, period: f64) {
    let (w, h, hw) = (c.w, c.h, c.w * c.h);
    let f = std::f64::consts::TAU / period;
    for y in 0..h {
        let sy = (f * y as f64).sin();
        for x in 0..w {
            let s = amp * ((f * x as f64).sin() + sy);
            for ch in 0..3 {
                let v = &mut c.data[ch * hw + y * w + x];
                *v = (*v + s).clamp(0.0, 1.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::face::{BackgroundKind, FaceGeometry, FaceSpec, FaceStyle, FeatureOffsets};
    use rand_chacha::rand_core::SeedableRng;

    fn base_canvas(seed: u64) -> Canvas {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let spec = FaceSpec {
            geometry: FaceGeometry::sample(&mut rng, 64, 64),
            style: FaceStyle::sample(&mut rng, BackgroundKind::Radial, 0.0),
            offsets: FeatureOffsets::zero(),
        };
        spec.render(&mut rng)
    }

    #[test]
    fn zero_strength_is_identity() {
        let base = base_canvas(1).quantize();
        let mut canvas = base_canvas(1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        apply_artifact(&mut canvas, SourceClass::GenA, 0.0, &mut rng);
        assert_eq!(canvas.quantize(), base);
    }

    #[test]
    fn each_family_changes_the_image_differently() {
        let families = [
            SourceClass::GenA,
            SourceClass::GenB,
            SourceClass::GenC,
            SourceClass::GenD,
            SourceClass::GenE,
            SourceClass::GenF,
        ];
        let mut outputs = Vec::new();
        for f in families {
            let mut canvas = base_canvas(2);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
            apply_artifact(&mut canvas, f, 1.0, &mut rng);
            outputs.push(canvas.quantize());
        }
        let base = base_canvas(2).quantize();
        for (i, out) in outputs.iter().enumerate() {
            assert_ne!(out, &base, "family {i} left the canvas unchanged");
            for other in outputs.iter().skip(i + 1) {
                assert_ne!(out, other);
            }
        }
    }
}
