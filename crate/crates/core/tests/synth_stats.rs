//! Statistical properties of the synthetic corpus: the six generator
//! families must be separable from their power-spectrum signatures.

use fflc_core::synth::dataset::gen_fake_face;
use fflc_core::synth::SourceClass;

/// Naive separable 2-D DFT power spectrum of a grayscale crop.
fn power_spectrum(gray: &[f64], n: usize) -> Vec<f64> {
    // rows then columns, keeping complex intermediates
    let mut re = gray.to_vec();
    let mut im = vec![0.0f64; n * n];
    let dft_line = |re_in: &[f64], im_in: &[f64], re_out: &mut [f64], im_out: &mut [f64]| {
        let len = re_in.len();
        for k in 0..len {
            let (mut sr, mut si) = (0.0, 0.0);
            for (t, (&r, &i)) in re_in.iter().zip(im_in).enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * t) as f64 / len as f64;
                let (c, s) = (ang.cos(), ang.sin());
                sr += r * c - i * s;
                si += r * s + i * c;
            }
            re_out[k] = sr;
            im_out[k] = si;
        }
    };
    let mut re2 = vec![0.0; n * n];
    let mut im2 = vec![0.0; n * n];
    for row in 0..n {
        let (r, i) = (&re[row * n..(row + 1) * n], &im[row * n..(row + 1) * n]);
        dft_line(r, i, &mut re2[row * n..(row + 1) * n], &mut im2[row * n..(row + 1) * n]);
    }
    for col in 0..n {
        let rcol: Vec<f64> = (0..n).map(|r| re2[r * n + col]).collect();
        let icol: Vec<f64> = (0..n).map(|r| im2[r * n + col]).collect();
        let mut ro = vec![0.0; n];
        let mut io = vec![0.0; n];
        dft_line(&rcol, &icol, &mut ro, &mut io);
        for r in 0..n {
            re[r * n + col] = ro[r];
            im[r * n + col] = io[r];
        }
    }
    (0..n * n).map(|i| re[i] * re[i] + im[i] * im[i]).collect()
}

/// Log-energy signature: radial bands of the spectrum (DC excluded).
fn signature(img: &fflc_core::synth::RgbImage) -> Vec<f64> {
    const N: usize = 64;
    // center crop, luminance
    let x0 = (img.w - N) / 2;
    let y0 = (img.h - N) / 2;
    let mut gray = vec![0.0f64; N * N];
    for y in 0..N {
        for x in 0..N {
            let i = ((y0 + y) * img.w + x0 + x) * 3;
            gray[y * N + x] = (img.data[i] as f64
                + img.data[i + 1] as f64
                + img.data[i + 2] as f64)
                / (3.0 * 255.0);
        }
    }
    let mean = gray.iter().sum::<f64>() / gray.len() as f64;
    for v in &mut gray {
        *v -= mean;
    }
    let spec = power_spectrum(&gray, N);
    const BANDS: usize = 12;
    let mut bands = vec![0.0f64; BANDS];
    for ky in 0..N {
        for kx in 0..N {
            if kx == 0 && ky == 0 {
                continue;
            }
            // symmetric frequency coordinates
            let fy = if ky <= N / 2 { ky } else { N - ky } as f64;
            let fx = if kx <= N / 2 { kx } else { N - kx } as f64;
            let r = (fx * fx + fy * fy).sqrt() / (N as f64 / 2.0) * 2.0f64.sqrt();
            let band = ((r / 2.0f64.sqrt() * BANDS as f64) as usize).min(BANDS - 1);
            bands[band] += spec[ky * N + kx];
        }
    }
    bands.iter().map(|e| (e + 1e-9).ln()).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[test]
fn generator_families_separate_in_the_spectrum() {
    let families = [
        SourceClass::GenA,
        SourceClass::GenB,
        SourceClass::GenC,
        SourceClass::GenD,
        SourceClass::GenE,
        SourceClass::GenF,
    ];
    const TRAIN: usize = 24;
    const TEST: usize = 24;
    let mut centroids = Vec::new();
    let mut test_sets = Vec::new();
    for (fi, &fam) in families.iter().enumerate() {
        let mut sigs: Vec<Vec<f64>> = Vec::new();
        for idx in 0..(TRAIN + TEST) {
            let (img, _) = gen_fake_face(1000 + (fi * 1000 + idx) as u64, fam, 1.0);
            sigs.push(signature(&img));
        }
        let dim = sigs[0].len();
        let mut centroid = vec![0.0; dim];
        for s in &sigs[..TRAIN] {
            for (c, v) in centroid.iter_mut().zip(s) {
                *c += v / TRAIN as f64;
            }
        }
        centroids.push(centroid);
        test_sets.push(sigs[TRAIN..].to_vec());
    }

    // pairwise separation of the family means
    for i in 0..families.len() {
        for j in (i + 1)..families.len() {
            let d = dist(&centroids[i], &centroids[j]);
            assert!(
                d > 0.5,
                "families {} and {} have nearly identical spectra (d = {d:.3})",
                families[i],
                families[j]
            );
        }
    }

    // held-out nearest-centroid classification
    let mut correct = 0;
    let mut total = 0;
    for (fi, tests) in test_sets.iter().enumerate() {
        for s in tests {
            let best = centroids
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| dist(s, a).partial_cmp(&dist(s, b)).unwrap())
                .unwrap()
                .0;
            correct += (best == fi) as usize;
            total += 1;
        }
    }
    let acc = correct as f64 / total as f64;
    assert!(
        acc >= 0.9,
        "nearest-centroid accuracy over held-out spectra is only {acc:.3}"
    );
}
