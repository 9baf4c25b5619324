//! Numeric kernels behind the graph operations.
//!
//! Convolutions are lowered to GEMM through im2col/col2im; the transposed
//! convolution (kernel size == stride) is a GEMM followed by a
//! non-overlapping scatter. A sparse fast path handles near-empty inputs
//! such as landmark binary maps: it skips the dense lowering entirely and
//! never needs an input gradient (those inputs are constant leaves).

use crate::num::Scalar;

/// Spatial geometry of one convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        x_shape: &[usize],
        w_shape: &[usize],
        stride: usize,
        padding: usize,
    ) -> Option<ConvGeom> {
        let [n, c_in, h, w] = *<&[usize; 4]>::try_from(x_shape).ok()?;
        let [c_out, wc, kh, kw] = *<&[usize; 4]>::try_from(w_shape).ok()?;
        if wc != c_in || stride == 0 || kh > h + 2 * padding || kw > w + 2 * padding {
            return None;
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        Some(ConvGeom {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            padding,
            oh,
            ow,
        })
    }
}

/// Lower one `[C,H,W]` sample into a `[(C*kh*kw) x (oh*ow)]` column buffer.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let (h, w, oh, ow) = (g.h, g.w, g.oh, g.ow);
    let ohw = oh * ow;
    for c in 0..g.c_in {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * ohw;
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let dst = &mut col[row + oy * ow..row + (oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add a column buffer back onto a `[C,H,W]` sample.
fn col2im_add<T: Scalar>(col: &[T], g: &ConvGeom, x: &mut [T]) {
    let (h, w, oh, ow) = (g.h, g.w, g.oh, g.ow);
    let ohw = oh * ow;
    for c in 0..g.c_in {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * ohw;
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &col[row + oy * ow..row + (oy + 1) * ow];
                    for (ox, s) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += *s;
                        }
                    }
                }
            }
        }
    }
}

/// Dense-input threshold for the sparse path: use scatter when fewer than
/// one element in 32 is non-zero. A cheap prefix probe rejects dense
/// inputs without scanning them fully.
fn is_sparse<T: Scalar>(sample: &[T]) -> Option<Vec<(usize, T)>> {
    let probe = sample.len().min(2048);
    let nz_probe = sample[..probe].iter().filter(|&&v| v != T::zero()).count();
    if nz_probe > probe / 32 {
        return None;
    }
    let cap = sample.len() / 32;
    let mut nz = Vec::with_capacity(cap.min(4096));
    for (i, &v) in sample.iter().enumerate() {
        if v != T::zero() {
            if nz.len() == cap {
                return None;
            }
            nz.push((i, v));
        }
    }
    Some(nz)
}

fn is_pointwise(g: &ConvGeom) -> bool {
    g.kh == 1 && g.kw == 1 && g.stride == 1 && g.padding == 0
}

/// Forward convolution with optional per-channel bias and fused ReLU.
/// 1x1/stride-1 convolutions skip the im2col lowering: the input already
/// is the column matrix.
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    wt: &[T],
    bias: Option<&[T]>,
    g: &ConvGeom,
    relu: bool,
) -> Vec<T> {
    let ck2 = g.c_in * g.kh * g.kw;
    let ohw = g.oh * g.ow;
    let mut out = vec![T::zero(); g.n * g.c_out * ohw];
    let pointwise = is_pointwise(g);
    let mut col = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); ck2 * ohw]
    };
    for s in 0..g.n {
        let xs = &x[s * g.c_in * g.h * g.w..(s + 1) * g.c_in * g.h * g.w];
        let os = &mut out[s * g.c_out * ohw..(s + 1) * g.c_out * ohw];
        if pointwise {
            T::gemm(g.c_out, ck2, ohw, T::one(), wt, false, xs, false, T::zero(), os);
        } else if let Some(nz) = is_sparse(xs) {
            sparse_conv_forward(&nz, wt, g, os);
        } else {
            im2col(xs, g, &mut col);
            T::gemm(g.c_out, ck2, ohw, T::one(), wt, false, &col, false, T::zero(), os);
        }
        finish_channels(os, bias, relu, g.c_out, ohw);
    }
    out
}

fn sparse_conv_forward<T: Scalar>(nz: &[(usize, T)], wt: &[T], g: &ConvGeom, out: &mut [T]) {
    let ohw = g.oh * g.ow;
    let k2 = g.kh * g.kw;
    for &(idx, v) in nz {
        let c = idx / (g.h * g.w);
        let iy = (idx / g.w) % g.h;
        let ix = idx % g.w;
        for ky in 0..g.kh {
            let oy_num = iy + g.padding;
            if oy_num < ky || (oy_num - ky) % g.stride != 0 {
                continue;
            }
            let oy = (oy_num - ky) / g.stride;
            if oy >= g.oh {
                continue;
            }
            for kx in 0..g.kw {
                let ox_num = ix + g.padding;
                if ox_num < kx || (ox_num - kx) % g.stride != 0 {
                    continue;
                }
                let ox = (ox_num - kx) / g.stride;
                if ox >= g.ow {
                    continue;
                }
                let o = oy * g.ow + ox;
                for f in 0..g.c_out {
                    out[f * ohw + o] += v * wt[(f * g.c_in + c) * k2 + ky * g.kw + kx];
                }
            }
        }
    }
}

fn finish_channels<T: Scalar>(
    out: &mut [T],
    bias: Option<&[T]>,
    relu: bool,
    channels: usize,
    plane: usize,
) {
    if let Some(b) = bias {
        for c in 0..channels {
            let bc = b[c];
            for v in &mut out[c * plane..(c + 1) * plane] {
                *v += bc;
            }
        }
    }
    if relu {
        for v in out.iter_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
    }
}

/// Backward convolution. `gy` is the gradient at the (post-activation)
/// output; when `relu` was fused the caller must already have masked it.
/// Returns `(gx, gw, gb)`; `gx` is skipped when `need_gx` is false.
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    wt: &[T],
    gy: &[T],
    g: &ConvGeom,
    need_gx: bool,
    need_gb: bool,
) -> (Option<Vec<T>>, Vec<T>, Option<Vec<T>>) {
    let ck2 = g.c_in * g.kh * g.kw;
    let ohw = g.oh * g.ow;
    let mut gw = vec![T::zero(); g.c_out * ck2];
    let mut gx = if need_gx {
        Some(vec![T::zero(); g.n * g.c_in * g.h * g.w])
    } else {
        None
    };
    let mut gb = if need_gb {
        Some(vec![T::zero(); g.c_out])
    } else {
        None
    };
    let pointwise = is_pointwise(g);
    let mut col = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); ck2 * ohw]
    };
    let mut gcol = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); ck2 * ohw]
    };
    for s in 0..g.n {
        let xs = &x[s * g.c_in * g.h * g.w..(s + 1) * g.c_in * g.h * g.w];
        let gys = &gy[s * g.c_out * ohw..(s + 1) * g.c_out * ohw];
        if pointwise {
            T::gemm(g.c_out, ohw, ck2, T::one(), gys, false, xs, true, T::one(), &mut gw);
        } else if let Some(nz) = (!need_gx).then(|| is_sparse(xs)).flatten() {
            sparse_conv_grad_w(&nz, gys, g, &mut gw);
        } else {
            im2col(xs, g, &mut col);
            // gw += gy . col^T
            T::gemm(g.c_out, ohw, ck2, T::one(), gys, false, &col, true, T::one(), &mut gw);
        }
        if let Some(gx) = gx.as_mut() {
            let gxs = &mut gx[s * g.c_in * g.h * g.w..(s + 1) * g.c_in * g.h * g.w];
            if pointwise {
                T::gemm(ck2, g.c_out, ohw, T::one(), wt, true, gys, false, T::zero(), gxs);
            } else {
                // gcol = w^T . gy, then scatter back
                T::gemm(ck2, g.c_out, ohw, T::one(), wt, true, gys, false, T::zero(), &mut gcol);
                col2im_add(&gcol, g, gxs);
            }
        }
        if let Some(gb) = gb.as_mut() {
            for f in 0..g.c_out {
                let mut acc = T::zero();
                for &v in &gys[f * ohw..(f + 1) * ohw] {
                    acc += v;
                }
                gb[f] += acc;
            }
        }
    }
    (gx, gw, gb)
}

fn sparse_conv_grad_w<T: Scalar>(nz: &[(usize, T)], gy: &[T], g: &ConvGeom, gw: &mut [T]) {
    let ohw = g.oh * g.ow;
    let k2 = g.kh * g.kw;
    for &(idx, v) in nz {
        let c = idx / (g.h * g.w);
        let iy = (idx / g.w) % g.h;
        let ix = idx % g.w;
        for ky in 0..g.kh {
            let oy_num = iy + g.padding;
            if oy_num < ky || (oy_num - ky) % g.stride != 0 {
                continue;
            }
            let oy = (oy_num - ky) / g.stride;
            if oy >= g.oh {
                continue;
            }
            for kx in 0..g.kw {
                let ox_num = ix + g.padding;
                if ox_num < kx || (ox_num - kx) % g.stride != 0 {
                    continue;
                }
                let ox = (ox_num - kx) / g.stride;
                if ox >= g.ow {
                    continue;
                }
                let o = oy * g.ow + ox;
                for f in 0..g.c_out {
                    gw[(f * g.c_in + c) * k2 + ky * g.kw + kx] += v * gy[f * ohw + o];
                }
            }
        }
    }
}

/// Depthwise convolution forward: kernel `[C,1,kh,kw]`, one filter per
/// input channel.
pub fn dwconv2d_forward<T: Scalar>(x: &[T], wt: &[T], g: &ConvGeom) -> Vec<T> {
    debug_assert_eq!(g.c_in, g.c_out);
    let ohw = g.oh * g.ow;
    let mut out = vec![T::zero(); g.n * g.c_in * ohw];
    for s in 0..g.n {
        for c in 0..g.c_in {
            let plane = &x[(s * g.c_in + c) * g.h * g.w..(s * g.c_in + c + 1) * g.h * g.w];
            let ker = &wt[c * g.kh * g.kw..(c + 1) * g.kh * g.kw];
            let dst = &mut out[(s * g.c_in + c) * ohw..(s * g.c_in + c + 1) * ohw];
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = T::zero();
                    for ky in 0..g.kh {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for kx in 0..g.kw {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix >= 0 && ix < g.w as isize {
                                acc += ker[ky * g.kw + kx] * plane[iy as usize * g.w + ix as usize];
                            }
                        }
                    }
                    dst[oy * g.ow + ox] = acc;
                }
            }
        }
    }
    out
}

pub fn dwconv2d_backward<T: Scalar>(
    x: &[T],
    wt: &[T],
    gy: &[T],
    g: &ConvGeom,
    need_gx: bool,
) -> (Option<Vec<T>>, Vec<T>) {
    let ohw = g.oh * g.ow;
    let mut gw = vec![T::zero(); g.c_in * g.kh * g.kw];
    let mut gx = need_gx.then(|| vec![T::zero(); g.n * g.c_in * g.h * g.w]);
    for s in 0..g.n {
        for c in 0..g.c_in {
            let plane = &x[(s * g.c_in + c) * g.h * g.w..(s * g.c_in + c + 1) * g.h * g.w];
            let ker = &wt[c * g.kh * g.kw..(c + 1) * g.kh * g.kw];
            let gys = &gy[(s * g.c_in + c) * ohw..(s * g.c_in + c + 1) * ohw];
            let gker = &mut gw[c * g.kh * g.kw..(c + 1) * g.kh * g.kw];
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let go = gys[oy * g.ow + ox];
                    if go == T::zero() {
                        continue;
                    }
                    for ky in 0..g.kh {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for kx in 0..g.kw {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            let ii = iy as usize * g.w + ix as usize;
                            gker[ky * g.kw + kx] += go * plane[ii];
                            if let Some(gx) = gx.as_mut() {
                                gx[(s * g.c_in + c) * g.h * g.w + ii] += go * ker[ky * g.kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw)
}

/// Transposed convolution with kernel size == stride (non-overlapping
/// upsampling). Kernel layout `[C_in, C_out, k, k]`.
pub fn convt2d_forward<T: Scalar>(
    x: &[T],
    wt: &[T],
    bias: Option<&[T]>,
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    relu: bool,
) -> Vec<T> {
    let hw = h * w;
    let (oh, ow) = (h * k, w * k);
    let fk2 = c_out * k * k;
    let mut out = vec![T::zero(); n * c_out * oh * ow];
    let mut cols = vec![T::zero(); fk2 * hw];
    for s in 0..n {
        let xs = &x[s * c_in * hw..(s + 1) * c_in * hw];
        // cols[(f,dy,dx), (y,x)] = sum_c w[c,f,dy,dx] * x[c,y,x]
        T::gemm(fk2, c_in, hw, T::one(), wt, true, xs, false, T::zero(), &mut cols);
        let os = &mut out[s * c_out * oh * ow..(s + 1) * c_out * oh * ow];
        for f in 0..c_out {
            for dy in 0..k {
                for dx in 0..k {
                    let row = ((f * k + dy) * k + dx) * hw;
                    for y in 0..h {
                        let dst_row = (f * oh + y * k + dy) * ow + dx;
                        for x_ in 0..w {
                            os[dst_row + x_ * k] = cols[row + y * w + x_];
                        }
                    }
                }
            }
        }
        finish_channels(os, bias, relu, c_out, oh * ow);
    }
    out
}

pub fn convt2d_backward<T: Scalar>(
    x: &[T],
    wt: &[T],
    gy: &[T],
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    need_gx: bool,
    need_gb: bool,
) -> (Option<Vec<T>>, Vec<T>, Option<Vec<T>>) {
    let hw = h * w;
    let (oh, ow) = (h * k, w * k);
    let fk2 = c_out * k * k;
    let mut gw = vec![T::zero(); c_in * fk2];
    let mut gx = need_gx.then(|| vec![T::zero(); n * c_in * hw]);
    let mut gb = need_gb.then(|| vec![T::zero(); c_out]);
    let mut gcols = vec![T::zero(); fk2 * hw];
    for s in 0..n {
        let gys = &gy[s * c_out * oh * ow..(s + 1) * c_out * oh * ow];
        for f in 0..c_out {
            for dy in 0..k {
                for dx in 0..k {
                    let row = ((f * k + dy) * k + dx) * hw;
                    for y in 0..h {
                        let src_row = (f * oh + y * k + dy) * ow + dx;
                        for x_ in 0..w {
                            gcols[row + y * w + x_] = gys[src_row + x_ * k];
                        }
                    }
                }
            }
        }
        let xs = &x[s * c_in * hw..(s + 1) * c_in * hw];
        // gw[c, (f,dy,dx)] += x[c,:] . gcols[(f,dy,dx),:]^T
        T::gemm(c_in, hw, fk2, T::one(), xs, false, &gcols, true, T::one(), &mut gw);
        if let Some(gx) = gx.as_mut() {
            let gxs = &mut gx[s * c_in * hw..(s + 1) * c_in * hw];
            T::gemm(c_in, fk2, hw, T::one(), wt, false, &gcols, false, T::zero(), gxs);
        }
        if let Some(gb) = gb.as_mut() {
            for f in 0..c_out {
                let mut acc = T::zero();
                for &v in &gys[f * oh * ow..(f + 1) * oh * ow] {
                    acc += v;
                }
                gb[f] += acc;
            }
        }
    }
    (gx, gw, gb)
}

/// Numerically stable logistic function. Uses the scalar type's gate
/// exponential: exact for f64, fast-polynomial for f32.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).gate_exp())
    } else {
        let e = x.gate_exp();
        e / (T::one() + e)
    }
}

/// Row-wise softmax with max subtraction; `x` is `[rows x cols]`.
pub fn softmax_rows<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let m = row.iter().cloned().fold(row[0], T::max);
        let mut denom = T::zero();
        for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            let e = (v - m).exp();
            *o = e;
            denom += e;
        }
        for o in &mut out[r * cols..(r + 1) * cols] {
            *o = *o / denom;
        }
    }
    out
}

/// Stable per-element binary cross-entropy with logits:
/// `max(x,0) - x t + ln(1 + exp(-|x|))`.
pub fn bce_with_logits<T: Scalar>(x: T, t: T) -> T {
    x.max(T::zero()) - x * t + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(x: &[usize], w: &[usize], s: usize, p: usize) -> ConvGeom {
        ConvGeom::new(x, w, s, p).unwrap()
    }

    /// Direct nested-loop convolution oracle.
    fn conv_oracle(x: &[f64], wt: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; g.n * g.c_out * g.oh * g.ow];
        for s in 0..g.n {
            for f in 0..g.c_out {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let mut acc = 0.0;
                        for c in 0..g.c_in {
                            for ky in 0..g.kh {
                                for kx in 0..g.kw {
                                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize
                                    {
                                        continue;
                                    }
                                    acc += x[((s * g.c_in + c) * g.h + iy as usize) * g.w
                                        + ix as usize]
                                        * wt[((f * g.c_in + c) * g.kh + ky) * g.kw + kx];
                                }
                            }
                        }
                        out[((s * g.c_out + f) * g.oh + oy) * g.ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_kernel() {
        let g = geom(&[1, 1, 2, 2], &[1, 1, 1, 1], 1, 0);
        let out = conv2d_forward(&[1.0, 2.0, 3.0, 4.0], &[1.0], None, &g, false);
        assert_eq!(out, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv_all_ones_padded_matches_oracle() {
        let g = geom(&[1, 1, 2, 2], &[1, 1, 3, 3], 1, 1);
        let x = vec![1.0f64; 4];
        let w = vec![1.0f64; 9];
        let out = conv2d_forward(&x, &w, None, &g, false);
        assert_eq!(out, vec![4.0, 4.0, 4.0, 4.0]);
        assert_eq!(out, conv_oracle(&x, &w, &g));
    }

    #[test]
    fn conv_random_matches_oracle() {
        use rand::Rng;
        let mut rng = crate::seed::stream(7, 0, 0, 0);
        let g = geom(&[2, 3, 5, 6], &[4, 3, 3, 3], 2, 1);
        let x: Vec<f64> = (0..2 * 3 * 5 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..4 * 3 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = conv2d_forward(&x, &w, None, &g, false);
        let want = conv_oracle(&x, &w, &g);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sparse_path_matches_dense() {
        // A 68-channel map with a single 1 per channel takes the scatter path.
        let g = geom(&[1, 68, 16, 16], &[4, 68, 3, 3], 2, 1);
        let mut x = vec![0.0f64; 68 * 256];
        for c in 0..68 {
            x[c * 256 + (c * 3 + 5) % 256] = 1.0;
        }
        let w: Vec<f64> = (0..4 * 68 * 9).map(|i| (i as f64 * 0.37).sin()).collect();
        let got = conv2d_forward(&x, &w, None, &g, false);
        let want = conv_oracle(&x, &w, &g);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn convt_scatter_oracle() {
        // 1x1x1x1 input [3], 2x2 all-ones kernel, stride 2 -> 2x2 all-3.
        let out = convt2d_forward(&[3.0f64], &[1.0, 1.0, 1.0, 1.0], None, 1, 1, 1, 1, 1, 2, false);
        assert_eq!(out, vec![3.0; 4]);
    }

    #[test]
    fn convt_zero_input_zero_output() {
        let w: Vec<f64> = (0..2 * 3 * 4).map(|i| i as f64).collect();
        let out = convt2d_forward(&vec![0.0; 2 * 4 * 5], &w, None, 1, 2, 4, 5, 3, 2, false);
        assert_eq!(out.len(), 3 * 8 * 10);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigmoid_stable_and_bounded() {
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!(sigmoid(800.0f64) <= 1.0);
        assert!((sigmoid(4.0f64) - 0.9820137900379085).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_rows(&[1.0f64, 2.0, 3.0, -5.0, 0.0, 5.0], 2, 3);
        for r in 0..2 {
            let s: f64 = p[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn bce_closed_forms() {
        assert!((bce_with_logits(0.0f64, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        let v = bce_with_logits(20.0f64, 1.0);
        assert!((v - 2.0611536181902037e-9).abs() / v < 1e-6);
    }
}
