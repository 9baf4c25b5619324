//! Scalar abstraction for the numeric core.
//!
//! Everything numeric is generic over [`Scalar`], implemented for `f32`
//! (training/storage) and `f64` (gradient checks and accumulation). The
//! dense matrix product is routed through `matrixmultiply`, which carries
//! runtime-detected SIMD kernels and is deterministic on a fixed machine.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar the tensor engine is generic over.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * op(a) * op(b) + beta * c` with row-major `m x n` output.
    ///
    /// `a` is `m x k` (or `k x m` when `ta`), `b` is `k x n` (or `n x k`
    /// when `tb`); all buffers are contiguous row-major.
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        ta: bool,
        b: &[Self],
        tb: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `exp` used in activation gates. Exact for `f64` (verification
    /// paths); a ~1e-7-relative polynomial for `f32`, where activation
    /// throughput matters and training precision does not.
    fn gate_exp(self) -> Self {
        self.exp()
    }
}

/// Cephes-style expf: exact at 0, monotone to float rounding, relative
/// error around 1e-7 on [-87, 87].
pub fn fast_exp_f32(x: f32) -> f32 {
    if x > 88.0 {
        return f32::INFINITY;
    }
    if x < -88.0 {
        return 0.0;
    }
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const C1: f32 = 0.693_359_375; // ln2 split high
    const C2: f32 = -2.121_944_4e-4; // ln2 split low
    let n = (x * LOG2E).round();
    let r = (x - n * C1) - n * C2;
    // degree-5 minimax polynomial for exp(r) on [-ln2/2, ln2/2]
    let p = 1.987_569_1e-4f32;
    let p = p * r + 1.398_199_9e-3;
    let p = p * r + 8.333_452_e-3;
    let p = p * r + 4.166_579_5e-2;
    let p = p * r + 1.666_666_6e-1;
    let p = p * r + 5e-1;
    let poly = p * r * r + r + 1.0;
    let bits = ((n as i32 + 127) as u32) << 23;
    poly * f32::from_bits(bits)
}

fn strides(logical_rows: usize, logical_cols: usize, transposed: bool) -> (isize, isize) {
    // Strides of the logical `rows x cols` operand over its row-major
    // storage; `transposed` means the buffer holds the transpose.
    if transposed {
        (1, logical_rows as isize)
    } else {
        (logical_cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path $(, $fast:path)?) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                ta: bool,
                b: &[Self],
                tb: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert_eq!(a.len(), m * k, "gemm: lhs length");
                assert_eq!(b.len(), k * n, "gemm: rhs length");
                assert_eq!(c.len(), m * n, "gemm: out length");
                let (rsa, csa) = strides(m, k, ta);
                let (rsb, csb) = strides(k, n, tb);
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }

            fn of_f64(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }

            $(fn gate_exp(self) -> Self {
                $fast(self)
            })?
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm, fast_exp_f32);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Sum of absolute values; non-finite iff the input contains a NaN or
/// infinity. Four independent accumulators keep the loop vectorizable.
pub fn abs_sum_f64<T: Scalar>(data: &[T]) -> f64 {
    let mut acc = [T::zero(); 4];
    let mut chunks = data.chunks_exact(4);
    for c in chunks.by_ref() {
        acc[0] += c[0].abs();
        acc[1] += c[1].abs();
        acc[2] += c[2].abs();
        acc[3] += c[3].abs();
    }
    let mut tail = T::zero();
    for &v in chunks.remainder() {
        tail += v.abs();
    }
    acc[0].as_f64() + acc[1].as_f64() + acc[2].as_f64() + acc[3].as_f64() + tail.as_f64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_identity() {
        let a = vec![1.0f64, 0.0, 0.0, 1.0];
        let b = vec![3.0, 4.0, 5.0, 6.0];
        let mut c = vec![0.0; 4];
        f64::gemm(2, 2, 2, 1.0, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, b);
    }

    #[test]
    fn gemm_transpose_flags() {
        // a = [[1, 2], [3, 4]] stored row-major; a^T * a = [[10, 14], [14, 20]]
        let a = vec![1.0f64, 2.0, 3.0, 4.0];
        let mut c = vec![0.0; 4];
        f64::gemm(2, 2, 2, 1.0, &a, true, &a, false, 0.0, &mut c);
        assert_eq!(c, vec![10.0, 14.0, 14.0, 20.0]);
    }

    #[test]
    fn gemm_transpose_non_square() {
        // A: 2x3, stored transposed as 3x2; B: 3x1 stored transposed 1x3.
        let a_t = vec![1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0]; // (A^T) row-major
        let b_t = vec![7.0, 8.0, 9.0];
        let mut c = vec![0.0; 2];
        f64::gemm(2, 3, 1, 1.0, &a_t, true, &b_t, true, 0.0, &mut c);
        assert_eq!(c, vec![1.0 * 7.0 + 2.0 * 8.0 + 3.0 * 9.0, 4.0 * 7.0 + 5.0 * 8.0 + 6.0 * 9.0]);
    }

    #[test]
    fn abs_sum_flags_non_finite() {
        assert!(abs_sum_f64(&[1.0f32, -2.0]).is_finite());
        assert!(!abs_sum_f64(&[1.0f32, f32::NAN]).is_finite());
        assert!(!abs_sum_f64(&[f32::INFINITY]).is_finite());
    }
}
