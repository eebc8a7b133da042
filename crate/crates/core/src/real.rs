//! Scalar abstraction so the same kernels run in `f32` (training) and
//! `f64` (gradient verification).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

pub trait Real:
    Float
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// Bytes per scalar in memory, used for reporting only.
    const BYTES: usize;

    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn as_f32(self) -> f32;

    /// `C ← α·A·B + β·C` on raw strided storage.
    ///
    /// # Safety
    /// Every element addressed through the shapes and strides must lie
    /// inside the corresponding allocation, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    const BYTES: usize = 4;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    #[inline(always)]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn as_f32(self) -> f32 {
        self
    }
}

impl Real for f64 {
    const BYTES: usize = 8;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    #[inline(always)]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn as_f32(self) -> f32 {
        self as f32
    }
}

#[inline(always)]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `ln(1 + e^x)`, evaluated without overflow.
#[inline(always)]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::lit(15.0) {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Dot product with independent partial sums so the compiler can vectorize it.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// Shape and strides of a matrix inside a slice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl Mat {
    /// Dense row-major `rows × cols`.
    pub const fn rows(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Row-major `rows × cols` with a wider row pitch.
    pub const fn strided(rows: usize, cols: usize, row_stride: usize) -> Self {
        Self {
            rows,
            cols,
            row_stride,
            col_stride: 1,
        }
    }

    pub const fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn fits(&self, len: usize) -> bool {
        self.rows == 0
            || self.cols == 0
            || (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride < len
    }
}

/// `c ← α·a·b + β·c`. With `β = 0` the old contents of `c` are ignored.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(alpha: T, a: &[T], am: Mat, b: &[T], bm: Mat, beta: T, c: &mut [T], cm: Mat) {
    assert_eq!(am.cols, bm.rows, "inner dimensions differ");
    assert_eq!(
        (cm.rows, cm.cols),
        (am.rows, bm.cols),
        "output shape differs"
    );
    assert!(
        am.fits(a.len()) && bm.fits(b.len()) && cm.fits(c.len()),
        "matrix exceeds its slice"
    );
    if cm.rows == 0 || cm.cols == 0 {
        return;
    }
    // SAFETY: extents checked above; `c` is a unique borrow distinct from `a` and `b`.
    unsafe {
        T::gemm_raw(
            am.rows,
            am.cols,
            bm.cols,
            alpha,
            a.as_ptr(),
            am.row_stride as isize,
            am.col_stride as isize,
            b.as_ptr(),
            bm.row_stride as isize,
            bm.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            cm.row_stride as isize,
            cm.col_stride as isize,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect(); // 4x3, used transposed
        let mut c = vec![1.0; 8];
        gemm(
            2.0,
            &a,
            Mat::rows(2, 3),
            &b,
            Mat::rows(4, 3).t(),
            1.0,
            &mut c,
            Mat::rows(2, 4),
        );
        for i in 0..2 {
            for j in 0..4 {
                let s: f64 = (0..3).map(|k| a[i * 3 + k] * b[j * 3 + k]).sum();
                assert!((c[i * 4 + j] - (1.0 + 2.0 * s)).abs() < 1e-12);
            }
        }
    }

    #[test]
    #[should_panic(expected = "exceeds")]
    fn gemm_checks_extents() {
        let mut c = vec![0.0f32; 3];
        gemm(
            1.0,
            &[1.0; 4],
            Mat::rows(2, 2),
            &[1.0; 4],
            Mat::rows(2, 2),
            0.0,
            &mut c,
            Mat::rows(2, 2),
        );
    }

    #[test]
    fn softplus_limits() {
        assert_eq!(softplus(-1000.0f64), 0.0);
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(40.0f64) - 40.0).abs() < 1e-15);
        assert!(softplus(88.0f32).is_finite());
        assert!(softplus(1e4f32).is_finite());
    }

    #[test]
    fn sigmoid_saturates_exactly() {
        assert_eq!(sigmoid(5000.0f64), 1.0);
        assert_eq!(sigmoid(-5000.0f64), 0.0);
        assert_eq!(sigmoid(0.0f32), 0.5);
    }

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64 * 0.11).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
