//! Interop between `ndarray` storage and `faer` kernels.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use ndarray::{Array2, ArrayView2};

use crate::C64;

/// Row-major `ndarray` view as a `faer` matrix. The view must be in
/// standard layout.
pub fn as_faer<'a>(a: &'a ArrayView2<'_, C64>) -> MatRef<'a, C64> {
    let (r, c) = a.dim();
    let slice = a.as_slice().expect("standard layout");
    MatRef::from_row_major_slice(slice, r, c)
}

pub fn to_faer(a: &ArrayView2<'_, C64>) -> Mat<C64> {
    let (r, c) = a.dim();
    Mat::from_fn(r, c, |i, j| a[[i, j]])
}

pub fn from_faer(m: MatRef<'_, C64>) -> Array2<C64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// `a · b` for two standard-layout arrays.
pub fn matmul_nd(a: &ArrayView2<'_, C64>, b: &ArrayView2<'_, C64>) -> Array2<C64> {
    let (m, _) = a.dim();
    let (_, n) = b.dim();
    let mut out = Mat::<C64>::zeros(m, n);
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let av = a.view();
    let bv = b.view();
    matmul(
        out.as_mut(),
        Accum::Replace,
        as_faer(&av),
        as_faer(&bv),
        C64::new(1.0, 0.0),
        Par::Seq,
    );
    from_faer(out.as_ref())
}

/// `out += a · b` on `faer` matrices.
pub fn gemm_acc(out: &mut Mat<C64>, a: MatRef<'_, C64>, b: MatRef<'_, C64>) {
    matmul(out.as_mut(), Accum::Add, a, b, C64::new(1.0, 0.0), Par::Seq);
}

pub fn is_finite(a: &[C64]) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}
