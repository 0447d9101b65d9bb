use ndarray::Array2;

use super::dense::matmul_nd;
use super::TensorError;
use crate::C64;

const MAX_DIM: usize = 64;
const MAX_TERMS: usize = 64;

fn norm1(m: &Array2<C64>) -> f64 {
    m.columns().into_iter().map(|c| c.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring of a Taylor series.
///
/// The series for `m / 2^s` (with `‖m‖₁ / 2^s ≤ 1/2`) is summed until the
/// next term falls below machine precision relative to the partial sum;
/// `tol` bounds the last accepted term and failing it is an error.
pub fn dense_expm(m: &Array2<C64>, tol: f64) -> Result<Array2<C64>, TensorError> {
    let (n, k) = m.dim();
    if n != k {
        return Err(TensorError::NotSquare(n, k));
    }
    if n > MAX_DIM {
        return Err(TensorError::TooLarge(n));
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(TensorError::NonFinite);
    }
    let nrm = norm1(m);
    let squarings = if nrm > 0.5 { (nrm / 0.5).log2().ceil() as i32 } else { 0 };
    let a = m.mapv(|z| z / 2f64.powi(squarings));
    let mut sum = Array2::<C64>::eye(n);
    let mut term = Array2::<C64>::eye(n);
    let mut last = f64::INFINITY;
    for k in 1..=MAX_TERMS {
        term = matmul_nd(&term.view(), &a.view()).mapv(|z| z / k as f64);
        sum += &term;
        last = norm1(&term);
        if last <= f64::EPSILON * 1e-2 * norm1(&sum) {
            break;
        }
    }
    if last > tol.max(f64::EPSILON) {
        return Err(TensorError::ExpmNotConverged(last));
    }
    for _ in 0..squarings {
        sum = matmul_nd(&sum.view(), &sum.view());
    }
    if sum.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(TensorError::Overflow);
    }
    Ok(sum)
}
