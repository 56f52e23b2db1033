use super::{Dense2D, Real};
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function of a matrix:
/// `(f(x + h·e_ij) − f(x − h·e_ij)) / 2h` for every entry.
pub fn finite_diff_grad<T, F>(mut f: F, x: &Dense2D<T>, h: T) -> Result<Dense2D<T>>
where
    T: Real,
    F: FnMut(&Dense2D<T>) -> Result<T>,
{
    let (rows, cols) = x.shape();
    let grad = finite_diff_grad_flat(
        |v| f(&Dense2D::new(rows, cols, v.to_vec())?),
        x.data(),
        h,
    )?;
    Dense2D::new(rows, cols, grad)
}

/// Central-difference gradient over a flat parameter vector.
pub fn finite_diff_grad_flat<T, F>(mut f: F, x: &[T], h: T) -> Result<Vec<T>>
where
    T: Real,
    F: FnMut(&[T]) -> Result<T>,
{
    if !(h > T::zero()) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    let two_h = h + h;
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe)?;
        probe[i] = orig - h;
        let minus = f(&probe)?;
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("finite_diff_grad"));
        }
        grad.push((plus - minus) / two_h);
    }
    Ok(grad)
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, or 0 when both are exactly zero.
pub fn relative_error<T: Real>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error length mismatch");
    let sq = |v: &[T]| v.iter().map(|x| x.to_f64().unwrap().powi(2)).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x.to_f64().unwrap() - y.to_f64().unwrap()).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = sq(a).max(sq(b));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
