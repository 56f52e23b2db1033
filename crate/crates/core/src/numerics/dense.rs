use std::fmt;

use super::Real;
use crate::error::{Error, Result};

/// Row-major dense matrix.
///
/// Every constructor and public operation checks that the stored values are
/// finite, so a `Dense2D` handed out by this crate never carries NaN or Inf.
#[derive(Clone, PartialEq)]
pub struct Dense2D<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Dense2D<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Length {
                op: "Dense2D::new",
                expected: rows * cols,
                got: data.len(),
            });
        }
        let m = Self { rows, cols, data };
        m.check_finite("Dense2D::new")?;
        Ok(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Length {
                    op: "Dense2D::from_rows",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access for owners of the buffer. Callers are responsible for
    /// keeping values finite; [`Dense2D::check_finite`] re-validates.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        // chunks_exact panics on 0; a 0-column matrix has no meaningful rows to yield
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(op))
        }
    }

    /// Standard matrix product with a fixed (i, k, j) accumulation order, so
    /// results are bit-stable across runs.
    pub fn matmul(&self, other: &Dense2D<T>) -> Result<Dense2D<T>> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (kk, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[kk * n..(kk + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        let out = Dense2D {
            rows: m,
            cols: n,
            data: out,
        };
        out.check_finite("matmul")?;
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Dense2D<T>) -> Result<Dense2D<T>> {
        if self.rows != other.rows {
            return Err(Error::Shape {
                op: "t_matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (k, m, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![T::zero(); m * n];
        for kk in 0..k {
            let a_row = self.row(kk);
            let b_row = other.row(kk);
            for (i, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let o_row = &mut out[i * n..(i + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        let out = Dense2D {
            rows: m,
            cols: n,
            data: out,
        };
        out.check_finite("t_matmul")?;
        Ok(out)
    }

    /// `self · otherᵀ`, each entry a row-by-row dot product.
    pub fn matmul_t(&self, other: &Dense2D<T>) -> Result<Dense2D<T>> {
        if self.cols != other.cols {
            return Err(Error::Shape {
                op: "matmul_t",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (m, n) = (self.rows, other.rows);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let a = self.row(i);
            for j in 0..n {
                out.push(dot(a, other.row(j)));
            }
        }
        let out = Dense2D {
            rows: m,
            cols: n,
            data: out,
        };
        out.check_finite("matmul_t")?;
        Ok(out)
    }

    pub fn transpose(&self) -> Dense2D<T> {
        let mut out = Dense2D::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Gathers the given rows, in order, into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Dense2D<T>> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            if i >= self.rows {
                return Err(Error::invalid(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Dense2D {
            rows: idx.len(),
            cols: self.cols,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Dense2D<T> {
        Dense2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Dense2D<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Dense2D<T>> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Dense2D {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Dense2D<T>) -> Result<Dense2D<T>> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn hadamard(&self, other: &Dense2D<T>) -> Result<Dense2D<T>> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Converts element type, e.g. f32 storage to f64 for gradient checks.
    pub fn cast<U: Real>(&self) -> Dense2D<U> {
        Dense2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| U::lit(v.to_f64().unwrap_or(f64::NAN))).collect(),
        }
    }
}

impl<T: Real> fmt::Debug for Dense2D<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dense2D[{}x{}]", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            f.debug_list().entries(self.iter_rows()).finish()?;
        }
        Ok(())
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn l2_norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Per-row mean and standard deviation over the feature axis.
///
/// Uses the biased (divide-by-`d`) variance and adds `eps_var` under the
/// square root: `std_i = sqrt(var_i + eps_var)`.
pub fn rowwise_mean_std<T: Real>(h: &Dense2D<T>, eps_var: T) -> Result<(Vec<T>, Vec<T>)> {
    if h.cols() == 0 {
        return Err(Error::invalid("rowwise_mean_std needs at least one column"));
    }
    let d = T::lit(h.cols() as f64);
    let mut means = Vec::with_capacity(h.rows());
    let mut stds = Vec::with_capacity(h.rows());
    for row in h.iter_rows() {
        let mean = row.iter().copied().sum::<T>() / d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / d;
        means.push(mean);
        stds.push((var + eps_var).sqrt());
    }
    Ok((means, stds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Dense2D<f64> {
        let data = (0..rows * cols).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        Dense2D::new(rows, cols, data).unwrap()
    }

    #[test]
    fn identity_times_m_is_m() {
        let m = Dense2D::from_rows(&[[3.0, -1.0], [0.5, 2.0]]).unwrap();
        assert_eq!(Dense2D::<f64>::identity(2).matmul(&m).unwrap(), m);
    }

    #[test]
    fn hand_checked_product() {
        let a = Dense2D::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Dense2D::from_rows(&[[0.0], [1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        let mut rng = Rng::seed_from(11);
        let a = random(7, 5, &mut rng);
        let b = random(5, 3, &mut rng);
        let c = a.matmul(&b).unwrap();
        for i in 0..7 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..5 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                assert!((c.get(i, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_products_agree() {
        let mut rng = Rng::seed_from(3);
        let a = random(4, 6, &mut rng);
        let b = random(4, 2, &mut rng);
        let c = random(3, 6, &mut rng);
        let lhs = a.t_matmul(&b).unwrap();
        let rhs = a.transpose().matmul(&b).unwrap();
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let lhs = a.matmul_t(&c).unwrap();
        let rhs = a.matmul(&c.transpose()).unwrap();
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = Dense2D::<f64>::zeros(2, 3);
        let b = Dense2D::<f64>::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(Error::Shape { .. })));
    }

    #[test]
    fn rejects_wrong_length_and_nan() {
        assert!(matches!(
            Dense2D::<f32>::new(2, 2, vec![0.0; 3]),
            Err(Error::Length { .. })
        ));
        assert!(matches!(
            Dense2D::<f32>::new(1, 2, vec![0.0, f32::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn overflowing_product_reports_non_finite() {
        let a = Dense2D::<f32>::filled(1, 2, 1e30);
        let b = Dense2D::<f32>::filled(2, 1, 1e30);
        assert!(matches!(a.matmul(&b), Err(Error::NonFinite(_))));
    }

    #[test]
    fn row_stats_simple_rows() {
        let h = Dense2D::<f64>::from_rows(&[vec![1.0, 3.0], vec![5.0, 5.0]]).unwrap();
        let (mean, std) = rowwise_mean_std(&h, 1e-5).unwrap();
        assert_eq!(mean, vec![2.0, 5.0]);
        assert!((std[0] - 1.0).abs() < 1e-5);
        assert!((std[1] - 1e-5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn row_stats_match_two_pass_oracle() {
        let mut rng = Rng::seed_from(5);
        let h = random(4, 16, &mut rng);
        let (mean, std) = rowwise_mean_std(&h, 1e-5).unwrap();
        for i in 0..4 {
            let row = h.row(i);
            let mut s = 0.0;
            for v in row {
                s += v;
            }
            let m = s / 16.0;
            let mut ss = 0.0;
            for v in row {
                ss += (v - m) * (v - m);
            }
            let sd = (ss / 16.0 + 1e-5).sqrt();
            assert!((mean[i] - m).abs() < 1e-10);
            assert!((std[i] - sd).abs() < 1e-10);
        }
    }
}
