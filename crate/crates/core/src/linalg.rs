//! Small dense row-major matrix and the few products the crate needs.

use crate::numeric::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer has wrong length");
        Mat { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Mat<U> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Mat<U> {
        self.map(|v| U::of(v.to_f64_lossy()))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            data.extend_from_slice(self.row(r));
        }
        Mat {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Column-wise concatenation; all parts must share the row count.
    pub fn hstack(parts: &[&Mat<T>]) -> Option<Self> {
        let rows = parts.first()?.rows;
        if parts.iter().any(|p| p.rows != rows) {
            return None;
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Some(Mat { rows, cols, data })
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn matmul(&self, other: &Mat<T>) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = out.row_mut(i);
            for (k, &aik) in a.iter().enumerate() {
                if aik == T::zero() {
                    continue;
                }
                for (oj, &bkj) in o.iter_mut().zip(other.row(k)) {
                    *oj += aik * bkj;
                }
            }
        }
        out
    }

    /// `selfᵀ · other`, shape `cols × other.cols`.
    pub fn t_matmul(&self, other: &Mat<T>) -> Self {
        assert_eq!(self.rows, other.rows, "t_matmul shape mismatch");
        let mut out = Self::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for (i, &ai) in a.iter().enumerate() {
                if ai == T::zero() {
                    continue;
                }
                let o = out.row_mut(i);
                for (oj, &bj) in o.iter_mut().zip(b) {
                    *oj += ai * bj;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`, shape `rows × other.rows`.
    pub fn matmul_t(&self, other: &Mat<T>) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_t shape mismatch");
        Self::from_fn(self.rows, other.rows, |i, j| {
            self.row(i)
                .iter()
                .zip(other.row(j))
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
        })
    }

    pub fn frobenius_sq(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v * v)
    }

    pub fn frobenius(&self) -> T {
        self.frobenius_sq().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    /// Natural log of `|det(self)|` by LU factorization with partial pivoting.
    ///
    /// Returns `-inf` when a pivot falls below `8·n·ε·max|a_ij|`, which is how an
    /// exactly singular input shows up after rounding.
    pub fn log_abs_det(&self) -> T {
        assert_eq!(self.rows, self.cols, "determinant of non-square matrix");
        let n = self.rows;
        if n == 0 {
            return T::zero();
        }
        let mut a = self.clone();
        let scale = self.max_abs();
        if scale == T::zero() || !scale.is_finite() {
            return T::neg_infinity();
        }
        let tol = T::of(8.0) * T::of_usize(n) * T::epsilon() * scale;
        let mut acc = T::zero();
        for k in 0..n {
            let (p, pivot_abs) = (k..n)
                .map(|r| (r, a[(r, k)].abs()))
                .fold((k, -T::one()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot_abs <= tol {
                return T::neg_infinity();
            }
            if p != k {
                for c in 0..n {
                    a.data.swap(k * n + c, p * n + c);
                }
            }
            let pivot = a[(k, k)];
            acc += pivot_abs.ln();
            for r in (k + 1)..n {
                let factor = a[(r, k)] / pivot;
                if factor == T::zero() {
                    continue;
                }
                for c in (k + 1)..n {
                    let v = a[(k, c)];
                    a[(r, c)] -= factor * v;
                }
            }
        }
        acc
    }
}

impl<T> std::ops::Index<(usize, usize)> for Mat<T> {
    type Output = T;

    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Mat<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_agree_with_transpose() {
        let a = Mat::<f64>::from_vec(2, 3, vec![1., 2., 3., 4., 5., 6.]);
        let b = Mat::<f64>::from_vec(2, 2, vec![1., 0., 2., 1.]);
        assert_eq!(a.t_matmul(&b), a.transpose().matmul(&b));
        assert_eq!(a.matmul_t(&a), a.matmul(&a.transpose()));
    }

    #[test]
    fn log_det_small() {
        let m = Mat::<f64>::from_vec(2, 2, vec![3., 1., 1., 3.]);
        assert!((m.log_abs_det() - 8f64.ln()).abs() < 1e-14);
        let s = Mat::<f64>::from_vec(2, 2, vec![2., 2., 2., 2.]);
        assert_eq!(s.log_abs_det(), f64::NEG_INFINITY);
        // needs a row swap
        let p = Mat::<f64>::from_vec(2, 2, vec![0., 2., 5., 1.]);
        assert!((p.log_abs_det() - 10f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn hstack_rows() {
        let a = Mat::<f32>::from_vec(2, 1, vec![1., 2.]);
        let b = Mat::<f32>::from_vec(2, 2, vec![3., 4., 5., 6.]);
        let h = Mat::hstack(&[&a, &b]).unwrap();
        assert_eq!(h.as_slice(), &[1., 3., 4., 2., 5., 6.]);
        let c = Mat::<f32>::zeros(3, 1);
        assert!(Mat::hstack(&[&a, &c]).is_none());
    }
}
