use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn scalar(value: f64) -> Self {
        Self::filled(1, 1, value)
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    ///
    /// Panics on ragged input; intended for literals in tests and presets.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn from_fn<F: FnMut(usize, usize) -> f64>(rows: usize, cols: usize, mut f: F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Scalar value of a 1x1 matrix.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.shape(), (1, 1));
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Selects a subset of rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Shape {
                op: "vstack",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn map<F: Fn(f64) -> f64 + Send + Sync>(&self, f: F) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: par::map_elems(&self.data, f),
        }
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64 + Send + Sync>(
        &self,
        other: &Matrix,
        op: &'static str,
        f: F,
    ) -> Result<Matrix> {
        self.same_shape(other, op)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: par::zip_elems(&self.data, &other.data, f),
        })
    }

    pub(crate) fn same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (k, m) = (self.cols, other.cols);
        let mut out = vec![0.0; self.rows * m];
        par::for_each_row(&mut out, m, k * m, |i, row| {
            let a = &self.data[i * k..(i + 1) * k];
            for (l, &av) in a.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let b = &other.data[l * m..(l + 1) * m];
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o += av * bv;
                }
            }
        });
        Ok(Matrix {
            rows: self.rows,
            cols: m,
            data: out,
        })
    }

    /// `selfᵀ · other` without materializing the transpose.
    ///
    /// Rows are reduced in fixed chunks so the result does not depend on
    /// the thread count.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape {
                op: "t_matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (k, m) = (self.cols, other.cols);
        let partials = par::map_chunks(self.rows, par::ROW_CHUNK, k * m, |range| {
            let mut acc = vec![0.0; k * m];
            for t in range {
                let a = self.row(t);
                let b = other.row(t);
                for (i, &av) in a.iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    for (o, &bv) in acc[i * m..(i + 1) * m].iter_mut().zip(b) {
                        *o += av * bv;
                    }
                }
            }
            acc
        });
        let mut data = vec![0.0; k * m];
        for p in partials {
            for (d, v) in data.iter_mut().zip(p) {
                *d += v;
            }
        }
        Ok(Matrix {
            rows: k,
            cols: m,
            data,
        })
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Shape {
                op: "matmul_t",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (k, m) = (self.cols, other.rows);
        let mut out = vec![0.0; self.rows * m];
        par::for_each_row(&mut out, m, k * m, |i, row| {
            let a = &self.data[i * k..(i + 1) * k];
            for (j, o) in row.iter_mut().enumerate() {
                let b = &other.data[j * k..(j + 1) * k];
                *o = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        });
        Ok(Matrix {
            rows: self.rows,
            cols: m,
            data: out,
        })
    }

    /// Deterministic sum of all entries.
    pub fn sum(&self) -> f64 {
        let d = &self.data;
        par::sum_by(d.len(), |i| d[i])
    }

    /// Column sums as a `1 x cols` matrix.
    pub fn column_sums(&self) -> Matrix {
        let cols = self.cols;
        let partials = par::map_chunks(self.rows, par::ROW_CHUNK, cols, |range| {
            let mut acc = vec![0.0; cols];
            for t in range {
                for (a, v) in acc.iter_mut().zip(self.row(t)) {
                    *a += v;
                }
            }
            acc
        });
        let mut data = vec![0.0; cols];
        for p in partials {
            for (d, v) in data.iter_mut().zip(p) {
                *d += v;
            }
        }
        Matrix {
            rows: 1,
            cols,
            data,
        }
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|x| c * x)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub(crate) fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Applies `f(value, row_value)` where `row` is `1 x cols`, broadcast over rows.
    pub fn row_broadcast<F>(&self, row: &Matrix, op: &'static str, f: F) -> Result<Matrix>
    where
        F: Fn(f64, f64) -> f64 + Send + Sync,
    {
        if row.rows != 1 || row.cols != self.cols {
            return Err(Error::Shape {
                op,
                left: self.shape(),
                right: row.shape(),
            });
        }
        let cols = self.cols;
        let mut out = vec![0.0; self.data.len()];
        par::for_each_row(&mut out, cols, cols, |r, dst| {
            for ((d, &a), &b) in dst.iter_mut().zip(self.row(r)).zip(&row.data) {
                *d = f(a, b);
            }
        });
        Ok(Matrix {
            rows: self.rows,
            cols,
            data: out,
        })
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    /// Ratio of largest to smallest singular value (infinite when rank deficient).
    pub fn condition_number(&self) -> f64 {
        let sv = self.to_nalgebra().singular_values();
        let max = sv.iter().cloned().fold(0.0, f64::max);
        let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    /// Numerical rank from singular values, relative tolerance `tol`.
    pub fn rank(&self, tol: f64) -> usize {
        let sv = self.to_nalgebra().singular_values();
        let max = sv.iter().cloned().fold(0.0, f64::max);
        sv.iter().filter(|&&s| s > tol * max).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_column() {
        let c = Matrix::identity(2)
            .matmul(&Matrix::from_rows(&[[3.0], [4.0]]))
            .unwrap();
        assert_eq!(c, Matrix::from_rows(&[[3.0], [4.0]]));
    }

    #[test]
    fn row_times_column() {
        let c = Matrix::from_rows(&[[1.0, 2.0]])
            .matmul(&Matrix::from_rows(&[[3.0], [4.0]]))
            .unwrap();
        assert_eq!(c.item(), 11.0);
    }

    #[test]
    fn shape_error_names_both_shapes() {
        let err = Matrix::zeros(2, 3)
            .matmul(&Matrix::zeros(2, 3))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
        assert!(matches!(
            err,
            Error::Shape {
                left: (2, 3),
                right: (2, 3),
                ..
            }
        ));
    }

    #[test]
    fn transposed_products_agree_with_plain() {
        let a = Matrix::from_fn(5, 3, |r, c| (r as f64 - c as f64 * 0.7).sin());
        let b = Matrix::from_fn(5, 4, |r, c| (r as f64 * 0.3 + c as f64).cos());
        let direct = a.transpose().matmul(&b).unwrap();
        assert!(a.t_matmul(&b).unwrap().max_abs_diff(&direct) < 1e-14);
        let bt = b.transpose();
        let direct = a.transpose().matmul(&bt.transpose()).unwrap();
        assert!(a.transpose().matmul_t(&bt).unwrap().max_abs_diff(&direct) < 1e-14);
    }

    #[test]
    fn condition_number_of_scaled_identity() {
        let m = Matrix::from_rows(&[[2.0, 0.0], [0.0, 0.5]]);
        assert!((m.condition_number() - 4.0).abs() < 1e-12);
        let singular = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]);
        assert_eq!(singular.rank(1e-10), 1);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
    }
}
