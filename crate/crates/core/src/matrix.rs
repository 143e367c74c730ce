//! Dense row-major f32 matrices and the handful of kernels the rest of the
//! crate is built on.
//!
//! Sized for the networks in this project (4 residual blocks of width 512);
//! the GEMM hot paths delegate to `matrixmultiply`, which is single-threaded
//! and therefore bit-deterministic run to run.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f32) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::contract(format!(
                "matrix data length {} != {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Row vector (1 x n).
    pub fn row_vector(data: Vec<f32>) -> Self {
        Matrix {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    /// Column vector (n x 1).
    pub fn col_vector(data: Vec<f32>) -> Self {
        Matrix {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn scalar(&self) -> f32 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f32 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f32> {
        (0..self.rows).map(|r| self.at(r, c)).collect()
    }

    pub fn set_column(&mut self, c: usize, values: &[f32]) {
        debug_assert_eq!(values.len(), self.rows);
        for (r, &v) in values.iter().enumerate() {
            self.set(r, c, v);
        }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.at(c, r))
    }

    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NumericFailure(format!("non-finite values in {what}")))
        }
    }

    fn same_shape(&self, other: &Matrix, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::contract(format!(
                "{op}: shape {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// C = A * B.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::contract(format!(
                "matmul: {:?} x {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        gemm(
            self.rows,
            self.cols,
            rhs.cols,
            self.data(),
            self.cols as isize,
            1,
            rhs.data(),
            rhs.cols as isize,
            1,
            out.data_mut(),
        );
        Ok(out)
    }

    /// C = A * B^T (rhs stored as (n x k), result (m x n)).
    pub fn matmul_nt(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(Error::contract(format!(
                "matmul_nt: {:?} x {:?}^T",
                self.shape(),
                rhs.shape()
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        gemm(
            self.rows,
            self.cols,
            rhs.rows,
            self.data(),
            self.cols as isize,
            1,
            rhs.data(),
            1,
            rhs.cols as isize,
            out.data_mut(),
        );
        Ok(out)
    }

    /// C = A^T * B (self stored as (k x m), result (m x n)).
    pub fn matmul_tn(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::contract(format!(
                "matmul_tn: {:?}^T x {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        gemm(
            self.cols,
            self.rows,
            rhs.cols,
            self.data(),
            1,
            self.cols as isize,
            rhs.data(),
            rhs.cols as isize,
            1,
            out.data_mut(),
        );
        Ok(out)
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.same_shape(rhs, "add")?;
        Ok(self.zip(rhs, |a, b| a + b))
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.same_shape(rhs, "sub")?;
        Ok(self.zip(rhs, |a, b| a - b))
    }

    pub fn mul_elem(&self, rhs: &Matrix) -> Result<Matrix> {
        self.same_shape(rhs, "mul_elem")?;
        Ok(self.zip(rhs, |a, b| a * b))
    }

    pub fn scale(&self, s: f32) -> Matrix {
        self.map(|x| x * s)
    }

    pub fn add_assign(&mut self, rhs: &Matrix) -> Result<()> {
        self.same_shape(rhs, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    /// Adds a (1 x n) row bias to every row of an (m x n) matrix.
    pub fn add_row_broadcast(&self, bias: &Matrix) -> Result<Matrix> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(Error::contract(format!(
                "add_row_broadcast: {:?} + {:?}",
                self.shape(),
                bias.shape()
            )));
        }
        let mut out = self.clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            for (x, b) in row.iter_mut().zip(bias.data.iter()) {
                *x += b;
            }
        }
        Ok(out)
    }

    fn zip(&self, rhs: &Matrix, f: impl Fn(f32, f32) -> f32) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(rhs.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Sum of all entries, accumulated in f64.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|&x| x as f64).sum()
    }

    /// Frobenius norm, accumulated in f64.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
    }
}

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(0.0);
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0f64;
                for k in 0..a.cols() {
                    s += a.at(i, k) as f64 * b.at(k, j) as f64;
                }
                c.set(i, j, s as f32);
            }
        }
        c
    }

    #[test]
    fn matmul_matches_naive() {
        let mut rng = crate::rng::SplitMix64::new(1);
        for (m, k, n) in [(3, 4, 5), (1, 1, 1), (7, 16, 9), (2, 33, 2)] {
            let a = Matrix::from_fn(m, k, |_, _| rng.next_f32() - 0.5);
            let b = Matrix::from_fn(k, n, |_, _| rng.next_f32() - 0.5);
            let c = a.matmul(&b).unwrap();
            let r = naive_matmul(&a, &b);
            for (x, y) in c.data().iter().zip(r.data().iter()) {
                assert!((x - y).abs() < 1e-4, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn transposed_variants_agree() {
        let mut rng = crate::rng::SplitMix64::new(2);
        let a = Matrix::from_fn(5, 7, |_, _| rng.next_f32() - 0.5);
        let b = Matrix::from_fn(4, 7, |_, _| rng.next_f32() - 0.5);
        let nt = a.matmul_nt(&b).unwrap();
        let explicit = a.matmul(&b.transpose()).unwrap();
        assert_eq!(nt.shape(), (5, 4));
        for (x, y) in nt.data().iter().zip(explicit.data().iter()) {
            assert!((x - y).abs() < 1e-5);
        }

        let c = Matrix::from_fn(7, 3, |_, _| rng.next_f32() - 0.5);
        let d = Matrix::from_fn(7, 6, |_, _| rng.next_f32() - 0.5);
        let tn = c.matmul_tn(&d).unwrap();
        let explicit = c.transpose().matmul(&d).unwrap();
        assert_eq!(tn.shape(), (3, 6));
        for (x, y) in tn.data().iter().zip(explicit.data().iter()) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(Error::Contract(_))));
        assert!(a.add(&Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn row_broadcast() {
        let a = Matrix::from_vec(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Matrix::row_vector(vec![10., 20., 30.]);
        let c = a.add_row_broadcast(&b).unwrap();
        assert_eq!(c.data(), &[11., 22., 33., 14., 25., 36.]);
    }
}
