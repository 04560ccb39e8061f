//! Dense row-major matrices and the few operations the kernels need.
//!
//! Everything is `f64`; the matrices involved are small enough (up to the
//! FFT size squared) that a flat `Vec<f64>` beats pulling in a full linear
//! algebra stack, and it keeps every reduction order explicit, which the
//! bit-exact determinism guarantees rely on.

use crate::error::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    /// Wrap an existing row-major buffer. Panics if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length != rows*cols");
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.matvec_prefix(x, self.rows)
    }

    /// The first `rows` entries of `self * x`.
    pub fn matvec_prefix(&self, x: &[f64], rows: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert!(rows <= self.rows);
        (0..rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `self^T * x`, computed as a row-wise axpy to stay cache-friendly.
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &r) in out.iter_mut().zip(self.row(i)) {
                *o += xi * r;
            }
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        self.matmul_by_rows(other.cols, |row, out| {
            for (k, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        })
    }

    /// `self * other^T`; every output entry is one row-row dot product.
    pub fn matmul_nt(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols);
        let n = other.rows;
        self.matmul_by_rows(n, |row, out| {
            for (j, o) in out.iter_mut().enumerate() {
                *o = dot(row, other.row(j));
            }
        })
    }

    /// `self^T * other`.
    pub fn matmul_tn(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows);
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out.row_mut(i).iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    fn matmul_by_rows(
        &self,
        out_cols: usize,
        per_row: impl Fn(&[f64], &mut [f64]) + Sync + Send,
    ) -> Mat {
        #[cfg(feature = "parallel")]
        let data: Vec<f64> = if self.rows * out_cols >= PAR_MATMUL_MIN {
            let mut data = vec![0.0; self.rows * out_cols];
            data.par_chunks_mut(out_cols)
                .enumerate()
                .for_each(|(i, out)| per_row(self.row(i), out));
            data
        } else {
            self.matmul_rows_seq(out_cols, &per_row)
        };
        #[cfg(not(feature = "parallel"))]
        let data = self.matmul_rows_seq(out_cols, &per_row);
        Mat { rows: self.rows, cols: out_cols, data }
    }

    fn matmul_rows_seq(
        &self,
        out_cols: usize,
        per_row: &(impl Fn(&[f64], &mut [f64]) + Sync + Send),
    ) -> Vec<f64> {
        let mut data = vec![0.0; self.rows * out_cols];
        for (i, out) in data.chunks_mut(out_cols).enumerate() {
            per_row(self.row(i), out);
        }
        data
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, other: &Mat, a: f64) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (s, &o) in self.data.iter_mut().zip(&other.data) {
            *s += a * o;
        }
    }

    /// Rank-one update `self += a * u * v^T`.
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], a: f64) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (i, &ui) in u.iter().enumerate() {
            let s = a * ui;
            if s == 0.0 {
                continue;
            }
            for (o, &vj) in self.row_mut(i).iter_mut().zip(v) {
                *o += s * vj;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Below this output size the rayon dispatch overhead dominates.
#[cfg(feature = "parallel")]
const PAR_MATMUL_MIN: usize = 128 * 128;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Householder QR with the sign convention `diag(R) > 0`, which makes the
/// factorization of a full-rank matrix unique.
///
/// Fails with [`Error::RankDeficient`] when some `|R[i][i]|` falls below
/// `1e-12`.
pub fn qr_positive(a: &Mat) -> Result<(Mat, Mat)> {
    assert_eq!(a.rows(), a.cols(), "qr_positive expects a square matrix");
    let n = a.rows();
    let mut r = a.clone();
    let mut q = Mat::identity(n);

    let mut v = vec![0.0; n];
    for k in 0..n {
        // Householder vector for column k at and below the diagonal.
        let mut norm_x = 0.0;
        for i in k..n {
            let x = r.get(i, k);
            norm_x += x * x;
        }
        let norm_x = norm_x.sqrt();
        if norm_x == 0.0 {
            continue; // column already zero; caught by the rank check below
        }
        let x0 = r.get(k, k);
        let alpha = if x0 >= 0.0 { -norm_x } else { norm_x };
        v[k] = x0 - alpha;
        for i in k + 1..n {
            v[i] = r.get(i, k);
        }
        let vnorm2 = dot(&v[k..], &v[k..]);
        if vnorm2 == 0.0 {
            continue;
        }
        // R <- H R with H = I - 2 v v^T / (v^T v), applied to columns k..
        for j in k..n {
            let mut s = 0.0;
            for i in k..n {
                s += v[i] * r.get(i, j);
            }
            let s = 2.0 * s / vnorm2;
            for i in k..n {
                let val = r.get(i, j) - s * v[i];
                r.set(i, j, val);
            }
        }
        // Q <- Q H (accumulate right-multiplications so Q R = A).
        for i in 0..n {
            let mut s = 0.0;
            for j in k..n {
                s += q.get(i, j) * v[j];
            }
            let s = 2.0 * s / vnorm2;
            for j in k..n {
                let val = q.get(i, j) - s * v[j];
                q.set(i, j, val);
            }
        }
        // Clear the annihilated entries exactly.
        r.set(k, k, alpha);
        for i in k + 1..n {
            r.set(i, k, 0.0);
        }
    }

    for i in 0..n {
        let d = r.get(i, i);
        if d.abs() < 1e-12 {
            return Err(Error::RankDeficient { index: i, value: d.abs() });
        }
        if d < 0.0 {
            for j in 0..n {
                r.set(i, j, -r.get(i, j));
                q.set(j, i, -q.get(j, i));
            }
        }
    }

    Ok((q, r))
}
