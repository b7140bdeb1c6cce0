//! Row-major dense matrices and the handful of kernels the alignment code needs.
//!
//! Products that produce an n×n result from n×d factors dominate the cost of
//! every objective evaluation, so they are written with contiguous inner loops
//! and, under the `parallel` feature, split across output rows.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{check_dim, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Mat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "Mat::from_vec: length mismatch");
        Mat { rows, cols, data }
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

    /// `[a | b]` for matrices with the same row count.
    pub fn hstack(a: &Mat, b: &Mat) -> Result<Mat> {
        check_dim("hstack rows", a.rows, b.rows)?;
        let cols = a.cols + b.cols;
        let mut data = Vec::with_capacity(a.rows * cols);
        for i in 0..a.rows {
            data.extend_from_slice(a.row(i));
            data.extend_from_slice(b.row(i));
        }
        Ok(Mat::from_vec(a.rows, cols, data))
    }

    /// `[a ; b]` for matrices with the same column count.
    pub fn vstack(a: &Mat, b: &Mat) -> Result<Mat> {
        check_dim("vstack cols", a.cols, b.cols)?;
        let mut data = Vec::with_capacity((a.rows + b.rows) * a.cols);
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(Mat::from_vec(a.rows + b.rows, a.cols, data))
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "Mat::from_rows: ragged rows");
            data.extend_from_slice(row);
        }
        Mat {
            rows: r,
            cols: c,
            data,
        }
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
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
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// First `n` rows as a new matrix.
    pub fn top_rows(&self, n: usize) -> Mat {
        assert!(n <= self.rows);
        Mat::from_vec(n, self.cols, self.data[..n * self.cols].to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for (j, &v) in self.row(i).iter().enumerate() {
                t.data[j * self.rows + i] = v;
            }
        }
        t
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Mat, mut f: impl FnMut(f64, f64) -> f64) -> Mat {
        assert_eq!(self.shape(), other.shape(), "Mat::zip_map: shape mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale_mut(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled(&self, s: f64) -> Mat {
        self.map(|v| v * s)
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Mat) {
        assert_eq!(self.shape(), other.shape(), "Mat::axpy: shape mismatch");
        for (x, &y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn add(&self, other: &Mat) -> Mat {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Mat) -> Mat {
        self.zip_map(other, |a, b| a * b)
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape(), "Mat::dot: shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius(&self) -> f64 {
        libm::sqrt(self.frobenius_sq())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (acc, v) in s.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        s
    }

    /// `self · v`
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "Mat::matvec: length mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ · v`
    pub fn t_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "Mat::t_matvec: length mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                for (o, &a) in out.iter_mut().zip(self.row(i)) {
                    *o += vi * a;
                }
            }
        }
        out
    }

    /// `self · b`
    pub fn matmul(&self, b: &Mat) -> Result<Mat> {
        check_dim("matmul inner dimension", self.cols, b.rows)?;
        let mut out = Mat::zeros(self.rows, b.cols);
        fill_rows(&mut out, |i, out_row| {
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    for (o, &bv) in out_row.iter_mut().zip(b.row(k)) {
                        *o += a * bv;
                    }
                }
            }
        });
        Ok(out)
    }

    /// `self · bᵀ`
    pub fn matmul_nt(&self, b: &Mat) -> Result<Mat> {
        check_dim("matmul_nt inner dimension", self.cols, b.cols)?;
        let mut out = Mat::zeros(self.rows, b.rows);
        fill_rows(&mut out, |i, out_row| {
            let a = self.row(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                *o = dot(a, b.row(j));
            }
        });
        Ok(out)
    }

    /// `selfᵀ · b`, accumulated row by row so `self` is read once and no
    /// transpose is materialised.
    pub fn matmul_tn(&self, b: &Mat) -> Result<Mat> {
        check_dim("matmul_tn inner dimension", self.rows, b.rows)?;
        let mut out = Mat::zeros(self.cols, b.cols);
        let q = b.cols;
        fill_row_blocks(&mut out, TN_BLOCK_ROWS, |first, block| {
            let width = block.len() / q.max(1);
            for i in 0..self.rows {
                let a = &self.row(i)[first..first + width];
                let b_row = b.row(i);
                for (&av, out_row) in a.iter().zip(block.chunks_mut(q)) {
                    if av != 0.0 {
                        for (o, &bv) in out_row.iter_mut().zip(b_row) {
                            *o += av * bv;
                        }
                    }
                }
            }
        });
        Ok(out)
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Runs `f(row_index, row)` over every output row.
#[cfg(feature = "parallel")]
pub(crate) fn fill_rows(out: &mut Mat, f: impl Fn(usize, &mut [f64]) + Sync + Send) {
    use rayon::prelude::*;
    let cols = out.cols;
    if cols == 0 {
        return;
    }
    out.data
        .par_chunks_mut(cols)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn fill_rows(out: &mut Mat, f: impl Fn(usize, &mut [f64])) {
    let cols = out.cols;
    if cols == 0 {
        return;
    }
    out.data
        .chunks_mut(cols)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// Output rows per task in [`Mat::matmul_tn`].
const TN_BLOCK_ROWS: usize = 64;

/// Runs `f(first_row, rows)` over consecutive blocks of `block_rows` output
/// rows. Each entry is produced by exactly one call, so results do not depend
/// on how blocks are scheduled.
#[cfg(feature = "parallel")]
fn fill_row_blocks(out: &mut Mat, block_rows: usize, f: impl Fn(usize, &mut [f64]) + Sync + Send) {
    use rayon::prelude::*;
    let cols = out.cols;
    if cols == 0 {
        return;
    }
    out.data
        .par_chunks_mut(cols * block_rows)
        .enumerate()
        .for_each(|(k, block)| f(k * block_rows, block));
}

#[cfg(not(feature = "parallel"))]
fn fill_row_blocks(out: &mut Mat, block_rows: usize, f: impl Fn(usize, &mut [f64])) {
    let cols = out.cols;
    if cols == 0 {
        return;
    }
    out.data
        .chunks_mut(cols * block_rows)
        .enumerate()
        .for_each(|(k, block)| f(k * block_rows, block));
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
///
/// Returns `None` when a pivot drops below `min_pivot` (relative to the
/// largest diagonal entry).
pub fn cholesky(a: &Mat, min_pivot: f64) -> Option<Mat> {
    let n = a.rows;
    debug_assert!(a.is_square());
    let max_diag = (0..n).fold(0.0f64, |m, i| m.max(a[(i, i)].abs()));
    let floor = min_pivot * max_diag.max(f64::MIN_POSITIVE);
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let lj = &l.data[j * n..j * n + j];
        let d = a[(j, j)] - dot(lj, lj);
        if !(d > floor) {
            return None;
        }
        let djj = libm::sqrt(d);
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let s = a[(i, j)] - dot(&l.data[i * n..i * n + j], &l.data[j * n..j * n + j]);
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` given the lower factor.
pub fn cholesky_solve(l: &Mat, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s = b[i] - dot(&l.row(i)[..i], &y[..i]);
        y[i] = s / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Thin singular value decomposition `a = U·diag(s)·Vᵀ` of a square matrix.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Mat,
    pub singular_values: Vec<f64>,
    pub v: Mat,
}

/// One-sided Jacobi SVD for square matrices.
///
/// Singular values come back in descending order. Columns of `U` belonging to
/// zero singular values are completed to an orthonormal basis, so `U` and `V`
/// are always orthogonal.
pub fn svd_square(a: &Mat) -> Svd {
    assert!(a.is_square(), "svd_square: matrix must be square");
    let n = a.rows;
    // Columns of the working matrices are stored as rows for contiguous access.
    let mut w = a.transpose();
    let mut v = Mat::identity(n);
    let eps = f64::EPSILON;

    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let wp = w.row(p);
                    let wq = w.row(q);
                    (dot(wp, wp), dot(wq, wq), dot(wp, wq))
                };
                if gamma == 0.0 || gamma.abs() <= eps * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate_rows(&mut w, p, q, c, s);
                rotate_rows(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| libm::sqrt(dot(w.row(j), w.row(j)))).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let smax = norms.iter().cloned().fold(0.0, f64::max);
    let tiny = smax * (n as f64) * eps;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut singular_values = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for &j in &order {
        let sigma = norms[j];
        v_cols.push(v.row(j).to_vec());
        if sigma > tiny && sigma > 0.0 {
            u_cols.push(w.row(j).iter().map(|x| x / sigma).collect());
            singular_values.push(sigma);
        } else {
            deficient.push(u_cols.len());
            u_cols.push(vec![0.0; n]);
            singular_values.push(if sigma > 0.0 { sigma } else { 0.0 });
        }
    }
    for slot in deficient {
        u_cols[slot] = orthonormal_complement(&u_cols, slot, n);
    }

    let mut u = Mat::zeros(n, n);
    let mut vm = Mat::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            u[(i, j)] = u_cols[j][i];
            vm[(i, j)] = v_cols[j][i];
        }
    }
    Svd {
        u,
        singular_values,
        v: vm,
    }
}

fn rotate_rows(m: &mut Mat, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols;
    let (head, tail) = m.data.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let a = *x;
        let b = *y;
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// A unit vector orthogonal to every nonzero column in `cols` except `skip`.
fn orthonormal_complement(cols: &[Vec<f64>], skip: usize, n: usize) -> Vec<f64> {
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = 0.0;
    for e in 0..n {
        let mut cand = vec![0.0; n];
        cand[e] = 1.0;
        // Two Gram-Schmidt passes for stability.
        for _ in 0..2 {
            for (k, c) in cols.iter().enumerate() {
                if k == skip {
                    continue;
                }
                let proj = dot(&cand, c);
                for (x, y) in cand.iter_mut().zip(c) {
                    *x -= proj * y;
                }
            }
        }
        let norm = libm::sqrt(dot(&cand, &cand));
        if norm > best_norm {
            best_norm = norm;
            best = Some(cand);
        }
        if best_norm > 0.5 {
            break;
        }
    }
    let mut v = best.unwrap_or_else(|| vec![0.0; n]);
    if best_norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= best_norm);
    }
    v
}
