//! Dense reference implementations built on nalgebra, independent of the
//! crate's own matrix kernels. Shared by the integration tests and the
//! acceptance target.

#![allow(dead_code)]

use dsalign_core::{AlignmentMatrix, Mat};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn na(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn from_na(m: &DMatrix<f64>) -> Mat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Largest entrywise difference relative to the largest entry of `reference`
/// (or absolute when the reference is below one).
pub fn rel_diff(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let scale = reference.amax().max(1.0);
    (a - reference).amax() / scale
}

pub fn rel_diff_scalar(a: f64, reference: f64) -> f64 {
    (a - reference).abs() / reference.abs().max(1.0)
}

/// Plain alternating normalization to machine precision.
pub fn dense_sinkhorn(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut y = m.clone();
    for _ in 0..100_000 {
        for i in 0..n {
            let s: f64 = y.row(i).sum();
            y.row_mut(i).scale_mut(1.0 / s);
        }
        for j in 0..n {
            let s: f64 = y.column(j).sum();
            y.column_mut(j).scale_mut(1.0 / s);
        }
        let dev = (0..n).map(|i| (y.row(i).sum() - 1.0).abs()).fold(0.0, f64::max);
        if dev < 1e-14 {
            break;
        }
    }
    y
}

/// A random interior point: log-normal entries with spread `spread`, balanced.
pub fn random_point(n: usize, spread: f64, rng: &mut impl Rng) -> AlignmentMatrix {
    let m = DMatrix::from_fn(n, n, |_, _| { let g: f64 = StandardNormal.sample(rng); (spread * g).exp() });
    AlignmentMatrix::new(from_na(&dense_sinkhorn(&m)), 1e-12).expect("balanced point")
}

pub fn covariance(factor: &Mat) -> DMatrix<f64> {
    let e = na(factor);
    &e * e.transpose()
}

/// `‖YᵀC_X Y − C_Z‖² + ‖Y C_Z Yᵀ − C_X‖²` on dense n×n matrices.
pub fn dense_mba(y: &Mat, x: &Mat, z: &Mat) -> f64 {
    let (y, cx, cz) = (na(y), covariance(x), covariance(z));
    let forward = y.transpose() * &cx * &y - &cz;
    let backward = &y * &cz * y.transpose() - &cx;
    forward.norm_squared() + backward.norm_squared()
}

/// Gradient of [`dense_mba`] in `Y`, differentiated term by term.
pub fn dense_mba_grad(y: &Mat, x: &Mat, z: &Mat) -> DMatrix<f64> {
    let (y, cx, cz) = (na(y), covariance(x), covariance(z));
    let forward = y.transpose() * &cx * &y - &cz;
    let backward = &y * &cz * y.transpose() - &cx;
    // d‖YᵀAY − B‖² = 2⟨R, dYᵀAY + YᵀA dY⟩ = 4⟨A Y R, dY⟩ for symmetric A, R.
    (&cx * &y * &forward) * 4.0 + (&backward * &y * &cz) * 4.0
}

/// `−Trace(YᵀC_X Y C_Z)` on dense matrices.
pub fn dense_gw(y: &Mat, x: &Mat, z: &Mat) -> f64 {
    let (y, cx, cz) = (na(y), covariance(x), covariance(z));
    -(y.transpose() * &cx * &y * &cz).trace()
}

pub fn dense_gw_grad(y: &Mat, x: &Mat, z: &Mat) -> DMatrix<f64> {
    let (y, cx, cz) = (na(y), covariance(x), covariance(z));
    (&cx * &y * &cz) * -2.0
}

/// Central difference of `f` along `dir`.
pub fn directional_fd(f: impl Fn(&Mat) -> f64, y: &Mat, dir: &Mat, h: f64) -> f64 {
    let plus = y.add(&dir.scaled(h));
    let minus = y.sub(&dir.scaled(h));
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Fisher-orthogonal projection onto `{ξ : ξ1 = 0, ξᵀ1 = 0}`:
/// `ξ = Z − Y ⊙ (α1ᵀ + 1βᵀ)`, with `α, β` from the full 2n×2n system solved
/// by pseudo-inverse.
pub fn dense_projection(y: &Mat, z: &Mat) -> DMatrix<f64> {
    let n = y.rows();
    let (y, z) = (na(y), na(z));
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    let mut b = DVector::zeros(2 * n);
    for i in 0..n {
        for j in 0..n {
            // Row i: Σ_j (α_i + β_j) Y_ij = Σ_j Z_ij.
            a[(i, i)] += y[(i, j)];
            a[(i, n + j)] += y[(i, j)];
            // Column j: Σ_i (α_i + β_j) Y_ij = Σ_i Z_ij.
            a[(n + j, i)] += y[(i, j)];
            a[(n + j, n + j)] += y[(i, j)];
        }
        b[i] = z.row(i).sum();
        b[n + i] = z.column(i).sum();
    }
    let sol = a.svd(true, true).solve(&b, 1e-12).expect("svd solve");
    DMatrix::from_fn(n, n, |i, j| z[(i, j)] - y[(i, j)] * (sol[i] + sol[n + j]))
}

pub fn dense_fisher(y: &Mat, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let y = na(y);
    a.component_mul(b).component_div(&y).sum()
}

/// Orthogonal factor of a Gaussian matrix via QR, with signs fixed so the
/// distribution is Haar.
pub fn haar_orthogonal(d: usize, rng: &mut impl Rng) -> Mat {
    let g = na(&gaussian(d, d, rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).scale_mut(-1.0);
        }
    }
    from_na(&q)
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for v in 0..used.len() {
            if !used[v] {
                used[v] = true;
                prefix.push(v);
                rec(prefix, used, out);
                prefix.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

pub fn permutation_matrix(perm: &[usize]) -> Mat {
    let n = perm.len();
    let mut m = Mat::zeros(n, n);
    for (i, &j) in perm.iter().enumerate() {
        m[(i, j)] = 1.0;
    }
    m
}

pub fn unit_rows(m: &Mat) -> Mat {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    out
}

/// Full CSLS score matrix by brute force: every similarity row fully sorted.
pub fn dense_csls(sources: &Mat, targets: &Mat, k: usize) -> DMatrix<f64> {
    let cos = na(sources) * na(targets).transpose();
    let (m, n) = cos.shape();
    let mean_top = |mut v: Vec<f64>, k: usize| {
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let k = k.min(v.len());
        v[..k].iter().sum::<f64>() / k as f64
    };
    let r_src: Vec<f64> = (0..m).map(|i| mean_top(cos.row(i).iter().copied().collect(), k)).collect();
    let r_tgt: Vec<f64> = (0..n).map(|j| mean_top(cos.column(j).iter().copied().collect(), k)).collect();
    DMatrix::from_fn(m, n, |i, j| 2.0 * cos[(i, j)] - r_src[i] - r_tgt[j])
}

/// Targets of one score row ordered by score, ties to the lower index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx
}
