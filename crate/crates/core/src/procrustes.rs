//! Orthogonal Procrustes: the orthogonal `W` minimising `‖X·W − Y·Z‖_F`.
//!
//! The minimiser is `U·Vᵀ` where `U·Σ·Vᵀ` is the SVD of `M = Xᵀ·Y·Z`.

use alloc::format;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{svd_square, Mat};

/// Singular values below this fraction of the largest flag a rank-deficient fit.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// An orthogonal d×d map applied on the right: `e ↦ e·W`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    matrix: Mat,
}

impl LinearMap {
    /// Checks `WᵀW = I` entrywise within `tol`.
    pub fn new(matrix: Mat, tol: f64) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                context: "linear map must be square",
                expected: matrix.rows(),
                actual: matrix.cols(),
            });
        }
        let err = orthogonality_error(&matrix);
        if !(err <= tol) {
            return Err(Error::InvalidArgument(format!("map is not orthogonal (error {err:e})")));
        }
        Ok(LinearMap { matrix })
    }

    pub fn identity(d: usize) -> Self {
        LinearMap {
            matrix: Mat::identity(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn into_matrix(self) -> Mat {
        self.matrix
    }

    pub fn transpose(&self) -> LinearMap {
        LinearMap {
            matrix: self.matrix.transpose(),
        }
    }

    /// Maps every row of `embeddings`.
    pub fn apply(&self, embeddings: &Mat) -> Result<Mat> {
        embeddings.matmul(&self.matrix)
    }
}

/// Largest entry of `|WᵀW − I|`.
pub fn orthogonality_error(w: &Mat) -> f64 {
    let wtw = w.matmul_tn(w).expect("square matrix");
    wtw.sub(&Mat::identity(w.rows())).max_abs()
}

#[derive(Debug, Clone)]
pub struct ProcrustesSolution {
    pub map: LinearMap,
    pub singular_values: alloc::vec::Vec<f64>,
    /// The smallest singular value of `XᵀYZ` is below `RANK_TOLERANCE` times the largest.
    pub rank_deficient: bool,
}

/// Solves the Procrustes problem for a soft or hard alignment `y` (n×n,
/// nonnegative entries).
pub fn procrustes_solve(x: &Mat, y: &Mat, z: &Mat) -> Result<ProcrustesSolution> {
    check_dim("procrustes: alignment rows vs source words", x.rows(), y.rows())?;
    check_dim("procrustes: alignment cols vs target words", z.rows(), y.cols())?;
    check_dim("procrustes: embedding dimension", x.cols(), z.cols())?;
    if !x.is_finite() || !z.is_finite() || !y.is_finite() {
        return Err(Error::NonFiniteInput("procrustes_solve"));
    }
    let m = x.matmul_tn(&y.matmul(z)?)?;
    solve_from_cross(&m)
}

/// Procrustes for a hard alignment: source row `i` is paired with target row
/// `perm[i]`.
pub fn procrustes_from_permutation(x: &Mat, perm: &[usize], z: &Mat) -> Result<ProcrustesSolution> {
    check_dim("procrustes: permutation length", x.rows(), perm.len())?;
    check_dim("procrustes: embedding dimension", x.cols(), z.cols())?;
    let d = x.cols();
    let mut m = Mat::zeros(d, d);
    for (i, &j) in perm.iter().enumerate() {
        if j >= z.rows() {
            return Err(Error::InvalidArgument(format!("permutation target {j} out of range")));
        }
        let zr = z.row(j);
        for (p, &xp) in x.row(i).iter().enumerate() {
            for (o, &zq) in m.row_mut(p).iter_mut().zip(zr) {
                *o += xp * zq;
            }
        }
    }
    solve_from_cross(&m)
}

fn solve_from_cross(m: &Mat) -> Result<ProcrustesSolution> {
    let svd = svd_square(m);
    let w = svd.u.matmul_nt(&svd.v)?;
    let smax = svd.singular_values.first().copied().unwrap_or(0.0);
    let smin = svd.singular_values.last().copied().unwrap_or(0.0);
    let rank_deficient = !(smin >= RANK_TOLERANCE * smax) || smax == 0.0;
    if rank_deficient {
        log::warn!("Procrustes cross-covariance is rank deficient (σ_min {smin:e}, σ_max {smax:e})");
    }
    Ok(ProcrustesSolution {
        map: LinearMap { matrix: w },
        singular_values: svd.singular_values,
        rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn self_alignment_gives_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let x = Mat::from_fn(10, 4, |_, _| rng.random_range(-1.0..1.0));
        let sol = procrustes_solve(&x, &Mat::identity(10), &x).unwrap();
        assert!(sol.map.matrix().sub(&Mat::identity(4)).max_abs() < 1e-8);
        assert!(!sol.rank_deficient);
        let hard = procrustes_from_permutation(&x, &(0..10).collect::<alloc::vec::Vec<_>>(), &x).unwrap();
        assert!(hard.map.matrix().sub(&Mat::identity(4)).max_abs() < 1e-8);
    }

    #[test]
    fn rank_deficiency_is_flagged_but_map_is_orthogonal() {
        let x = Mat::from_fn(5, 3, |i, j| if j == 0 { i as f64 } else { 0.0 });
        let sol = procrustes_solve(&x, &Mat::identity(5), &x).unwrap();
        assert!(sol.rank_deficient);
        assert!(orthogonality_error(sol.map.matrix()) < 1e-8);
    }

    #[test]
    fn shape_errors() {
        let x = Mat::zeros(4, 3);
        assert!(procrustes_solve(&x, &Mat::identity(5), &x).is_err());
        assert!(procrustes_solve(&x, &Mat::identity(4), &Mat::zeros(4, 2)).is_err());
        assert!(procrustes_from_permutation(&x, &[0, 1, 2, 9], &x).is_err());
        assert!(LinearMap::new(Mat::filled(2, 2, 1.0), 1e-8).is_err());
    }
}
