//! Alignment objectives over word covariances `C = E·Eᵀ`, evaluated through the
//! n×d embedding factors.
//!
//! With `G = XᵀY` and `H = ZᵀYᵀ` (both d×n) every Frobenius norm of an n×n
//! covariance expression reduces to norms of d×d matrices:
//!
//! ```text
//! ‖YᵀC_X Y − C_Z‖² = ‖GGᵀ‖² − 2‖GZ‖² + ‖ZᵀZ‖²
//! ‖Y C_Z Yᵀ − C_X‖² = ‖HHᵀ‖² − 2‖HX‖² + ‖XᵀX‖²
//! Trace(YᵀC_X Y C_Z) = ‖XᵀYZ‖²
//! ```
//!
//! Forming `G` and `YZ` costs O(n²d); everything else is O(nd²). Gradients
//! need exactly one n×n output buffer.

use crate::ds_manifold::AlignmentMatrix;
use crate::error::{check_dim, Error, Result};
use crate::linalg::Mat;
use crate::optimizer::CostFunction;

/// Word covariance `C = E·Eᵀ`, held as its n×d factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceOperator {
    factor: Mat,
    factor_t: Mat,
    gram: Mat,
}

impl CovarianceOperator {
    pub fn new(factor: Mat) -> Result<Self> {
        if !factor.is_finite() {
            return Err(Error::NonFiniteInput("covariance factor"));
        }
        let factor_t = factor.transpose();
        let gram = factor_t.matmul(&factor)?;
        Ok(CovarianceOperator {
            factor,
            factor_t,
            gram,
        })
    }

    /// Number of words.
    pub fn n(&self) -> usize {
        self.factor.rows()
    }

    /// Embedding dimension.
    pub fn d(&self) -> usize {
        self.factor.cols()
    }

    pub fn factor(&self) -> &Mat {
        &self.factor
    }

    /// `EᵀE` (d×d).
    pub fn gram(&self) -> &Mat {
        &self.gram
    }

    /// `C·V = E·(Eᵀ·V)` for an n×k matrix `V`.
    pub fn apply(&self, v: &Mat) -> Result<Mat> {
        check_dim("CovarianceOperator::apply", self.n(), v.rows())?;
        self.factor.matmul(&self.factor_t.matmul(v)?)
    }

    /// Largest absolute covariance entry. By Cauchy-Schwarz it is the largest
    /// squared row norm, so no n×n work is needed.
    pub fn max_abs_entry(&self) -> f64 {
        (0..self.n())
            .map(|i| self.factor.row(i).iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Covariance scaled so its largest absolute entry is one. A zero
    /// covariance is returned unchanged.
    pub fn rescaled_to_unit_max(&self) -> CovarianceOperator {
        let m = self.max_abs_entry();
        if m > 0.0 {
            self.scaled(1.0 / m)
        } else {
            self.clone()
        }
    }

    /// `s·C`, realised by scaling the factor by `√s`.
    pub fn scaled(&self, s: f64) -> CovarianceOperator {
        let r = libm::sqrt(s);
        CovarianceOperator {
            factor: self.factor.scaled(r),
            factor_t: self.factor_t.scaled(r),
            gram: self.gram.scaled(s),
        }
    }

    /// Covariance of the first `n` words.
    pub fn prefix(&self, n: usize) -> Result<CovarianceOperator> {
        if n > self.n() {
            return Err(Error::DimensionMismatch {
                context: "covariance prefix longer than vocabulary",
                expected: self.n(),
                actual: n,
            });
        }
        CovarianceOperator::new(self.factor.top_rows(n))
    }

    /// The materialised n×n covariance. Only meant for small checks.
    pub fn to_dense(&self) -> Mat {
        self.factor
            .matmul_nt(&self.factor)
            .expect("factor shapes always agree")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    /// `‖YᵀC_X Y − C_Z‖²`
    pub forward_term: f64,
    /// `‖Y C_Z Yᵀ − C_X‖²`
    pub backward_term: f64,
}

fn check_operands(y: &AlignmentMatrix, cx: &CovarianceOperator, cz: &CovarianceOperator) -> Result<()> {
    check_dim("alignment vs source vocabulary", y.n(), cx.n())?;
    check_dim("alignment vs target vocabulary", y.n(), cz.n())?;
    check_dim("source vs target embedding dimension", cx.d(), cz.d())
}

fn finite(v: f64, context: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteInput(context))
    }
}

/// Bi-directional covariance-matching cost.
pub fn mba_objective(y: &AlignmentMatrix, cx: &CovarianceOperator, cz: &CovarianceOperator) -> Result<ObjectiveValue> {
    check_operands(y, cx, cz)?;
    let ym = y.as_mat();
    let gt = ym.matmul_tn(&cx.factor)?; // Gᵀ = YᵀX, n×d
    let yz = ym.matmul(&cz.factor)?; // YZ = Hᵀ, n×d

    let ggt = gt.matmul_tn(&gt)?;
    let gz = gt.matmul_tn(&cz.factor)?;
    let forward = ggt.frobenius_sq() - 2.0 * gz.frobenius_sq() + cz.gram.frobenius_sq();

    let hht = yz.matmul_tn(&yz)?;
    let hx = yz.matmul_tn(&cx.factor)?;
    let backward = hht.frobenius_sq() - 2.0 * hx.frobenius_sq() + cx.gram.frobenius_sq();

    let forward_term = finite(forward, "mba_objective")?.max(0.0);
    let backward_term = finite(backward, "mba_objective")?.max(0.0);
    Ok(ObjectiveValue {
        total: forward_term + backward_term,
        forward_term,
        backward_term,
    })
}

/// Euclidean gradient `4·C_X Y (YᵀC_X Y − C_Z) + 4·(Y C_Z Yᵀ − C_X) Y C_Z`.
///
/// Expanded through the factors this is `4·(X·A + B·Zᵀ)` with
/// `A = (GGᵀ)G − 2(GZ)Zᵀ` and `B = (YZ)(HHᵀ)`, evaluated as a single
/// `[X | B]·[Aᵀ | Z]ᵀ` product.
pub fn mba_egrad(y: &AlignmentMatrix, cx: &CovarianceOperator, cz: &CovarianceOperator) -> Result<Mat> {
    check_operands(y, cx, cz)?;
    let ym = y.as_mat();
    let gt = ym.matmul_tn(&cx.factor)?;
    let yz = ym.matmul(&cz.factor)?;

    let ggt = gt.matmul_tn(&gt)?;
    let gz = gt.matmul_tn(&cz.factor)?;
    // Aᵀ = Gᵀ(GGᵀ) − 2·Z(GZ)ᵀ
    let mut at = gt.matmul(&ggt)?;
    at.axpy(-2.0, &cz.factor.matmul_nt(&gz)?);

    let hht = yz.matmul_tn(&yz)?;
    let b = yz.matmul(&hht)?;

    let left = Mat::hstack(&cx.factor, &b)?;
    let right = Mat::hstack(&at, &cz.factor)?;
    let mut grad = left.matmul_nt(&right)?;
    grad.scale_mut(4.0);
    if !grad.is_finite() {
        return Err(Error::NonFiniteInput("mba_egrad"));
    }
    Ok(grad)
}

/// Gromov-Wasserstein inner-product cost `−Trace(YᵀC_X Y C_Z) = −‖XᵀYZ‖²`.
pub fn gw_objective(y: &AlignmentMatrix, cx: &CovarianceOperator, cz: &CovarianceOperator) -> Result<f64> {
    check_operands(y, cx, cz)?;
    let m = gw_core(y.as_mat(), cx, cz)?;
    finite(-m.frobenius_sq(), "gw_objective")
}

/// `−2·C_X Y C_Z`.
pub fn gw_egrad(y: &AlignmentMatrix, cx: &CovarianceOperator, cz: &CovarianceOperator) -> Result<Mat> {
    check_operands(y, cx, cz)?;
    let mut grad = cross_covariance_product(y.as_mat(), cx, cz)?;
    grad.scale_mut(-2.0);
    Ok(grad)
}

/// `XᵀYZ` (d×d) for any square `y` of matching size.
fn gw_core(y: &Mat, cx: &CovarianceOperator, cz: &CovarianceOperator) -> Result<Mat> {
    cx.factor.matmul_tn(&y.matmul(&cz.factor)?)
}

/// `C_X·P·C_Z` for an arbitrary n×n matrix `P` (not necessarily doubly
/// stochastic), through the factors.
pub fn cross_covariance_product(p: &Mat, cx: &CovarianceOperator, cz: &CovarianceOperator) -> Result<Mat> {
    check_dim("cross_covariance_product rows", cx.n(), p.rows())?;
    check_dim("cross_covariance_product cols", cz.n(), p.cols())?;
    check_dim("cross_covariance_product dims", cx.d(), cz.d())?;
    let inner = gw_core(p, cx, cz)?.matmul(&cz.factor_t)?;
    let out = cx.factor.matmul(&inner)?;
    if !out.is_finite() {
        return Err(Error::NonFiniteInput("cross_covariance_product"));
    }
    Ok(out)
}

/// The bi-directional covariance-matching problem as a [`CostFunction`].
#[derive(Debug, Clone)]
pub struct MbaCost {
    pub source: CovarianceOperator,
    pub target: CovarianceOperator,
}

impl MbaCost {
    /// n×n buffers allocated by one gradient evaluation.
    pub const GRADIENT_NN_BUFFERS: usize = 1;
}

impl CostFunction for MbaCost {
    fn cost(&self, y: &AlignmentMatrix) -> Result<f64> {
        Ok(mba_objective(y, &self.source, &self.target)?.total)
    }

    fn egrad(&self, y: &AlignmentMatrix) -> Result<Mat> {
        mba_egrad(y, &self.source, &self.target)
    }
}

/// The Gromov-Wasserstein cost as a [`CostFunction`], for running the
/// Riemannian optimizer on it directly.
#[derive(Debug, Clone)]
pub struct GwCost {
    pub source: CovarianceOperator,
    pub target: CovarianceOperator,
}

impl GwCost {
    pub const GRADIENT_NN_BUFFERS: usize = 1;
}

impl CostFunction for GwCost {
    fn cost(&self, y: &AlignmentMatrix) -> Result<f64> {
        gw_objective(y, &self.source, &self.target)
    }

    fn egrad(&self, y: &AlignmentMatrix) -> Result<Mat> {
        gw_egrad(y, &self.source, &self.target)
    }
}
