//! Geometry of the manifold of strictly positive doubly stochastic matrices.
//!
//! Points are n×n matrices with positive entries whose rows and columns sum to
//! one. The manifold carries the Fisher information metric
//! `<ξ, η>_Y = Σ ξ_ij η_ij / Y_ij`, and its tangent space at every point is the
//! set of matrices with zero row sums and zero column sums.
//!
//! The orthogonal projection onto the tangent space subtracts a normal
//! component `(α 1ᵀ + 1 βᵀ) ⊙ Y`. The pair `(α, β)` solves
//!
//! ```text
//! [ D_r  Y  ] [α]   [Z 1 ]
//! [ Yᵀ  D_c ] [β] = [Zᵀ1 ]
//! ```
//!
//! with `D_r`, `D_c` the row and column sums of `Y`. Eliminating `α` leaves
//! `(D_c − Yᵀ D_r⁻¹ Y) β = Zᵀ1 − Yᵀ D_r⁻¹ Z1`, whose only null direction is the
//! constant vector. [`TangentSpace`] removes that direction by adding `11ᵀ/n`
//! and solves either by Cholesky (small n) or by preconditioned conjugate
//! gradient with O(n²) matrix-vector products (large n).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{cholesky, cholesky_solve, dot, Mat};
use crate::rng::{substream, Substream};

/// Largest exponent the retraction will feed to `exp`.
pub const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldConfig {
    /// Maximum allowed deviation of any row or column sum from one.
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
    /// Sinkhorn sweeps spent inside one retraction.
    pub retraction_max_iter: usize,
    /// A retraction whose balancing stops short of `sinkhorn_tol` is still
    /// accepted when its marginal deviation is within this bound. Near a
    /// vertex the balancing rate degrades, and insisting on full precision
    /// there only makes the line search reject good steps.
    pub retraction_accept_tol: f64,
    /// Entries below this are raised to it before normalization.
    pub min_entry: f64,
    /// Tangent projections at sizes up to this use a dense Cholesky solve.
    pub dense_solve_max_n: usize,
    /// Relative residual target of the iterative projection solver.
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        ManifoldConfig {
            sinkhorn_tol: 1e-10,
            sinkhorn_max_iter: 10_000,
            retraction_max_iter: 1_000,
            retraction_accept_tol: 1e-6,
            min_entry: 1e-16,
            dense_solve_max_n: 384,
            cg_tol: 1e-12,
            cg_max_iter: 5_000,
        }
    }
}

impl ManifoldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sinkhorn_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sinkhorn_tol must be > 0, got {}",
                self.sinkhorn_tol
            )));
        }
        if self.sinkhorn_max_iter < 1 || self.retraction_max_iter < 1 {
            return Err(Error::InvalidArgument("Sinkhorn iteration limits must be >= 1".into()));
        }
        if !(self.retraction_accept_tol >= self.sinkhorn_tol) {
            return Err(Error::InvalidArgument(format!(
                "retraction_accept_tol must be >= sinkhorn_tol, got {}",
                self.retraction_accept_tol
            )));
        }
        if !(self.min_entry >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "min_entry must be >= 0, got {}",
                self.min_entry
            )));
        }
        if !(self.cg_tol > 0.0) || self.cg_max_iter < 1 {
            return Err(Error::InvalidArgument("invalid projection solver settings".into()));
        }
        Ok(())
    }
}

/// A strictly positive doubly stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMatrix {
    entries: Mat,
}

impl AlignmentMatrix {
    /// Wraps `entries` after checking positivity and marginals within `tol`.
    pub fn new(entries: Mat, tol: f64) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::DimensionMismatch {
                context: "alignment matrix must be square",
                expected: entries.rows(),
                actual: entries.cols(),
            });
        }
        if !entries.as_slice().iter().all(|&v| v.is_finite() && v > 0.0) {
            return Err(Error::NonFiniteInput("alignment matrix entries"));
        }
        let dev = marginal_deviation(&entries);
        if dev > tol {
            return Err(Error::InvalidArgument(format!(
                "matrix is not doubly stochastic (marginal deviation {dev:e} > {tol:e})"
            )));
        }
        Ok(AlignmentMatrix { entries })
    }

    pub(crate) fn from_trusted(entries: Mat) -> Self {
        debug_assert!(entries.is_square());
        AlignmentMatrix { entries }
    }

    pub fn n(&self) -> usize {
        self.entries.rows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.entries
    }

    pub fn into_mat(self) -> Mat {
        self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// `Yᵀ`, which aligns the target space back to the source space.
    pub fn transpose(&self) -> AlignmentMatrix {
        AlignmentMatrix {
            entries: self.entries.transpose(),
        }
    }

    pub fn marginal_deviation(&self) -> f64 {
        marginal_deviation(&self.entries)
    }
}

/// A matrix with zero row sums and zero column sums.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    entries: Mat,
}

impl TangentVector {
    pub fn zeros(n: usize) -> Self {
        TangentVector {
            entries: Mat::zeros(n, n),
        }
    }

    /// Wraps `entries` after checking that every marginal is within `tol` of zero.
    pub fn new(entries: Mat, tol: f64) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::DimensionMismatch {
                context: "tangent vector must be square",
                expected: entries.rows(),
                actual: entries.cols(),
            });
        }
        if !entries.is_finite() {
            return Err(Error::NonFiniteInput("tangent vector entries"));
        }
        let dev = max_abs_marginal(&entries);
        if dev > tol {
            return Err(Error::InvalidArgument(format!(
                "matrix is not tangent (marginal {dev:e} > {tol:e})"
            )));
        }
        Ok(TangentVector { entries })
    }

    pub(crate) fn from_trusted(entries: Mat) -> Self {
        TangentVector { entries }
    }

    pub fn n(&self) -> usize {
        self.entries.rows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.entries
    }

    pub fn into_mat(self) -> Mat {
        self.entries
    }

    pub fn scaled(&self, s: f64) -> TangentVector {
        TangentVector {
            entries: self.entries.scaled(s),
        }
    }

    /// `a·self + b·other`; both must live in the same tangent space.
    pub fn lin_comb(&self, a: f64, other: &TangentVector, b: f64) -> TangentVector {
        let entries = self.entries.zip_map(&other.entries, |x, y| a * x + b * y);
        TangentVector { entries }
    }

    /// Largest absolute row or column sum.
    pub fn max_marginal(&self) -> f64 {
        max_abs_marginal(&self.entries)
    }
}

pub fn marginal_deviation(m: &Mat) -> f64 {
    let rows = m.row_sums().into_iter().map(|s| (s - 1.0).abs());
    let cols = m.col_sums().into_iter().map(|s| (s - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

fn max_abs_marginal(m: &Mat) -> f64 {
    m.row_sums()
        .into_iter()
        .chain(m.col_sums())
        .fold(0.0, |acc, s| acc.max(s.abs()))
}

/// Projects a positive matrix onto the doubly stochastic matrices by
/// alternating row and column normalization.
pub fn sinkhorn_project(m: &Mat, cfg: &ManifoldConfig) -> Result<AlignmentMatrix> {
    let (y, deviation) = sinkhorn_balance(m, cfg, cfg.sinkhorn_max_iter, Balancing::Sweeps)?;
    if deviation <= cfg.sinkhorn_tol {
        return Ok(AlignmentMatrix::from_trusted(y));
    }
    log::debug!("sinkhorn_project: deviation {deviation:e} after {} iterations", cfg.sinkhorn_max_iter);
    Err(Error::NonConvergence {
        context: "sinkhorn_project",
        iterations: cfg.sinkhorn_max_iter,
        deviation,
    })
}

/// Sinkhorn projection that, when `cfg.sinkhorn_max_iter` sweeps fall short
/// of `cfg.sinkhorn_tol`, still accepts a result within
/// `cfg.retraction_accept_tol`. Used to round nearly-vertex plans.
pub fn sinkhorn_project_lenient(m: &Mat, cfg: &ManifoldConfig) -> Result<AlignmentMatrix> {
    let (y, deviation) = sinkhorn_balance(m, cfg, cfg.sinkhorn_max_iter, Balancing::Newton)?;
    if deviation <= cfg.retraction_accept_tol {
        return Ok(AlignmentMatrix::from_trusted(y));
    }
    Err(Error::NonConvergence {
        context: "sinkhorn_project",
        iterations: cfg.sinkhorn_max_iter,
        deviation,
    })
}

/// Sinkhorn sweeps before balancing switches to Newton steps.
const NEWTON_SWITCH: usize = 20;
/// Newton steps allowed before falling back to plain sweeps.
const NEWTON_MAX_STEPS: usize = 30;
/// Step halvings tried per Newton step.
const NEWTON_MAX_HALVINGS: usize = 8;
/// Marginal deviation the Newton mode aims for. Balancing a point that is
/// already on the manifold then moves it only at rounding level, so the
/// retraction curve starts where the iterate is and tiny decreases stay
/// measurable in the line search.
const POLISH_TOL: f64 = 1e-14;

/// How [`sinkhorn_balance`] reaches the target marginals.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Balancing {
    /// Plain alternating row and column scaling.
    Sweeps,
    /// A few sweeps, then Newton steps on the log-scalings.
    ///
    /// Sinkhorn converges slowly on nearly decomposable matrices, which is
    /// exactly what iterates close to a permutation look like. The Newton
    /// system is the tangent-projection system at the current iterate, so it
    /// reuses the same Schur-complement solver.
    Newton,
}

/// Sinkhorn-Knopp balancing until the marginal deviation drops to
/// `cfg.sinkhorn_tol` or `max_iter` sweeps have run. Returns the last iterate
/// and its deviation.
///
/// The iterate is kept in factored form `diag(u)·K·diag(v)`, so one sweep is
/// two matrix-vector products; after the column update the columns are exact
/// and the row sums `u ⊙ (K v)` measure the remaining error. Every update is a
/// diagonal scaling of the input, so both modes converge to the same matrix.
fn sinkhorn_balance(m: &Mat, cfg: &ManifoldConfig, max_iter: usize, mode: Balancing) -> Result<(Mat, f64)> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            context: "sinkhorn_project requires a square matrix",
            expected: m.rows(),
            actual: m.cols(),
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFiniteInput("sinkhorn_project"));
    }
    let kernel = m.map(|v| if v < cfg.min_entry { cfg.min_entry } else { v });
    if !kernel.as_slice().iter().all(|&v| v > 0.0) {
        return Err(Error::NonFiniteInput("sinkhorn_project"));
    }
    let (first_budget, target) = match mode {
        Balancing::Sweeps => (max_iter, cfg.sinkhorn_tol),
        Balancing::Newton => (max_iter.min(NEWTON_SWITCH), cfg.sinkhorn_tol.min(POLISH_TOL)),
    };
    let deviation = marginal_deviation(&kernel);
    if deviation <= target {
        return Ok((kernel, deviation));
    }
    let (mut y, mut deviation, mut sweeps) = scaling_sweeps(kernel, target, first_budget)?;
    if mode == Balancing::Newton && deviation > target {
        let (newton, newton_deviation, steps) = newton_balance(y, deviation, target, cfg);
        log::trace!("sinkhorn: {steps} newton steps, deviation {newton_deviation:.3e}");
        (y, deviation) = (newton, newton_deviation);
        if deviation > cfg.sinkhorn_tol && sweeps < max_iter {
            let more;
            (y, deviation, more) = scaling_sweeps(y, cfg.sinkhorn_tol, max_iter - sweeps)?;
            sweeps += more;
        }
    }
    log::trace!("sinkhorn: {sweeps} sweeps, deviation {deviation:.3e}");
    Ok((y, deviation))
}

/// Alternating scaling of a positive matrix until the deviation reaches `tol`
/// or `max_iter` sweeps have run. Returns the scaled matrix, its deviation,
/// and the sweeps used.
fn scaling_sweeps(kernel: Mat, tol: f64, max_iter: usize) -> Result<(Mat, f64, usize)> {
    let n = kernel.rows();
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; n];
    let mut row_sums = kernel.matvec(&v);
    let mut sweeps = 0;
    while sweeps < max_iter {
        for (ui, r) in u.iter_mut().zip(&row_sums) {
            *ui = 1.0 / r;
        }
        let col_sums = kernel.t_matvec(&u);
        for (vj, c) in v.iter_mut().zip(&col_sums) {
            *vj = 1.0 / c;
        }
        if !u.iter().chain(&v).all(|x| x.is_finite() && *x > 0.0) {
            return Err(Error::NonFiniteInput("sinkhorn_project"));
        }
        sweeps += 1;
        row_sums = kernel.matvec(&v);
        let row_error = u.iter().zip(&row_sums).map(|(ui, r)| (ui * r - 1.0).abs()).fold(0.0, f64::max);
        if row_error <= 0.5 * tol {
            break;
        }
    }
    let mut y = kernel;
    for (i, ui) in u.iter().enumerate() {
        for (e, vj) in y.row_mut(i).iter_mut().zip(&v) {
            *e *= ui * vj;
        }
    }
    let deviation = marginal_deviation(&y);
    if !deviation.is_finite() {
        return Err(Error::NonFiniteInput("sinkhorn_project"));
    }
    Ok((y, deviation, sweeps))
}

/// Damped Newton iteration on the log-scalings `a, b` of
/// `Y ⊙ exp(a 1ᵀ + 1 bᵀ)`. The linearised marginal equations
/// `Σ_j Y_ij (a_i + b_j) = 1 − r_i`, `Σ_i Y_ij (a_i + b_j) = 1 − c_j` are
/// the tangent-projection system at `Y`. Stops when the deviation reaches
/// `tol`, or returns the best iterate found when a step fails to reduce it.
fn newton_balance(mut y: Mat, mut deviation: f64, tol: f64, cfg: &ManifoldConfig) -> (Mat, f64, usize) {
    let n = y.rows();
    let mut steps = 0;
    while steps < NEWTON_MAX_STEPS && deviation > tol {
        let point = AlignmentMatrix::from_trusted(y);
        let solved = TangentSpace::new(&point, cfg).and_then(|space| {
            let r: Vec<f64> = space.row_sums.iter().map(|s| 1.0 - s).collect();
            let c: Vec<f64> = space.col_sums.iter().map(|s| 1.0 - s).collect();
            space.multipliers(&r, &c)
        });
        y = point.into_mat();
        let Ok((a, b)) = solved else { break };
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..NEWTON_MAX_HALVINGS {
            let mut trial = y.clone();
            for i in 0..n {
                for (e, bj) in trial.row_mut(i).iter_mut().zip(&b) {
                    *e *= libm::exp(scale * (a[i] + bj));
                }
            }
            let trial_deviation = marginal_deviation(&trial);
            if trial_deviation < deviation && trial.as_slice().iter().all(|&v| v > 0.0 && v.is_finite()) {
                accepted = Some((trial, trial_deviation));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, next_deviation)) = accepted else { break };
        y = next;
        deviation = next_deviation;
        steps += 1;
    }
    (y, deviation, steps)
}

/// Fisher inner product `Σ ξ_ij η_ij / Y_ij`.
pub fn fisher_inner(y: &AlignmentMatrix, xi: &TangentVector, eta: &TangentVector) -> Result<f64> {
    check_dim("fisher_inner (xi)", y.n(), xi.n())?;
    check_dim("fisher_inner (eta)", y.n(), eta.n())?;
    Ok(fisher_inner_raw(y.as_mat(), xi.as_mat(), eta.as_mat()))
}

pub fn fisher_norm(y: &AlignmentMatrix, xi: &TangentVector) -> Result<f64> {
    Ok(libm::sqrt(fisher_inner(y, xi, xi)?))
}

pub(crate) fn fisher_inner_raw(y: &Mat, a: &Mat, b: &Mat) -> f64 {
    y.as_slice()
        .iter()
        .zip(a.as_slice())
        .zip(b.as_slice())
        .map(|((&yv, &av), &bv)| av * bv / yv)
        .sum()
}

enum Solver {
    Dense(Mat),
    Iterative { precond: Vec<f64> },
}

/// The tangent space at a fixed point, with the projection system factored once.
///
/// Both the Riemannian gradient and the vector transport into a point reuse the
/// same factorization.
pub struct TangentSpace<'a> {
    y: &'a AlignmentMatrix,
    row_sums: Vec<f64>,
    col_sums: Vec<f64>,
    solver: Solver,
    cg_tol: f64,
    cg_max_iter: usize,
}

impl<'a> TangentSpace<'a> {
    pub fn new(y: &'a AlignmentMatrix, cfg: &ManifoldConfig) -> Result<Self> {
        let n = y.n();
        let ym = y.as_mat();
        let row_sums = ym.row_sums();
        let col_sums = ym.col_sums();
        let inv_n = 1.0 / n as f64;
        let solver = if n <= cfg.dense_solve_max_n {
            let scaled = Mat::from_fn(n, n, |i, j| ym[(i, j)] / libm::sqrt(row_sums[i]));
            let mut schur = scaled.matmul_tn(&scaled)?;
            schur.scale_mut(-1.0);
            for i in 0..n {
                for j in 0..n {
                    schur[(i, j)] += inv_n;
                }
                schur[(i, i)] += col_sums[i];
            }
            let l = cholesky(&schur, 1e-15).ok_or(Error::SingularSystem)?;
            Solver::Dense(l)
        } else {
            let mut precond = vec![inv_n; n];
            for i in 0..n {
                for (j, &v) in ym.row(i).iter().enumerate() {
                    precond[j] -= v * v / row_sums[i];
                }
            }
            for (p, c) in precond.iter_mut().zip(&col_sums) {
                *p += c;
                if !(*p > 0.0) {
                    return Err(Error::SingularSystem);
                }
            }
            Solver::Iterative { precond }
        };
        Ok(TangentSpace {
            y,
            row_sums,
            col_sums,
            solver,
            cg_tol: cfg.cg_tol,
            cg_max_iter: cfg.cg_max_iter,
        })
    }

    pub fn point(&self) -> &AlignmentMatrix {
        self.y
    }

    /// Fisher-orthogonal projection of an ambient matrix onto the tangent space.
    pub fn project(&self, z: &Mat) -> Result<TangentVector> {
        let n = self.y.n();
        check_dim("tangent_project rows", n, z.rows())?;
        check_dim("tangent_project cols", n, z.cols())?;
        if !z.is_finite() {
            return Err(Error::NonFiniteInput("tangent_project"));
        }
        let (alpha, beta) = self.multipliers(&z.row_sums(), &z.col_sums())?;
        let ym = self.y.as_mat();
        let mut out = z.clone();
        for i in 0..n {
            let yrow = ym.row(i);
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o -= (alpha[i] + beta[j]) * yrow[j];
            }
        }
        if !out.is_finite() {
            return Err(Error::SingularSystem);
        }
        Ok(TangentVector::from_trusted(out))
    }

    /// Solves `Σ_j Y_ij (α_i + β_j) = r_i`, `Σ_i Y_ij (α_i + β_j) = c_j` for the
    /// multipliers, in the gauge where `β` has zero mean.
    fn multipliers(&self, r: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.y.n();
        let ym = self.y.as_mat();
        let r_scaled: Vec<f64> = r.iter().zip(&self.row_sums).map(|(a, s)| a / s).collect();
        let mut rhs: Vec<f64> = c
            .iter()
            .zip(ym.t_matvec(&r_scaled))
            .map(|(a, b)| a - b)
            .collect();
        let mean = rhs.iter().sum::<f64>() / n as f64;
        rhs.iter_mut().for_each(|v| *v -= mean);

        let beta = match &self.solver {
            Solver::Dense(l) => cholesky_solve(l, &rhs),
            Solver::Iterative { precond } => self.solve_cg(&rhs, precond)?,
        };
        let y_beta = ym.matvec(&beta);
        let alpha: Vec<f64> = (0..n)
            .map(|i| (r[i] - y_beta[i]) / self.row_sums[i])
            .collect();
        Ok((alpha, beta))
    }

    fn apply_schur(&self, v: &[f64]) -> Vec<f64> {
        let ym = self.y.as_mat();
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let yv: Vec<f64> = ym
            .matvec(v)
            .into_iter()
            .zip(&self.row_sums)
            .map(|(a, s)| a / s)
            .collect();
        let ytyv = ym.t_matvec(&yv);
        (0..n)
            .map(|j| self.col_sums[j] * v[j] - ytyv[j] + mean)
            .collect()
    }

    fn solve_cg(&self, rhs: &[f64], precond: &[f64]) -> Result<Vec<f64>> {
        let n = rhs.len();
        let rhs_norm = libm::sqrt(dot(rhs, rhs));
        let mut x = vec![0.0; n];
        if rhs_norm == 0.0 {
            return Ok(x);
        }
        let mut r = rhs.to_vec();
        let mut z: Vec<f64> = r.iter().zip(precond).map(|(a, p)| a / p).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for _ in 0..self.cg_max_iter {
            let ap = self.apply_schur(&p);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::SingularSystem);
            }
            let step = rz / pap;
            for k in 0..n {
                x[k] += step * p[k];
                r[k] -= step * ap[k];
            }
            if libm::sqrt(dot(&r, &r)) <= self.cg_tol * rhs_norm {
                return Ok(x);
            }
            z.iter_mut()
                .zip(&r)
                .zip(precond)
                .for_each(|((zk, rk), pk)| *zk = rk / pk);
            let rz_next = dot(&r, &z);
            let ratio = rz_next / rz;
            rz = rz_next;
            p.iter_mut().zip(&z).for_each(|(pk, zk)| *pk = zk + ratio * *pk);
        }
        Err(Error::SingularSystem)
    }

    /// Riemannian gradient from a Euclidean gradient: `Π_Y(egrad ⊙ Y)`.
    pub fn rgrad(&self, egrad: &Mat) -> Result<TangentVector> {
        check_dim("egrad_to_rgrad rows", self.y.n(), egrad.rows())?;
        check_dim("egrad_to_rgrad cols", self.y.n(), egrad.cols())?;
        if !egrad.is_finite() {
            return Err(Error::NonFiniteInput("egrad_to_rgrad"));
        }
        self.project(&egrad.hadamard(self.y.as_mat()))
    }
}

pub fn tangent_project(y: &AlignmentMatrix, z: &Mat, cfg: &ManifoldConfig) -> Result<TangentVector> {
    TangentSpace::new(y, cfg)?.project(z)
}

pub fn egrad_to_rgrad(y: &AlignmentMatrix, egrad: &Mat, cfg: &ManifoldConfig) -> Result<TangentVector> {
    TangentSpace::new(y, cfg)?.rgrad(egrad)
}

/// Projection transport of `xi` into the tangent space at `y_to`.
pub fn transport(y_to: &AlignmentMatrix, xi: &TangentVector, cfg: &ManifoldConfig) -> Result<TangentVector> {
    check_dim("transport", y_to.n(), xi.n())?;
    tangent_project(y_to, xi.as_mat(), cfg)
}

/// Multiplicative retraction `Sinkhorn(Y ⊙ exp(t ξ ⊘ Y))`.
pub fn retract(y: &AlignmentMatrix, xi: &TangentVector, t: f64, cfg: &ManifoldConfig) -> Result<AlignmentMatrix> {
    check_dim("retract", y.n(), xi.n())?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("step size must be finite and >= 0, got {t}")));
    }
    let ym = y.as_mat();
    let mut max_exp = f64::NEG_INFINITY;
    let moved = ym.zip_map(xi.as_mat(), |yv, xv| {
        let e = t * xv / yv;
        if e > max_exp {
            max_exp = e;
        }
        yv * libm::exp(e)
    });
    if !(max_exp <= MAX_EXPONENT) {
        return Err(Error::Overflow(max_exp));
    }
    let (balanced, deviation) = sinkhorn_balance(&moved, cfg, cfg.retraction_max_iter, Balancing::Newton)?;
    if deviation <= cfg.retraction_accept_tol {
        return Ok(AlignmentMatrix::from_trusted(balanced));
    }
    Err(Error::NonConvergence {
        context: "retract",
        iterations: cfg.retraction_max_iter,
        deviation,
    })
}

/// The barycenter `(1/n)·11ᵀ`.
pub fn uniform_point(n: usize) -> Result<AlignmentMatrix> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("uniform_point needs n >= 2, got {n}")));
    }
    Ok(AlignmentMatrix::from_trusted(Mat::filled(n, n, 1.0 / n as f64)))
}

/// Gaussian noise projected to the tangent space and rescaled to Fisher norm `scale`.
pub fn random_tangent(y: &AlignmentMatrix, scale: f64, seed: u64, cfg: &ManifoldConfig) -> Result<TangentVector> {
    if !(scale >= 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be >= 0, got {scale}")));
    }
    let n = y.n();
    if scale == 0.0 {
        return Ok(TangentVector::zeros(n));
    }
    let mut rng = substream(seed, Substream::Init);
    let noise = Mat::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    let xi = tangent_project(y, &noise, cfg)?;
    let norm = fisher_norm(y, &xi)?;
    if norm == 0.0 {
        return Ok(xi);
    }
    Ok(xi.scaled(scale / norm))
}
