//! Entropic Gromov-Wasserstein alignment.
//!
//! Each outer step linearises the inner-product GW cost at the current plan,
//! `cost = −C_X·T·C_Z`, and replaces the plan with the entropic optimal
//! transport plan for that cost. Plans carry total mass one with uniform
//! marginals `1/n`; the final plan is scaled by `n` and projected so it can be
//! consumed like any other [`AlignmentMatrix`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::ds_manifold::{sinkhorn_project_lenient, AlignmentMatrix, ManifoldConfig};
use crate::error::{check_dim, Error, Result};
use crate::linalg::Mat;
use crate::objective::{cross_covariance_product, CovarianceOperator};

/// Exponent below which the standard-domain kernel is considered unsafe.
pub const LOG_DOMAIN_THRESHOLD: f64 = -700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SinkhornDomain {
    /// Standard scaling unless the kernel would underflow, then log domain.
    #[default]
    Auto,
    Standard,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GwOptions {
    pub epsilon: f64,
    pub outer_iters: usize,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
    /// An inner solve that hits `sinkhorn_max_iter` keeps its last plan, with
    /// a warning, when the relative marginal deviation is within this bound.
    pub sinkhorn_accept_tol: f64,
    /// Divide each covariance by its largest absolute entry first.
    pub rescale_covariances: bool,
    pub domain: SinkhornDomain,
    /// Used for the final projection onto the doubly stochastic matrices.
    pub manifold: ManifoldConfig,
}

impl Default for GwOptions {
    fn default() -> Self {
        GwOptions {
            epsilon: 1e-2,
            outer_iters: 50,
            sinkhorn_tol: 1e-9,
            sinkhorn_max_iter: 20_000,
            sinkhorn_accept_tol: 1e-4,
            rescale_covariances: true,
            domain: SinkhornDomain::Auto,
            manifold: ManifoldConfig::default(),
        }
    }
}

impl GwOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.outer_iters < 1 {
            return Err(Error::InvalidArgument("outer_iters must be >= 1".into()));
        }
        if !(self.sinkhorn_tol > 0.0) || self.sinkhorn_max_iter < 1 || !(self.sinkhorn_accept_tol >= self.sinkhorn_tol) {
            return Err(Error::InvalidArgument("invalid inner Sinkhorn settings".into()));
        }
        self.manifold.validate()
    }
}

/// Largest deviation of the plan marginals from uniform, relative to `1/n`
/// (rows) and `1/m` (columns).
pub fn plan_marginal_deviation(plan: &Mat) -> f64 {
    let (n, m) = plan.shape();
    let rows = plan.row_sums().into_iter().map(|s| (s * n as f64 - 1.0).abs());
    let cols = plan.col_sums().into_iter().map(|s| (s * m as f64 - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// Entropic optimal transport with uniform marginals.
///
/// Returns `diag(u)·K·diag(v)` with `K = exp(−cost/ε)`, scaled until every
/// marginal is within `tol` of uniform (relative). The cost is shifted by its
/// minimum first, which leaves the plan unchanged.
pub fn sinkhorn_ot(cost: &Mat, epsilon: f64, tol: f64, max_iter: usize, domain: SinkhornDomain) -> Result<Mat> {
    let (plan, deviation) = sinkhorn_ot_partial(cost, epsilon, tol, max_iter, domain)?;
    if deviation <= tol {
        return Ok(plan);
    }
    Err(Error::NonConvergence {
        context: "sinkhorn_ot",
        iterations: max_iter,
        deviation,
    })
}

/// Like [`sinkhorn_ot`], but returns the last plan and its deviation instead
/// of failing when `max_iter` runs out.
fn sinkhorn_ot_partial(
    cost: &Mat,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
    domain: SinkhornDomain,
) -> Result<(Mat, f64)> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    if !cost.is_finite() {
        return Err(Error::NonFiniteInput("sinkhorn_ot cost"));
    }
    if cost.rows() == 0 || cost.cols() == 0 {
        return Err(Error::InvalidArgument("empty cost matrix".into()));
    }
    let min = cost.as_slice().iter().cloned().fold(f64::INFINITY, f64::min);
    let shifted = cost.map(|c| c - min);
    let min_arg = -shifted.max_abs() / epsilon;
    match domain {
        SinkhornDomain::Log => sinkhorn_log(&shifted, epsilon, tol, max_iter),
        SinkhornDomain::Standard => sinkhorn_standard(&shifted, epsilon, tol, max_iter),
        SinkhornDomain::Auto if min_arg < LOG_DOMAIN_THRESHOLD => sinkhorn_log(&shifted, epsilon, tol, max_iter),
        SinkhornDomain::Auto => match sinkhorn_standard(&shifted, epsilon, tol, max_iter) {
            Err(Error::NumericalUnderflow(_)) => sinkhorn_log(&shifted, epsilon, tol, max_iter),
            other => other,
        },
    }
}

fn sinkhorn_standard(cost: &Mat, epsilon: f64, tol: f64, max_iter: usize) -> Result<(Mat, f64)> {
    let (n, m) = cost.shape();
    let a = 1.0 / n as f64;
    let b = 1.0 / m as f64;
    let kernel = cost.map(|c| libm::exp(-c / epsilon));
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut deviation = f64::INFINITY;
    for _ in 0..max_iter {
        let kv = kernel.matvec(&v);
        for (ui, k) in u.iter_mut().zip(&kv) {
            *ui = a / k;
        }
        let ktu = kernel.t_matvec(&u);
        for (vj, k) in v.iter_mut().zip(&ktu) {
            *vj = b / k;
        }
        if !u.iter().chain(&v).all(|x| x.is_finite() && *x > 0.0) {
            return Err(Error::NumericalUnderflow(epsilon));
        }
        // Columns are exact after the v update; rows carry the error.
        let kv = kernel.matvec(&v);
        deviation = u
            .iter()
            .zip(&kv)
            .map(|(ui, k)| (ui * k * n as f64 - 1.0).abs())
            .fold(0.0, f64::max);
        if deviation <= tol {
            break;
        }
    }
    Ok((scale_plan(&kernel, &u, &v), deviation))
}

fn scale_plan(kernel: &Mat, u: &[f64], v: &[f64]) -> Mat {
    let mut plan = kernel.clone();
    for (i, ui) in u.iter().enumerate() {
        for (p, vj) in plan.row_mut(i).iter_mut().zip(v) {
            *p *= ui * vj;
        }
    }
    plan
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + libm::log(values.map(|x| libm::exp(x - max)).sum::<f64>())
}

fn sinkhorn_log(cost: &Mat, epsilon: f64, tol: f64, max_iter: usize) -> Result<(Mat, f64)> {
    let (n, m) = cost.shape();
    let log_a = -libm::log(n as f64);
    let log_b = -libm::log(m as f64);
    let cost_t = cost.transpose();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut deviation = f64::INFINITY;
    for _ in 0..max_iter {
        for i in 0..n {
            let row = cost.row(i);
            f[i] = epsilon * (log_a - log_sum_exp(g.iter().zip(row).map(|(gj, c)| (gj - c) / epsilon)));
        }
        for j in 0..m {
            let col = cost_t.row(j);
            g[j] = epsilon * (log_b - log_sum_exp(f.iter().zip(col).map(|(fi, c)| (fi - c) / epsilon)));
        }
        if !f.iter().chain(&g).all(|x| x.is_finite()) {
            return Err(Error::NonFiniteInput("log-domain sinkhorn"));
        }
        deviation = (0..n)
            .map(|i| {
                let row = cost.row(i);
                let log_row = log_sum_exp(g.iter().zip(row).map(|(gj, c)| (f[i] + gj - c) / epsilon));
                (libm::exp(log_row - log_a) - 1.0).abs()
            })
            .fold(0.0, f64::max);
        if deviation <= tol {
            break;
        }
    }
    let plan = Mat::from_fn(n, m, |i, j| libm::exp((f[i] + g[j] - cost[(i, j)]) / epsilon));
    Ok((plan, deviation))
}

#[derive(Debug, Clone)]
pub struct GwResult {
    pub alignment: AlignmentMatrix,
    /// The mass-one plan from the last outer step.
    pub plan: Mat,
    /// `−Trace(YᵀC_X Y C_Z)` of `Y = n·T` after each outer step, on the
    /// (possibly rescaled) covariances the solver used.
    pub objective_history: Vec<f64>,
}

/// Entropic Gromov-Wasserstein alignment starting from the uniform plan.
pub fn gw_align(cx: &CovarianceOperator, cz: &CovarianceOperator, opts: &GwOptions) -> Result<GwResult> {
    opts.validate()?;
    check_dim("gw_align vocabulary", cx.n(), cz.n())?;
    check_dim("gw_align embedding dimension", cx.d(), cz.d())?;
    let (cx, cz) = if opts.rescale_covariances {
        (cx.rescaled_to_unit_max(), cz.rescaled_to_unit_max())
    } else {
        (cx.clone(), cz.clone())
    };
    let n = cx.n();
    let nf = n as f64;
    let mut plan = Mat::filled(n, n, 1.0 / (nf * nf));
    let mut history: Vec<f64> = Vec::with_capacity(opts.outer_iters);
    for k in 0..opts.outer_iters {
        let mut cost = cross_covariance_product(&plan, &cx, &cz)?;
        cost.scale_mut(-1.0);
        let (next, deviation) =
            sinkhorn_ot_partial(&cost, opts.epsilon, opts.sinkhorn_tol, opts.sinkhorn_max_iter, opts.domain)?;
        if deviation > opts.sinkhorn_tol {
            if deviation > opts.sinkhorn_accept_tol {
                return Err(Error::NonConvergence {
                    context: "GW inner sinkhorn_ot",
                    iterations: opts.sinkhorn_max_iter,
                    deviation,
                });
            }
            log::warn!("GW outer step {k}: inner Sinkhorn stopped at marginal deviation {deviation:.3e}");
        }
        plan = next;
        // −Trace(YᵀC_X Y C_Z) with Y = n·T.
        let value = -nf * nf * plan.dot(&cross_covariance_product(&plan, &cx, &cz)?);
        if let Some(&prev) = history.last() {
            if value > prev + 1e-9 * prev.abs().max(1.0) {
                log::warn!("GW objective increased at outer step {k}: {prev:.6e} -> {value:.6e}");
            }
        }
        history.push(value);
    }
    // The plan is only as balanced as the inner solves, so the final rounding
    // onto the manifold accepts the same tolerance.
    let rounding = ManifoldConfig {
        retraction_accept_tol: opts.manifold.retraction_accept_tol.max(opts.sinkhorn_accept_tol),
        ..opts.manifold
    };
    let alignment = sinkhorn_project_lenient(&plan.scaled(nf), &rounding)?;
    Ok(GwResult {
        alignment,
        plan,
        objective_history: history,
    })
}
