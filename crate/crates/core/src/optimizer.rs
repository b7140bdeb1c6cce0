//! Riemannian conjugate gradient on the doubly stochastic manifold, Armijo
//! backtracking, and the vocabulary curriculum that grows `n` between stages.

use alloc::format;
use alloc::vec::Vec;

use crate::ds_manifold::{
    fisher_inner_raw, random_tangent, retract, sinkhorn_project, uniform_point, AlignmentMatrix,
    ManifoldConfig, TangentSpace, TangentVector,
};
use crate::embedding::EmbeddingMatrix;
use crate::error::{check_dim, Error, Result};
use crate::linalg::Mat;
use crate::objective::{CovarianceOperator, MbaCost};

/// A smooth function on the interior of the doubly stochastic manifold,
/// described by its value and Euclidean gradient.
pub trait CostFunction {
    fn cost(&self, y: &AlignmentMatrix) -> Result<f64>;
    fn egrad(&self, y: &AlignmentMatrix) -> Result<Mat>;
}

impl<C: CostFunction + ?Sized> CostFunction for &C {
    fn cost(&self, y: &AlignmentMatrix) -> Result<f64> {
        (**self).cost(y)
    }

    fn egrad(&self, y: &AlignmentMatrix) -> Result<Mat> {
        (**self).egrad(y)
    }
}

/// Cost built from two closures; handy for tests and ad-hoc problems.
pub struct FnCost<F, G> {
    pub cost: F,
    pub egrad: G,
}

impl<F, G> CostFunction for FnCost<F, G>
where
    F: Fn(&AlignmentMatrix) -> Result<f64>,
    G: Fn(&AlignmentMatrix) -> Result<Mat>,
{
    fn cost(&self, y: &AlignmentMatrix) -> Result<f64> {
        (self.cost)(y)
    }

    fn egrad(&self, y: &AlignmentMatrix) -> Result<Mat> {
        (self.egrad)(y)
    }
}

/// Source of elapsed wall time for traces. The core crate has no clock of its
/// own; [`NoClock`] reports zero.
pub trait Clock {
    fn elapsed_millis(&self) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn elapsed_millis(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaRule {
    PolakRibierePlus,
    FletcherReeves,
    /// β = 0: Riemannian steepest descent.
    SteepestDescent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcgOptions {
    pub max_iter: usize,
    /// Stop once the Fisher norm of the Riemannian gradient drops below this.
    pub grad_tol: f64,
    pub armijo_c1: f64,
    pub backtrack_factor: f64,
    /// First trial step of the first line search.
    pub initial_step: f64,
    /// Later line searches start at `step_optimism · 2Δf / |slope|`, where
    /// `Δf` is the previous decrease: the step at which a quadratic model
    /// would repeat that decrease, inflated by this factor. Zero keeps every
    /// search starting at `initial_step`.
    pub step_optimism: f64,
    /// The first trial step is shortened so no entry of the retracted point
    /// changes by more than a factor `exp(max_log_change)` before balancing.
    pub max_log_change: f64,
    /// Steps below this abort the line search.
    pub min_step: f64,
    pub beta_rule: BetaRule,
    /// Reset to steepest descent every this many iterations (0 disables).
    pub restart_every: usize,
    pub manifold: ManifoldConfig,
}

impl Default for RcgOptions {
    fn default() -> Self {
        RcgOptions {
            max_iter: 1000,
            grad_tol: 1e-6,
            armijo_c1: 1e-4,
            backtrack_factor: 0.5,
            initial_step: 1.0,
            step_optimism: 2.0,
            max_log_change: 30.0,
            min_step: 1e-18,
            beta_rule: BetaRule::PolakRibierePlus,
            restart_every: 50,
            manifold: ManifoldConfig::default(),
        }
    }
}

impl RcgOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return Err(Error::InvalidArgument(format!("armijo_c1 must lie in (0, 1), got {}", self.armijo_c1)));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "backtrack_factor must lie in (0, 1), got {}",
                self.backtrack_factor
            )));
        }
        if !(self.initial_step > 0.0) {
            return Err(Error::InvalidArgument(format!("initial_step must be > 0, got {}", self.initial_step)));
        }
        if !(self.step_optimism >= 0.0) || !self.step_optimism.is_finite() {
            return Err(Error::InvalidArgument(format!("step_optimism must be >= 0, got {}", self.step_optimism)));
        }
        if !(self.max_log_change > 0.0) {
            return Err(Error::InvalidArgument(format!("max_log_change must be > 0, got {}", self.max_log_change)));
        }
        if !(self.grad_tol >= 0.0) || !(self.min_step > 0.0) {
            return Err(Error::InvalidArgument("grad_tol must be >= 0 and min_step > 0".into()));
        }
        self.manifold.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    /// Accepted step; zero for the initial record.
    pub step: f64,
    pub millis: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    /// Backtracking fell below the minimum step; the last accepted iterate is returned.
    LineSearchStalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimTrace {
    /// Record 0 describes the starting point; one record per accepted step follows.
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
}

impl OptimTrace {
    pub fn accepted_steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.objective)
    }

    pub fn final_grad_norm(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.grad_norm)
    }

    pub fn is_monotone(&self) -> bool {
        self.records.windows(2).all(|w| w[1].objective <= w[0].objective)
    }
}

fn is_trial_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::Overflow(_) | Error::NonConvergence { .. } | Error::NonFiniteInput(_) | Error::SingularSystem
    )
}

/// Backtracking search returning the accepted step, its value, and whatever
/// the curve produced alongside the value.
fn armijo_search<T>(
    mut curve: impl FnMut(f64) -> Result<(f64, T)>,
    f0: f64,
    slope: f64,
    first_step: f64,
    opts: &RcgOptions,
) -> Result<(f64, f64, T)> {
    if !(slope < 0.0) {
        return Err(Error::InvalidArgument(format!("line search needs a descent slope, got {slope}")));
    }
    let mut t = first_step;
    while t >= opts.min_step {
        match curve(t) {
            // The strict test guards against `f0 + c1·t·slope` rounding back to `f0`.
            Ok((ft, extra)) if ft <= f0 + opts.armijo_c1 * t * slope && ft < f0 => return Ok((t, ft, extra)),
            Ok(_) => {}
            Err(e) if is_trial_failure(&e) => {}
            Err(e) => return Err(e),
        }
        t *= opts.backtrack_factor;
    }
    Err(Error::LineSearchFailure {
        min_step: opts.min_step,
    })
}

/// Largest `t = initial_step·backtrack_factorʲ` with `f(t) ≤ f0 + c1·t·slope`.
///
/// Trial points where `f` reports a numerical failure (overflowing retraction,
/// Sinkhorn non-convergence) count as rejected.
pub fn armijo_linesearch(
    mut curve: impl FnMut(f64) -> Result<f64>,
    f0: f64,
    slope: f64,
    opts: &RcgOptions,
) -> Result<f64> {
    armijo_search(|t| curve(t).map(|v| (v, ())), f0, slope, opts.initial_step, opts).map(|(t, _, _)| t)
}

struct Iterate {
    y: AlignmentMatrix,
    f: f64,
    grad: TangentVector,
    grad_norm_sq: f64,
}

fn evaluate<C: CostFunction + ?Sized>(cost: &C, y: AlignmentMatrix, f: f64, cfg: &ManifoldConfig) -> Result<Iterate> {
    let egrad = cost.egrad(&y)?;
    let grad = TangentSpace::new(&y, cfg)?.rgrad(&egrad)?;
    let grad_norm_sq = fisher_inner_raw(y.as_mat(), grad.as_mat(), grad.as_mat());
    Ok(Iterate {
        y,
        f,
        grad,
        grad_norm_sq,
    })
}

/// Minimizes `cost` over the doubly stochastic manifold by Riemannian
/// conjugate gradient with multiplicative retraction and projection transport.
///
/// Every accepted step satisfies the Armijo condition, so the objective in the
/// returned trace never increases. A stalled line search ends the run with
/// [`Termination::LineSearchStalled`] and the last accepted iterate.
pub fn rcg_minimize<C: CostFunction + ?Sized>(
    cost: &C,
    y0: AlignmentMatrix,
    opts: &RcgOptions,
    clock: &dyn Clock,
) -> Result<(AlignmentMatrix, OptimTrace)> {
    opts.validate()?;
    let cfg = &opts.manifold;
    let f0 = cost.cost(&y0)?;
    let mut cur = evaluate(cost, y0, f0, cfg)?;
    let mut records = Vec::new();
    records.push(IterationRecord {
        iteration: 0,
        objective: cur.f,
        grad_norm: libm::sqrt(cur.grad_norm_sq),
        step: 0.0,
        millis: clock.elapsed_millis(),
    });
    if libm::sqrt(cur.grad_norm_sq) < opts.grad_tol {
        return Ok((
            cur.y,
            OptimTrace {
                records,
                termination: Termination::GradientTolerance,
            },
        ));
    }

    let mut direction = cur.grad.scaled(-1.0);
    let mut since_restart = 0usize;
    let mut last_decrease: Option<f64> = None;
    let mut termination = Termination::MaxIterations;

    for iteration in 1..=opts.max_iter {
        let mut slope = fisher_inner_raw(cur.y.as_mat(), cur.grad.as_mat(), direction.as_mat());
        if !(slope < 0.0) {
            direction = cur.grad.scaled(-1.0);
            slope = -cur.grad_norm_sq;
            since_restart = 0;
        }

        // First trial step, and whether the log-change cap shortened it.
        let first_trial = |dir: &TangentVector, slope: f64| {
            let max_ratio = dir
                .as_mat()
                .as_slice()
                .iter()
                .zip(cur.y.as_mat().as_slice())
                .map(|(x, y)| (x / y).abs())
                .fold(0.0, f64::max);
            let t0 = match last_decrease {
                Some(df) if opts.step_optimism > 0.0 => (opts.step_optimism * 2.0 * df / -slope).max(opts.min_step),
                _ => opts.initial_step,
            };
            if max_ratio * t0 > opts.max_log_change {
                ((opts.max_log_change / max_ratio).max(opts.min_step), true)
            } else {
                (t0, false)
            }
        };
        let search = |dir: &TangentVector, slope: f64, t0: f64| {
            armijo_search(
                |t| {
                    let y = retract(&cur.y, dir, t, cfg)?;
                    let f = cost.cost(&y)?;
                    Ok((f, y))
                },
                cur.f,
                slope,
                t0,
                opts,
            )
        };

        let (mut t0, mut capped) = first_trial(&direction, slope);
        if capped && since_restart > 0 {
            // The transported part of the direction is stiff against entries
            // that have nearly vanished; restart rather than crawl along it.
            direction = cur.grad.scaled(-1.0);
            slope = -cur.grad_norm_sq;
            since_restart = 0;
            (t0, capped) = first_trial(&direction, slope);
        }
        log::debug!("iteration {iteration}: first trial step {t0:.3e}{}", if capped { " (capped)" } else { "" });
        let mut outcome = search(&direction, slope, t0);
        if matches!(outcome, Err(Error::LineSearchFailure { .. })) && since_restart > 0 {
            // Retry once along the negative gradient before giving up.
            direction = cur.grad.scaled(-1.0);
            slope = -cur.grad_norm_sq;
            since_restart = 0;
            (t0, capped) = first_trial(&direction, slope);
            outcome = search(&direction, slope, t0);
        }
        let (step, f_new, y_new) = match outcome {
            Ok(v) => v,
            Err(Error::LineSearchFailure { .. }) => {
                log::warn!("line search stalled at iteration {iteration}");
                termination = Termination::LineSearchStalled;
                break;
            }
            Err(e) => return Err(e),
        };
        // A step limited by the cap says nothing about the natural step length.
        last_decrease = if capped { None } else { Some(cur.f - f_new) };

        let space = TangentSpace::new(&y_new, cfg)?;
        let egrad = cost.egrad(&y_new)?;
        let grad = space.rgrad(&egrad)?;
        let ym = y_new.as_mat();
        let grad_norm_sq = fisher_inner_raw(ym, grad.as_mat(), grad.as_mat());

        since_restart += 1;
        let restart = opts.restart_every > 0 && since_restart >= opts.restart_every;
        let beta = if restart || cur.grad_norm_sq == 0.0 {
            0.0
        } else {
            match opts.beta_rule {
                BetaRule::SteepestDescent => 0.0,
                BetaRule::FletcherReeves => grad_norm_sq / cur.grad_norm_sq,
                BetaRule::PolakRibierePlus => {
                    let old_grad = space.project(cur.grad.as_mat())?;
                    let diff = grad.as_mat().sub(old_grad.as_mat());
                    (fisher_inner_raw(ym, grad.as_mat(), &diff) / cur.grad_norm_sq).max(0.0)
                }
            }
        };
        direction = if beta == 0.0 {
            since_restart = 0;
            grad.scaled(-1.0)
        } else {
            let moved = space.project(direction.as_mat())?;
            grad.lin_comb(-1.0, &moved, beta)
        };
        drop(space);

        cur = Iterate {
            y: y_new,
            f: f_new,
            grad,
            grad_norm_sq,
        };
        let grad_norm = libm::sqrt(grad_norm_sq);
        records.push(IterationRecord {
            iteration,
            objective: f_new,
            grad_norm,
            step,
            millis: clock.elapsed_millis(),
        });
        if grad_norm < opts.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
    }

    Ok((cur.y, OptimTrace { records, termination }))
}

/// Embeds an m×m alignment into size `n_new`: the top-left block holds
/// `(m/n_new)·Y_small`, every other entry is `1/n_new`, and the result is
/// re-projected.
pub fn warm_start_expand(y_small: &AlignmentMatrix, n_new: usize, cfg: &ManifoldConfig) -> Result<AlignmentMatrix> {
    let m = y_small.n();
    if n_new <= m {
        return Err(Error::InvalidArgument(format!(
            "warm start must grow the alignment ({m} -> {n_new})"
        )));
    }
    let scale = m as f64 / n_new as f64;
    let fill = 1.0 / n_new as f64;
    let ys = y_small.as_mat();
    let big = Mat::from_fn(n_new, n_new, |i, j| if i < m && j < m { scale * ys[(i, j)] } else { fill });
    sinkhorn_project(&big, cfg)
}

/// Ordered vocabulary sizes for curriculum training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurriculumSchedule {
    stages: Vec<usize>,
    pub iters_per_stage: usize,
}

impl CurriculumSchedule {
    pub fn new(stages: Vec<usize>, iters_per_stage: usize) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::InvalidArgument("curriculum needs at least one stage".into()));
        }
        if stages[0] < 2 {
            return Err(Error::InvalidArgument("curriculum stages must be >= 2".into()));
        }
        if stages.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!(
                "curriculum stages must be strictly increasing: {stages:?}"
            )));
        }
        if iters_per_stage == 0 {
            return Err(Error::InvalidArgument("iters_per_stage must be >= 1".into()));
        }
        Ok(CurriculumSchedule {
            stages,
            iters_per_stage,
        })
    }

    /// `start, 2·start, 4·start, …` capped by and ending at `full`.
    pub fn doubling(start: usize, full: usize, iters_per_stage: usize) -> Result<Self> {
        let mut stages = Vec::new();
        let mut n = start.min(full);
        while n < full {
            stages.push(n);
            n *= 2;
        }
        stages.push(full);
        Self::new(stages, iters_per_stage)
    }

    pub fn stages(&self) -> &[usize] {
        &self.stages
    }

    pub fn final_size(&self) -> usize {
        *self.stages.last().expect("schedule is never empty")
    }
}

/// How the first curriculum stage is initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitOptions {
    /// Fisher norm of the random tangent perturbation of the barycenter.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions {
            noise_scale: 1e-2,
            seed: 0,
        }
    }
}

/// Barycenter perturbed by a seeded random tangent step.
pub fn initial_point(n: usize, init: &InitOptions, cfg: &ManifoldConfig) -> Result<AlignmentMatrix> {
    let center = uniform_point(n)?;
    let xi = random_tangent(&center, init.noise_scale, init.seed, cfg)?;
    retract(&center, &xi, 1.0, cfg)
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub n: usize,
    /// Objective at the warm-started point before optimization.
    pub initial_objective: f64,
    pub trace: OptimTrace,
}

#[derive(Debug, Clone)]
pub struct CurriculumResult {
    pub alignment: AlignmentMatrix,
    pub stages: Vec<StageResult>,
}

/// Runs the bi-directional covariance objective over a growing vocabulary
/// prefix, warm-starting each stage from the previous solution.
pub fn curriculum_align(
    source: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
    schedule: &CurriculumSchedule,
    opts: &RcgOptions,
    init: &InitOptions,
    clock: &dyn Clock,
) -> Result<CurriculumResult> {
    check_dim("embedding dimension", source.dim(), target.dim())?;
    let full = schedule.final_size();
    if full > source.len() || full > target.len() {
        return Err(Error::InvalidArgument(format!(
            "curriculum needs {full} words but vocabularies have {} and {}",
            source.len(),
            target.len()
        )));
    }
    let stage_opts = RcgOptions {
        max_iter: schedule.iters_per_stage,
        ..*opts
    };
    let mut y: Option<AlignmentMatrix> = None;
    let mut stages = Vec::with_capacity(schedule.stages().len());
    for &n in schedule.stages() {
        let cost = MbaCost {
            source: CovarianceOperator::new(source.vectors().top_rows(n))?,
            target: CovarianceOperator::new(target.vectors().top_rows(n))?,
        };
        let start = match y.take() {
            None => initial_point(n, init, &opts.manifold)?,
            Some(prev) => warm_start_expand(&prev, n, &opts.manifold)?,
        };
        let initial_objective = cost.cost(&start)?;
        let (next, trace) = rcg_minimize(&cost, start, &stage_opts, clock)?;
        log::info!(
            "stage n={n}: objective {initial_objective:.6e} -> {:.6e} in {} steps ({:?})",
            trace.final_objective(),
            trace.accepted_steps(),
            trace.termination
        );
        stages.push(StageResult {
            n,
            initial_objective,
            trace,
        });
        y = Some(next);
    }
    Ok(CurriculumResult {
        alignment: y.expect("schedule is never empty"),
        stages,
    })
}
