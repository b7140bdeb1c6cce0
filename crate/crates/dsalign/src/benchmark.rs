//! Per-iteration cost of the alignment objectives.
//!
//! One "iteration" is an objective evaluation plus a Euclidean gradient, the
//! part of an optimizer step whose cost grows with the vocabulary through the
//! factored covariance products. Each cell is timed as the minimum over
//! repetitions after warm-up, which is far less noisy than the mean, and the
//! cells are measured in interleaved rounds.

use std::time::Instant;

use dsalign_core::ds_manifold::{random_tangent, retract, uniform_point, ManifoldConfig};
use dsalign_core::objective::{GwCost, MbaCost};
use dsalign_core::optimizer::CostFunction;
use dsalign_core::rng::{substream, Substream};
use dsalign_core::{CovarianceOperator, Mat};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub ns: Vec<usize>,
    pub ds: Vec<usize>,
    pub methods: Vec<Method>,
    pub warmup: usize,
    /// Minimum number of timed repetitions per cell.
    pub reps: usize,
    /// Keep repeating a cell until this much time has been spent timing it.
    pub min_time_ms: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            ns: vec![256, 512, 1024],
            ds: vec![16],
            methods: vec![Method::Mba, Method::Gw],
            warmup: 2,
            reps: 7,
            min_time_ms: 250.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: Method,
    pub n: usize,
    pub d: usize,
    pub millis_per_iter: f64,
    /// Floating-point operations of one objective-plus-gradient evaluation.
    pub flops: f64,
    /// n×n matrices allocated per evaluation.
    pub nn_buffers: usize,
    /// Time relative to the same method and `d` at `n/2`, when measured.
    pub ratio_vs_half_n: Option<f64>,
    /// Time relative to the same method and `n` at `d/2`, when measured.
    pub ratio_vs_half_d: Option<f64>,
}

/// Operation count of the factored kernels: each n×n·n×d product costs
/// `2n²d` and each n×d·d×d product `2nd²`.
pub fn flop_model(method: Method, n: usize, d: usize) -> f64 {
    let (n, d) = (n as f64, d as f64);
    match method {
        Method::Mba => 12.0 * n * n * d + 20.0 * n * d * d,
        Method::Gw => 6.0 * n * n * d + 6.0 * n * d * d,
    }
}

fn unit_gaussian(n: usize, d: usize, rng: &mut impl rand::Rng) -> Mat {
    let mut m = Mat::from_fn(n, d, |_, _| StandardNormal.sample(rng));
    for i in 0..n {
        let row = m.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    m
}

/// Interleaved timing rounds per benchmark run.
const TIMING_ROUNDS: usize = 5;

/// Fastest of at least `reps` timed evaluations, repeated until `min_time_ms`
/// of timing has accumulated. The minimum is the least noisy estimate on a
/// shared machine.
fn time_cell(
    cost: &dyn CostFunction,
    y: &dsalign_core::AlignmentMatrix,
    warmup: usize,
    reps: usize,
    min_time_ms: f64,
) -> AppResult<f64> {
    for _ in 0..warmup {
        std::hint::black_box(cost.cost(y)?);
        std::hint::black_box(cost.egrad(y)?);
    }
    let mut best = f64::INFINITY;
    let mut spent = 0.0;
    let mut done = 0;
    while done < reps || spent < min_time_ms {
        let t = Instant::now();
        std::hint::black_box(cost.cost(y)?);
        std::hint::black_box(cost.egrad(y)?);
        let millis = t.elapsed().as_secs_f64() * 1e3;
        best = best.min(millis);
        spent += millis;
        done += 1;
    }
    Ok(best)
}

pub fn run_benchmark(config: &BenchmarkConfig) -> AppResult<Vec<BenchmarkRow>> {
    if config.ns.is_empty() || config.ds.is_empty() || config.methods.is_empty() {
        return Err(AppError::Usage("benchmark grid is empty".into()));
    }
    if config.ns.iter().any(|&n| n < 2) || config.ds.contains(&0) || config.reps == 0 {
        return Err(AppError::Usage("benchmark needs n >= 2, d >= 1 and reps >= 1".into()));
    }
    if !config.min_time_ms.is_finite() || config.min_time_ms < 0.0 {
        return Err(AppError::Usage(format!("--min-time-ms must be >= 0, got {}", config.min_time_ms)));
    }
    let manifold = ManifoldConfig::default();
    let mut cells = Vec::new();
    for &method in &config.methods {
        for &d in &config.ds {
            for &n in &config.ns {
                let mut rng = substream(config.seed, Substream::Evaluation);
                let source = CovarianceOperator::new(unit_gaussian(n, d, &mut rng))?;
                let target = CovarianceOperator::new(unit_gaussian(n, d, &mut rng))?;
                let center = uniform_point(n)?;
                let y = retract(&center, &random_tangent(&center, 0.1, config.seed, &manifold)?, 1.0, &manifold)?;
                let (cost, nn_buffers): (Box<dyn CostFunction>, usize) = match method {
                    Method::Mba => (Box::new(MbaCost { source, target }), MbaCost::GRADIENT_NN_BUFFERS),
                    Method::Gw => (Box::new(GwCost { source, target }), GwCost::GRADIENT_NN_BUFFERS),
                };
                cells.push((method, n, d, cost, y, nn_buffers));
            }
        }
    }
    // Cells are timed in interleaved rounds so that a slow spell on a shared
    // machine inflates every cell a little instead of one cell a lot.
    let mut best = vec![f64::INFINITY; cells.len()];
    for round in 0..TIMING_ROUNDS {
        for ((_, _, _, cost, y, _), best) in cells.iter().zip(best.iter_mut()) {
            let warmup = if round == 0 { config.warmup } else { 0 };
            let reps = config.reps.div_ceil(TIMING_ROUNDS);
            let millis = time_cell(cost.as_ref(), y, warmup, reps, config.min_time_ms / TIMING_ROUNDS as f64)?;
            *best = best.min(millis);
        }
    }
    let mut rows: Vec<BenchmarkRow> = cells
        .iter()
        .zip(&best)
        .map(|(&(method, n, d, _, _, nn_buffers), &millis)| {
            log::info!("{} n={n} d={d}: {millis:.3} ms", method.name());
            BenchmarkRow {
                method,
                n,
                d,
                millis_per_iter: millis,
                flops: flop_model(method, n, d),
                nn_buffers,
                ratio_vs_half_n: None,
                ratio_vs_half_d: None,
            }
        })
        .collect();
    let lookup = |rows: &[BenchmarkRow], m: Method, n: usize, d: usize| {
        rows.iter()
            .find(|r| r.method == m && r.n == n && r.d == d)
            .map(|r| r.millis_per_iter)
    };
    let snapshot = rows.clone();
    for r in &mut rows {
        if r.n % 2 == 0 {
            r.ratio_vs_half_n = lookup(&snapshot, r.method, r.n / 2, r.d).map(|t| r.millis_per_iter / t);
        }
        if r.d % 2 == 0 {
            r.ratio_vs_half_d = lookup(&snapshot, r.method, r.n, r.d / 2).map(|t| r.millis_per_iter / t);
        }
    }
    Ok(rows)
}

pub const TABLE_HEADER: &str = "method\tn\td\tmillis_per_iter\tgflops_per_s\tnn_buffers\tratio_vs_half_n\tratio_vs_half_d";

/// Tab-separated table with one row per grid cell.
pub fn format_table(rows: &[BenchmarkRow]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
    let mut s = String::from(TABLE_HEADER);
    s.push('\n');
    for r in rows {
        let gflops = r.flops / (r.millis_per_iter * 1e6);
        s.push_str(&format!(
            "{}\t{}\t{}\t{:.4}\t{:.3}\t{}\t{}\t{}\n",
            r.method.name(),
            r.n,
            r.d,
            r.millis_per_iter,
            gflops,
            r.nn_buffers,
            opt(r.ratio_vs_half_n),
            opt(r.ratio_vs_half_d)
        ));
    }
    s
}
