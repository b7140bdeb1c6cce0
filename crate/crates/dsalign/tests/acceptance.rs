//! Acceptance suite. Each criterion prints one `PASS` or `FAIL` line with the
//! measured quantities; the test fails if any criterion fails.
//!
//! The full-scale bilingual lexicon induction check needs downloaded
//! embeddings and dictionaries and is ignored by default; see
//! `full_scale_bli` for the environment variables it reads.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use dsalign::benchmark::TABLE_HEADER;
use dsalign::synthetic::{generate, SyntheticSpec};
use dsalign_core::ds_manifold::{egrad_to_rgrad, fisher_inner, random_tangent, retract, ManifoldConfig, TangentSpace};
use dsalign_core::gw_baseline::{gw_align, GwOptions};
use dsalign_core::inference::{csls_retrieve, permutation_accuracy, round_to_permutation, RoundingMode};
use dsalign_core::objective::{gw_egrad, gw_objective, mba_egrad, mba_objective, MbaCost};
use dsalign_core::optimizer::{
    curriculum_align, initial_point, rcg_minimize, CurriculumSchedule, InitOptions, NoClock, RcgOptions,
};
use dsalign_core::procrustes::procrustes_solve;
use dsalign_core::{CovarianceOperator, Mat};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::*;

/// Writes straight to the process stdout so the lines survive test capture.
fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn check(results: &mut Vec<(u32, bool)>, id: u32, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let outcome = f();
    let elapsed = start.elapsed();
    let in_time = budget.is_none_or(|b| elapsed <= b);
    let passed = outcome.passed && in_time;
    let budget_note = budget.map_or(String::new(), |b| format!(" (budget {:.0?})", b));
    report(&format!(
        "{} criterion {id} [{name}]: {}; {:.2?}{budget_note}",
        if passed { "PASS" } else { "FAIL" },
        outcome.detail,
        elapsed
    ));
    results.push((id, passed));
}

fn manifold_suite() -> Outcome {
    let cfg = ManifoldConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let (mut worst_marg, mut worst_idem, mut worst_adj, mut worst_rgrad) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut ratios: Vec<f64> = Vec::new();
    let mut instances = 0;
    for &n in &[4usize, 6, 8] {
        for k in 0..100u64 {
            instances += 1;
            // Sinkhorn from a random positive matrix.
            let m = Mat::from_fn(n, n, |_, _| rand::Rng::random_range(&mut rng, 0.01..10.0));
            let y = dsalign_core::ds_manifold::sinkhorn_project(&m, &cfg).expect("sinkhorn");
            worst_marg = worst_marg.max(y.marginal_deviation());

            let space = TangentSpace::new(&y, &cfg).expect("tangent space");
            let a = gaussian(n, n, &mut rng);
            let b = gaussian(n, n, &mut rng);
            let pa = space.project(&a).expect("project");
            let pb = space.project(&b).expect("project");
            let ppa = space.project(pa.as_mat()).expect("project");
            worst_idem = worst_idem.max(ppa.as_mat().sub(pa.as_mat()).max_abs() / pa.as_mat().max_abs().max(1.0));
            let lhs = dense_fisher(y.as_mat(), &na(pa.as_mat()), &na(&b));
            let rhs = dense_fisher(y.as_mat(), &na(&a), &na(pb.as_mat()));
            worst_adj = worst_adj.max(rel_diff_scalar(lhs, rhs));

            let egrad = gaussian(n, n, &mut rng);
            let rgrad = egrad_to_rgrad(&y, &egrad, &cfg).expect("rgrad");
            for t in 0..50 {
                let xi = random_tangent(&y, 1.0, k * 1000 + t, &cfg).expect("tangent");
                let lhs = fisher_inner(&y, &rgrad, &xi).expect("inner");
                let rhs = egrad.dot(xi.as_mat());
                worst_rgrad = worst_rgrad.max(rel_diff_scalar(lhs, rhs));
            }

            let xi = random_tangent(&y, 1.0, k, &cfg).expect("tangent");
            let err = |t: f64| {
                let r = retract(&y, &xi, t, &cfg).expect("retract");
                r.as_mat().sub(y.as_mat()).scaled(1.0 / t).sub(xi.as_mat()).max_abs()
            };
            ratios.push(err(1e-4) / err(1e-3));
        }
    }
    let (rmin, rmax) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    // Linear shrinkage: a tenfold smaller step gives a tenfold smaller error.
    let linear = rmin > 0.05 && rmax < 0.2;
    Outcome {
        passed: worst_marg <= 1e-8 && worst_idem <= 1e-9 && worst_adj <= 1e-9 && worst_rgrad <= 1e-8 && linear,
        detail: format!(
            "{instances} instances; marginals {worst_marg:.1e}, idempotence {worst_idem:.1e}, \
             self-adjointness {worst_adj:.1e}, gradient identity {worst_rgrad:.1e}, \
             retraction error ratio [{rmin:.3}, {rmax:.3}]"
        ),
    }
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let (mut dense_err, mut fd_err) = (0.0f64, 0.0f64);
    let mut cases = 0;
    for n in 2..=8 {
        for d in 1..=4 {
            for _ in 0..3 {
                cases += 1;
                let x = gaussian(n, d, &mut rng);
                let z = gaussian(n, d, &mut rng);
                let y = random_point(n, 1.0, &mut rng);
                let cx = CovarianceOperator::new(x.clone()).expect("factor");
                let cz = CovarianceOperator::new(z.clone()).expect("factor");
                let f_mba = mba_objective(&y, &cx, &cz).expect("objective").total;
                let g_mba = mba_egrad(&y, &cx, &cz).expect("gradient");
                let f_gw = gw_objective(&y, &cx, &cz).expect("objective");
                let g_gw = gw_egrad(&y, &cx, &cz).expect("gradient");
                dense_err = dense_err
                    .max(rel_diff_scalar(f_mba, dense_mba(y.as_mat(), &x, &z)))
                    .max(rel_diff(&na(&g_mba), &dense_mba_grad(y.as_mat(), &x, &z)))
                    .max(rel_diff_scalar(f_gw, dense_gw(y.as_mat(), &x, &z)))
                    .max(rel_diff(&na(&g_gw), &dense_gw_grad(y.as_mat(), &x, &z)));
                let dir = gaussian(n, n, &mut rng);
                let fd = directional_fd(|m| dense_mba(m, &x, &z), y.as_mat(), &dir, 1e-5);
                fd_err = fd_err.max(rel_diff_scalar(fd, g_mba.dot(&dir)));
                let fd = directional_fd(|m| dense_gw(m, &x, &z), y.as_mat(), &dir, 1e-5);
                fd_err = fd_err.max(rel_diff_scalar(fd, g_gw.dot(&dir)));
            }
        }
    }
    Outcome {
        passed: dense_err <= 1e-9 && fd_err <= 1e-5,
        detail: format!("{cases} cases; vs dense {dense_err:.1e}, vs finite differences {fd_err:.1e}"),
    }
}

/// Monotonicity of every optimizer run in criteria 3 and 4.
#[derive(Default)]
struct MonotoneLog {
    runs: usize,
    violations: usize,
}

impl MonotoneLog {
    fn record(&mut self, monotone: bool) {
        self.runs += 1;
        self.violations += usize::from(!monotone);
    }
}

fn brute_force_minimum(log: &mut MonotoneLog) -> Outcome {
    let all = permutations(4);
    let mut worst_planted = 0.0f64;
    let mut best_gap = f64::INFINITY;
    let mut planted_is_argmin = true;
    for seed in 0..10 {
        let fx = generate(&SyntheticSpec::new(4, 4, 0.0, seed)).expect("fixture");
        let (x, z) = (fx.source.vectors(), fx.target.vectors());
        let scale = covariance(z).norm_squared();
        let values: Vec<f64> = all.iter().map(|p| dense_mba(&permutation_matrix(p), x, z)).collect();
        let planted = values[all.iter().position(|p| *p == fx.perm).expect("planted is a permutation")];
        let others = all
            .iter()
            .zip(&values)
            .filter(|(p, _)| **p != fx.perm)
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min);
        planted_is_argmin &= planted <= others;
        worst_planted = worst_planted.max(planted / scale);
        best_gap = best_gap.min(others / scale);

        // The optimizer on the same fixture must descend monotonically.
        let cost = MbaCost {
            source: CovarianceOperator::new(x.clone()).expect("factor"),
            target: CovarianceOperator::new(z.clone()).expect("factor"),
        };
        let start = initial_point(4, &InitOptions { seed, ..InitOptions::default() }, &ManifoldConfig::default())
            .expect("start");
        let (_, trace) = rcg_minimize(&cost, start, &RcgOptions::default(), &NoClock).expect("rcg");
        log.record(trace.is_monotone());
    }
    Outcome {
        passed: planted_is_argmin && worst_planted < 1e-9,
        detail: format!(
            "10 seeds × 24 permutations; planted is argmin: {planted_is_argmin}, \
             planted value {worst_planted:.1e}·‖C_Z‖², runner-up ≥ {best_gap:.2e}·‖C_Z‖²"
        ),
    }
}

fn synthetic_recovery(log: &mut MonotoneLog) -> Outcome {
    let (n, d) = (50, 20);
    let mut mba_acc = Vec::new();
    let mut gw_acc = Vec::new();
    for seed in 0..5 {
        let fx = generate(&SyntheticSpec::new(n, d, 0.0, seed).with_blocks(vec![25])).expect("fixture");
        let schedule = CurriculumSchedule::new(vec![25, 50], 500).expect("schedule");
        let result = curriculum_align(
            &fx.source,
            &fx.target,
            &schedule,
            &RcgOptions::default(),
            &InitOptions { seed, ..InitOptions::default() },
            &NoClock,
        )
        .expect("curriculum");
        for stage in &result.stages {
            log.record(stage.trace.is_monotone());
        }
        let perm = round_to_permutation(result.alignment.as_mat(), RoundingMode::Greedy).expect("rounding");
        mba_acc.push(permutation_accuracy(&perm, &fx.perm));

        let cx = CovarianceOperator::new(fx.source.vectors().clone()).expect("factor");
        let cz = CovarianceOperator::new(fx.target.vectors().clone()).expect("factor");
        let best = [1e-3, 1e-2, 1e-1]
            .iter()
            .filter_map(|&epsilon| {
                let r = gw_align(&cx, &cz, &GwOptions { epsilon, ..GwOptions::default() }).ok()?;
                let perm = round_to_permutation(r.alignment.as_mat(), RoundingMode::Greedy).ok()?;
                Some(permutation_accuracy(&perm, &fx.perm))
            })
            .fold(0.0f64, f64::max);
        gw_acc.push(best);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m, g) = (mean(&mba_acc), mean(&gw_acc));
    Outcome {
        passed: m >= 0.95 && g >= 0.90,
        detail: format!("MBA mean recovery {m:.3} {mba_acc:?}, GW best-ε mean recovery {g:.3} {gw_acc:?}"),
    }
}

fn optimizer_contract(log: &MonotoneLog) -> Outcome {
    let mut worst = 0.0f64;
    let mut max_steps = 0;
    for seed in 0..5 {
        let fx = generate(&SyntheticSpec::new(8, 4, 0.0, seed)).expect("fixture");
        let cost = MbaCost {
            source: CovarianceOperator::new(fx.source.vectors().clone()).expect("factor"),
            target: CovarianceOperator::new(fx.target.vectors().clone()).expect("factor"),
        };
        let start = initial_point(8, &InitOptions { seed, ..InitOptions::default() }, &ManifoldConfig::default())
            .expect("start");
        let opts = RcgOptions {
            max_iter: 2000,
            grad_tol: 1e-7,
            ..RcgOptions::default()
        };
        let (_, trace) = rcg_minimize(&cost, start, &opts, &NoClock).expect("rcg");
        worst = worst.max(trace.final_grad_norm());
        max_steps = max_steps.max(trace.accepted_steps());
    }
    Outcome {
        passed: log.violations == 0 && log.runs > 0 && worst < 1e-5 && max_steps <= 2000,
        detail: format!(
            "{} runs from criteria 3-4 with {} monotonicity violations; n=8 planted: final Fisher gradient \
             norm ≤ {worst:.1e} within {max_steps} iterations",
            log.runs, log.violations
        ),
    }
}

fn procrustes_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let (n, d) = (200, 20);
    let x = gaussian(n, d, &mut rng);
    let w0 = haar_orthogonal(d, &mut rng);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let xw = x.matmul(&w0).expect("shapes");
    let mut z = Mat::zeros(n, d);
    for (i, &j) in perm.iter().enumerate() {
        z.row_mut(j).copy_from_slice(xw.row(i));
    }
    let t = Instant::now();
    let w = procrustes_solve(&x, &permutation_matrix(&perm), &z).expect("procrustes").map.into_matrix();
    let recovery_time = t.elapsed();
    let recovery = w.sub(&w0).max_abs();

    // Monte Carlo: no random orthogonal map fits a soft alignment better.
    let y = random_point(60, 1.0, &mut rng);
    let xs = gaussian(60, 6, &mut rng);
    let zs = gaussian(60, 6, &mut rng);
    let yz = y.as_mat().matmul(&zs).expect("shapes");
    let loss = |w: &Mat| xs.matmul(w).expect("shapes").sub(&yz).frobenius_sq();
    let best = loss(&procrustes_solve(&xs, y.as_mat(), &zs).expect("procrustes").map.into_matrix());
    let beaten = (0..1000).filter(|_| loss(&haar_orthogonal(6, &mut rng)) < best - 1e-10).count();
    Outcome {
        passed: recovery <= 1e-8 && recovery_time < Duration::from_secs(1) && beaten == 0,
        detail: format!(
            "planted W₀ error {recovery:.1e} in {recovery_time:.2?}; {beaten} of 1000 random orthogonal maps beat the solution"
        ),
    }
}

fn csls_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let mut mismatches = 0;
    let instances = 50;
    for trial in 0..instances {
        let d = 2 + trial % 5;
        let s = unit_rows(&gaussian(8, d, &mut rng));
        let t = unit_rows(&gaussian(16, d, &mut rng));
        let k = 1 + trial % 10;
        let got = csls_retrieve(&s, &t, k, 16, 1 + trial % 8).expect("csls");
        let scores = dense_csls(&s, &t, k);
        for (i, ranked) in got.neighbors.iter().enumerate() {
            let row: Vec<f64> = scores.row(i).iter().copied().collect();
            let actual: Vec<usize> = ranked.iter().map(|&(j, _)| j).collect();
            mismatches += usize::from(actual != ranking(&row));
        }
    }
    Outcome {
        passed: mismatches == 0,
        detail: format!("{instances} instances (m=8, n=16); {mismatches} ranking mismatches"),
    }
}

fn benchmark_scaling() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let table_path = dir.path().join("bench.tsv");
    let code = dsalign::cli::run([
        "dsalign",
        "benchmark",
        "--n",
        "256,512,1024",
        "--d",
        "16",
        "--threads",
        "1",
        "--output",
        table_path.to_str().expect("utf-8 path"),
    ]);
    let text = std::fs::read_to_string(&table_path).unwrap_or_default();
    let mut lines = text.lines();
    let header_ok = lines.next() == Some(TABLE_HEADER);
    let mut ratios = Vec::new();
    for line in lines {
        let cols: Vec<&str> = line.split('\t').collect();
        if let Ok(r) = cols[6].parse::<f64>() {
            ratios.push((cols[0].to_string(), cols[1].to_string(), r));
        }
    }
    let ok = code == 0 && header_ok && ratios.len() == 4 && ratios.iter().all(|(_, _, r)| (2.5..=6.0).contains(r));
    Outcome {
        passed: ok,
        detail: format!(
            "time ratio per n-doubling at d=16: {}",
            ratios
                .iter()
                .map(|(m, n, r)| format!("{m} n={n} ×{r:.2}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    }
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    let mut log = MonotoneLog::default();
    check(&mut results, 1, "manifold geometry", Some(Duration::from_secs(10)), manifold_suite);
    check(&mut results, 2, "factored vs dense and finite differences", Some(Duration::from_secs(10)), oracle_equivalence);
    check(&mut results, 3, "brute-force global minimum", None, || brute_force_minimum(&mut log));
    check(&mut results, 4, "synthetic permutation recovery", Some(Duration::from_secs(120)), || {
        synthetic_recovery(&mut log)
    });
    check(&mut results, 5, "optimizer contract", None, || optimizer_contract(&log));
    check(&mut results, 6, "Procrustes recovery and optimality", None, procrustes_recovery);
    check(&mut results, 7, "CSLS dense oracle", None, csls_oracle);
    report("SKIP criterion 8 [full-scale BLI]: ignored by default; run `cargo test -p dsalign --test acceptance -- --ignored`");
    check(&mut results, 9, "benchmark scaling", None, benchmark_scaling);
    let failed: Vec<u32> = results.iter().filter(|(_, ok)| !ok).map(|(id, _)| *id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

fn env_path(name: &str) -> Option<PathBuf> {
    std::env::var_os(name).map(PathBuf::from)
}

/// Full-scale run with the paper preset. Needs fastText-format embeddings and
/// MUSE-style test dictionaries:
///
/// - `DSALIGN_EN_VEC`, `DSALIGN_ES_VEC`, `DSALIGN_BG_VEC`: embedding files
/// - `DSALIGN_EN_ES_DICT`, `DSALIGN_EN_BG_DICT`: test dictionaries
/// - `DSALIGN_EVAL_VOCAB` (optional): words loaded for retrieval, default 200000
#[test]
#[ignore = "needs downloaded embeddings and dictionaries; takes hours"]
fn full_scale_bli() {
    let vars = ["DSALIGN_EN_VEC", "DSALIGN_ES_VEC", "DSALIGN_BG_VEC", "DSALIGN_EN_ES_DICT", "DSALIGN_EN_BG_DICT"];
    let paths: Vec<Option<PathBuf>> = vars.iter().map(|v| env_path(v)).collect();
    if paths.iter().any(Option::is_none) {
        let missing: Vec<&str> = vars.iter().zip(&paths).filter(|(_, p)| p.is_none()).map(|(v, _)| *v).collect();
        report(&format!("SKIP criterion 8 [full-scale BLI]: missing {}", missing.join(", ")));
        return;
    }
    let paths: Vec<PathBuf> = paths.into_iter().flatten().collect();
    let eval_vocab = std::env::var("DSALIGN_EVAL_VOCAB").unwrap_or_else(|_| "200000".into());
    let out = tempfile::tempdir().expect("tempdir");
    let run_pair = |target: &PathBuf, dict: &PathBuf, name: &str| -> f64 {
        let dir = out.path().join(name);
        let code = dsalign::cli::run([
            "dsalign".into(),
            "align".into(),
            "--preset".into(),
            "paper".into(),
            "--source".into(),
            paths[0].to_string_lossy().into_owned(),
            "--target".into(),
            target.to_string_lossy().into_owned(),
            "--dictionary".into(),
            dict.to_string_lossy().into_owned(),
            "--max-vocab".into(),
            eval_vocab.clone(),
            "--output".into(),
            dir.to_string_lossy().into_owned(),
        ]);
        assert_eq!(code, 0, "{name} run failed");
        let text = std::fs::read_to_string(dir.join(dsalign::run::REPORT_FILE)).expect("report");
        100.0 * dsalign::formats::parse_report(&text).expect("report parses").p_at_1
    };
    let es = run_pair(&paths[1], &paths[3], "en-es");
    let bg = run_pair(&paths[2], &paths[4], "en-bg");
    let passed = (es - 78.2).abs() <= 3.0 && bg >= 30.0;
    report(&format!(
        "{} criterion 8 [full-scale BLI]: en-es P@1 {es:.1} (target 78.2 ± 3.0), en-bg P@1 {bg:.1} (target ≥ 30)",
        if passed { "PASS" } else { "FAIL" }
    ));
    assert!(passed);
}
