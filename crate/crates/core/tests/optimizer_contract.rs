mod support;

use dsalign_core::ds_manifold::{uniform_point, ManifoldConfig};
use dsalign_core::gw_baseline::{gw_align, sinkhorn_ot, GwOptions, SinkhornDomain};
use dsalign_core::inference::{round_to_permutation, RoundingMode};
use dsalign_core::objective::MbaCost;
use dsalign_core::optimizer::{
    curriculum_align, initial_point, rcg_minimize, warm_start_expand, BetaRule, CostFunction, CurriculumSchedule,
    FnCost, InitOptions, NoClock, RcgOptions, Termination,
};
use dsalign_core::{AlignmentMatrix, CovarianceOperator, EmbeddingMatrix, Mat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::*;

/// Source rows `x_i`, target row `perm[i]` equal to `x_i Q`.
fn planted(n: usize, d: usize, seed: u64) -> (Mat, Mat, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = unit_rows(&gaussian(n, d, &mut rng));
    let q = haar_orthogonal(d, &mut rng);
    let mut perm: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
    let xq = x.matmul(&q).unwrap();
    let mut z = Mat::zeros(n, d);
    for (i, &j) in perm.iter().enumerate() {
        z.row_mut(j).copy_from_slice(xq.row(i));
    }
    (x, z, perm)
}

fn mba(x: &Mat, z: &Mat) -> MbaCost {
    MbaCost {
        source: CovarianceOperator::new(x.clone()).unwrap(),
        target: CovarianceOperator::new(z.clone()).unwrap(),
    }
}

#[test]
fn rcg_reaches_small_gradient_on_planted_n8() {
    for seed in 0..5 {
        let (x, z, perm) = planted(8, 4, seed);
        let cost = mba(&x, &z);
        let start = initial_point(8, &InitOptions { noise_scale: 1e-2, seed }, &ManifoldConfig::default()).unwrap();
        let opts = RcgOptions {
            max_iter: 2000,
            grad_tol: 1e-7,
            ..RcgOptions::default()
        };
        let (y, trace) = rcg_minimize(&cost, start, &opts, &NoClock).unwrap();
        assert!(trace.is_monotone());
        assert!(trace.final_grad_norm() < 1e-5, "seed {seed}: {:e}", trace.final_grad_norm());
        assert!(trace.accepted_steps() <= 2000);
        if trace.final_objective() < 1e-8 {
            assert_eq!(round_to_permutation(y.as_mat(), RoundingMode::Exact).unwrap(), perm);
        }
    }
}

#[test]
fn every_beta_rule_descends_monotonically() {
    let (x, z, _) = planted(10, 3, 42);
    let cost = mba(&x, &z);
    let start = initial_point(10, &InitOptions::default(), &ManifoldConfig::default()).unwrap();
    for rule in [BetaRule::PolakRibierePlus, BetaRule::FletcherReeves, BetaRule::SteepestDescent] {
        let opts = RcgOptions {
            max_iter: 100,
            beta_rule: rule,
            ..RcgOptions::default()
        };
        let (_, trace) = rcg_minimize(&cost, start.clone(), &opts, &NoClock).unwrap();
        assert!(trace.is_monotone(), "{rule:?}");
        assert!(trace.final_objective() < trace.records[0].objective);
    }
}

#[test]
fn optimizer_is_deterministic() {
    let (x, z, _) = planted(12, 3, 7);
    let cost = mba(&x, &z);
    let start = initial_point(12, &InitOptions::default(), &ManifoldConfig::default()).unwrap();
    let opts = RcgOptions {
        max_iter: 50,
        ..RcgOptions::default()
    };
    let (a, ta) = rcg_minimize(&cost, start.clone(), &opts, &NoClock).unwrap();
    let (b, tb) = rcg_minimize(&cost, start, &opts, &NoClock).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
}

#[test]
fn linear_cost_converges_toward_the_best_vertex() {
    // Minimizing ⟨C, Y⟩ over the interior drifts toward the optimal assignment.
    let c = Mat::from_fn(4, 4, |i, j| ((i + 2 * j) % 4) as f64);
    let cost = FnCost {
        cost: |y: &AlignmentMatrix| Ok(c.dot(y.as_mat())),
        egrad: |_: &AlignmentMatrix| Ok(c.clone()),
    };
    let opts = RcgOptions {
        max_iter: 200,
        ..RcgOptions::default()
    };
    let start = initial_point(4, &InitOptions::default(), &ManifoldConfig::default()).unwrap();
    let (y, trace) = rcg_minimize(&cost, start, &opts, &NoClock).unwrap();
    assert!(trace.is_monotone());
    let best = permutations(4)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let value = cost.cost(&y).unwrap();
    assert!(value >= best - 1e-8 && value < best + 0.05, "{value} vs {best}");
}

#[test]
fn stationary_start_stops_immediately() {
    let cost = FnCost {
        cost: |_: &AlignmentMatrix| Ok(1.0),
        egrad: |y: &AlignmentMatrix| Ok(Mat::zeros(y.n(), y.n())),
    };
    let (_, trace) = rcg_minimize(&cost, uniform_point(5).unwrap(), &RcgOptions::default(), &NoClock).unwrap();
    assert_eq!(trace.termination, Termination::GradientTolerance);
    assert_eq!(trace.accepted_steps(), 0);
}

#[test]
fn warm_start_keeps_the_small_block_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let y = random_point(4, 2.0, &mut rng);
    let big = warm_start_expand(&y, 8, &ManifoldConfig::default()).unwrap();
    assert!(big.marginal_deviation() <= 1e-10);
    // The leading block stays proportional to the small solution.
    let ratio = big.get(0, 0) / y.get(0, 0);
    for i in 0..4 {
        for j in 0..4 {
            assert!((big.get(i, j) / y.get(i, j) - ratio).abs() < 1e-6 * ratio);
        }
    }
}

#[test]
fn curriculum_recovers_block_planted_alignment() {
    // Frequency-consistent planting: the first 12 words map among themselves.
    let (n, d) = (24, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = unit_rows(&gaussian(n, d, &mut rng));
    let q = haar_orthogonal(d, &mut rng);
    let mut perm: Vec<usize> = (0..12).rev().collect();
    perm.extend((12..24).rev());
    let xq = x.matmul(&q).unwrap();
    let mut z = Mat::zeros(n, d);
    for (i, &j) in perm.iter().enumerate() {
        z.row_mut(j).copy_from_slice(xq.row(i));
    }
    let names = |p: &str| (0..n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    let src = EmbeddingMatrix::new(names("s"), x).unwrap();
    let tgt = EmbeddingMatrix::new(names("t"), z).unwrap();
    let schedule = CurriculumSchedule::new(vec![12, 24], 300).unwrap();
    let result =
        curriculum_align(&src, &tgt, &schedule, &RcgOptions::default(), &InitOptions::default(), &NoClock).unwrap();
    assert_eq!(result.stages.len(), 2);
    assert!(result.stages.iter().all(|s| s.trace.is_monotone()));
    let got = round_to_permutation(result.alignment.as_mat(), RoundingMode::Greedy).unwrap();
    assert_eq!(got, perm);
}

#[test]
fn gw_recovers_planted_alignment_at_every_epsilon() {
    let (x, z, perm) = planted(20, 5, 3);
    let cx = CovarianceOperator::new(x).unwrap();
    let cz = CovarianceOperator::new(z).unwrap();
    for epsilon in [1e-2, 1e-1] {
        let opts = GwOptions { epsilon, ..GwOptions::default() };
        let result = gw_align(&cx, &cz, &opts).unwrap();
        assert!(result.alignment.marginal_deviation() <= opts.sinkhorn_accept_tol, "{:e}", result.alignment.marginal_deviation());
        let got = round_to_permutation(result.alignment.as_mat(), RoundingMode::Greedy).unwrap();
        assert_eq!(got, perm, "epsilon {epsilon}");
    }
}

#[test]
fn sinkhorn_ot_plan_has_uniform_marginals_and_minimizes_entropic_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let cost = Mat::from_fn(5, 5, |_, _| rand::Rng::random_range(&mut rng, 0.0..1.0));
    let plan = sinkhorn_ot(&cost, 0.1, 1e-12, 10_000, SinkhornDomain::Auto).unwrap();
    for s in plan.row_sums().into_iter().chain(plan.col_sums()) {
        assert!((s - 0.2).abs() < 1e-12);
    }
    // Gibbs form: log T_ij + C_ij/ε = f_i + g_j, so mixed second differences vanish.
    let g = plan.zip_map(&cost, |t, c| t.ln() + c / 0.1);
    for i in 1..5 {
        for j in 1..5 {
            assert!((g[(i, j)] - g[(i, 0)] - g[(0, j)] + g[(0, 0)]).abs() < 1e-9);
        }
    }
}
