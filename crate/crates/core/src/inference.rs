//! Translation retrieval with CSLS scores, bilingual lexicon induction
//! precision, and rounding of soft alignments to permutations.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::embedding::{BilingualDictionary, EmbeddingMatrix};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, Mat};
use crate::procrustes::LinearMap;

pub const DEFAULT_CSLS_K: usize = 10;
pub const DEFAULT_BLOCK: usize = 1024;
/// Largest size accepted by [`RoundingMode::Exact`].
pub const EXACT_ASSIGNMENT_MAX_N: usize = 512;

/// Mean of the `k` largest values, summed in descending order.
fn top_k_mean(values: &mut [f64], k: usize) -> f64 {
    let desc = |a: &f64, b: &f64| b.total_cmp(a);
    if k < values.len() {
        values.select_nth_unstable_by(k - 1, desc);
    }
    let top = &mut values[..k];
    top.sort_unstable_by(desc);
    top.iter().sum::<f64>() / k as f64
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("neighbourhood size k={k} must lie in [1, {n}]")));
    }
    Ok(())
}

/// Mean cosine similarity of each query to its `k` nearest targets. Rows are
/// assumed unit-normalised, so cosines are dot products.
pub fn knn_mean_sim(queries: &Mat, targets: &Mat, k: usize, block: usize) -> Result<Vec<f64>> {
    check_dim("knn_mean_sim embedding dimension", queries.cols(), targets.cols())?;
    check_k(k, targets.rows())?;
    let block = block.max(1);
    let mut out = Vec::with_capacity(queries.rows());
    let mut start = 0;
    while start < queries.rows() {
        let end = (start + block).min(queries.rows());
        let chunk = Mat::from_vec(end - start, queries.cols(), queries.as_slice()[start * queries.cols()..end * queries.cols()].to_vec());
        let mut sims = chunk.matmul_nt(targets)?;
        for i in 0..sims.rows() {
            out.push(top_k_mean(sims.row_mut(i), k));
        }
        start = end;
    }
    Ok(out)
}

/// Ranked retrieval results: for each query, `(target index, score)` pairs in
/// non-increasing score order.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub neighbors: Vec<Vec<(usize, f64)>>,
}

impl RetrievalResult {
    pub fn top1(&self) -> Vec<Option<usize>> {
        self.neighbors.iter().map(|r| r.first().map(|&(j, _)| j)).collect()
    }
}

/// Higher score first, then lower index.
fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

fn top_k_ranked(scores: impl Iterator<Item = (usize, f64)>, topk: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = scores.collect();
    let topk = topk.min(all.len());
    if topk == 0 {
        return Vec::new();
    }
    if topk < all.len() {
        all.select_nth_unstable_by(topk - 1, rank_order);
        all.truncate(topk);
    }
    all.sort_unstable_by(rank_order);
    all
}

/// CSLS retrieval: `score(s, t) = 2·cos(s, t) − r_T(s) − r_S(t)`.
///
/// `r_T(s)` is the mean similarity of `s` to its `k` nearest targets and
/// `r_S(t)` the mean similarity of `t` to its `k` nearest mapped sources.
/// When one side has fewer than `k` rows, its neighbourhood is the whole side.
pub fn csls_retrieve(sources: &Mat, targets: &Mat, k: usize, topk: usize, block: usize) -> Result<RetrievalResult> {
    let all: Vec<usize> = (0..sources.rows()).collect();
    csls_retrieve_rows(sources, &all, targets, k, topk, block)
}

/// As [`csls_retrieve`] but only for the listed source rows; the
/// neighbourhood terms still use every source and target.
pub fn csls_retrieve_rows(
    sources: &Mat,
    query_rows: &[usize],
    targets: &Mat,
    k: usize,
    topk: usize,
    block: usize,
) -> Result<RetrievalResult> {
    check_dim("csls embedding dimension", sources.cols(), targets.cols())?;
    if k == 0 {
        return Err(Error::InvalidArgument("CSLS k must be >= 1".into()));
    }
    if sources.rows() == 0 || targets.rows() == 0 {
        return Err(Error::InvalidArgument("CSLS needs nonempty sources and targets".into()));
    }
    if let Some(&bad) = query_rows.iter().find(|&&r| r >= sources.rows()) {
        return Err(Error::InvalidArgument(format!("query row {bad} out of range")));
    }
    let target_density = knn_mean_sim(targets, sources, k.min(sources.rows()), block)?;
    let queries = Mat::from_fn(query_rows.len(), sources.cols(), |i, j| sources[(query_rows[i], j)]);
    let source_density = knn_mean_sim(&queries, targets, k.min(targets.rows()), block)?;

    let block = block.max(1);
    let mut neighbors = Vec::with_capacity(query_rows.len());
    let mut start = 0;
    while start < queries.rows() {
        let end = (start + block).min(queries.rows());
        let chunk = Mat::from_vec(end - start, queries.cols(), queries.as_slice()[start * queries.cols()..end * queries.cols()].to_vec());
        let cos = chunk.matmul_nt(targets)?;
        for i in 0..cos.rows() {
            let rs = source_density[start + i];
            let scores = cos
                .row(i)
                .iter()
                .zip(&target_density)
                .enumerate()
                .map(|(j, (&c, &rt))| (j, 2.0 * c - rs - rt));
            neighbors.push(top_k_ranked(scores, topk));
        }
        start = end;
    }
    Ok(RetrievalResult { neighbors })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionReport {
    /// Fraction of evaluated queries with a gold translation at rank 1.
    pub p_at_1: f64,
    pub p_at_5: f64,
    pub evaluated_queries: usize,
    pub skipped_oov: usize,
    pub hits_at_1: usize,
    pub hits_at_5: usize,
}

impl PrecisionReport {
    pub fn total_queries(&self) -> usize {
        self.evaluated_queries + self.skipped_oov
    }

    /// P@1 with out-of-vocabulary queries counted as misses.
    pub fn p_at_1_all(&self) -> f64 {
        ratio(self.hits_at_1, self.total_queries())
    }

    pub fn p_at_5_all(&self) -> f64 {
        ratio(self.hits_at_5, self.total_queries())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn unit_rows(m: &Mat) -> Mat {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = libm::sqrt(dot(row, row));
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Maps the source vocabulary by `w`, retrieves over the full target
/// vocabulary with CSLS, and scores every in-vocabulary dictionary query.
/// A query is a hit at `k` when any gold translation is among its top `k`.
pub fn evaluate_bli(
    w: &LinearMap,
    source: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
    dict: &BilingualDictionary,
    csls_k: usize,
    block: usize,
) -> Result<PrecisionReport> {
    check_dim("map vs source dimension", w.dim(), source.dim())?;
    check_dim("map vs target dimension", w.dim(), target.dim())?;
    let (queries, skipped_oov) = dict.resolve(source, target);
    if queries.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    let mapped = unit_rows(&w.apply(source.vectors())?);
    let targets = unit_rows(target.vectors());
    let rows: Vec<usize> = queries.iter().map(|(s, _)| *s).collect();
    let retrieved = csls_retrieve_rows(&mapped, &rows, &targets, csls_k, 5, block)?;

    let mut hits_at_1 = 0;
    let mut hits_at_5 = 0;
    for ((_, gold), ranked) in queries.iter().zip(&retrieved.neighbors) {
        let rank = ranked.iter().position(|(j, _)| gold.contains(j));
        match rank {
            Some(0) => {
                hits_at_1 += 1;
                hits_at_5 += 1;
            }
            Some(_) => hits_at_5 += 1,
            None => {}
        }
    }
    let evaluated = queries.len();
    Ok(PrecisionReport {
        p_at_1: ratio(hits_at_1, evaluated),
        p_at_5: ratio(hits_at_5, evaluated),
        evaluated_queries: evaluated,
        skipped_oov,
        hits_at_1,
        hits_at_5,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoundingMode {
    /// Repeatedly take the largest remaining entry.
    #[default]
    Greedy,
    /// Maximum-weight assignment (Hungarian algorithm), n ≤ 512.
    Exact,
}

/// Rounds a square matrix to a permutation `perm` with row `i` → column `perm[i]`.
pub fn round_to_permutation(y: &Mat, mode: RoundingMode) -> Result<Vec<usize>> {
    if !y.is_square() {
        return Err(Error::DimensionMismatch {
            context: "round_to_permutation needs a square matrix",
            expected: y.rows(),
            actual: y.cols(),
        });
    }
    if !y.is_finite() {
        return Err(Error::NonFiniteInput("round_to_permutation"));
    }
    match mode {
        RoundingMode::Greedy => Ok(greedy_assignment(y)),
        RoundingMode::Exact => max_weight_assignment(y),
    }
}

fn greedy_assignment(y: &Mat) -> Vec<usize> {
    let n = y.rows();
    let mut order: Vec<(u32, u32)> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            order.push((i as u32, j as u32));
        }
    }
    order.sort_unstable_by(|a, b| {
        y[(b.0 as usize, b.1 as usize)]
            .total_cmp(&y[(a.0 as usize, a.1 as usize)])
            .then(a.cmp(b))
    });
    let mut perm = vec![usize::MAX; n];
    let mut col_used = vec![false; n];
    let mut assigned = 0;
    for (i, j) in order {
        let (i, j) = (i as usize, j as usize);
        if perm[i] == usize::MAX && !col_used[j] {
            perm[i] = j;
            col_used[j] = true;
            assigned += 1;
            if assigned == n {
                break;
            }
        }
    }
    perm
}

/// Hungarian algorithm with potentials, maximizing `Σ y[i][perm[i]]`.
fn max_weight_assignment(y: &Mat) -> Result<Vec<usize>> {
    let n = y.rows();
    if n > EXACT_ASSIGNMENT_MAX_N {
        return Err(Error::InvalidArgument(format!(
            "exact assignment supports n <= {EXACT_ASSIGNMENT_MAX_N}, got {n}"
        )));
    }
    // 1-based arrays; index 0 is the virtual column.
    let cost = |i: usize, j: usize| -y[(i - 1, j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[matched_row[j] - 1] = j - 1;
    }
    Ok(perm)
}

/// Fraction of rows where `perm` agrees with `truth`.
pub fn permutation_accuracy(perm: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = perm.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knn_self_similarity_and_full_neighbourhood() {
        let t = Mat::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[0.6, 0.8]]);
        let q = Mat::from_rows(&[&[0.0, 1.0]]);
        assert_eq!(knn_mean_sim(&q, &t, 1, 8).unwrap(), vec![1.0]);
        let all = knn_mean_sim(&q, &t, 3, 8).unwrap()[0];
        assert!((all - 1.8 / 3.0).abs() < 1e-15);
        assert!(knn_mean_sim(&q, &t, 0, 8).is_err());
        assert!(knn_mean_sim(&q, &t, 4, 8).is_err());
    }

    #[test]
    fn single_pair_scores_zero() {
        let s = Mat::from_rows(&[&[0.6, 0.8]]);
        let t = Mat::from_rows(&[&[1.0, 0.0]]);
        let r = csls_retrieve(&s, &t, 1, 1, 4).unwrap();
        assert_eq!(r.neighbors[0].len(), 1);
        assert_eq!(r.neighbors[0][0].0, 0);
        assert!(r.neighbors[0][0].1.abs() < 1e-15);
    }

    #[test]
    fn ties_break_to_lower_index() {
        let s = Mat::from_rows(&[&[1.0, 0.0]]);
        let t = Mat::from_rows(&[&[0.0, 1.0], &[0.0, 1.0], &[0.0, -1.0]]);
        let r = csls_retrieve(&s, &t, 1, 3, 4).unwrap();
        let idx: Vec<usize> = r.neighbors[0].iter().map(|p| p.0).collect();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn greedy_rounding_tie_breaks_and_dominant_entries() {
        let uniform = Mat::filled(4, 4, 0.25);
        assert_eq!(round_to_permutation(&uniform, RoundingMode::Greedy).unwrap(), vec![0, 1, 2, 3]);
        let perm = [2usize, 0, 3, 1];
        let n = 4;
        let eps = 0.5 / (n * n) as f64;
        let y = Mat::from_fn(n, n, |i, j| if perm[i] == j { 1.0 - 3.0 * eps } else { eps });
        for mode in [RoundingMode::Greedy, RoundingMode::Exact] {
            assert_eq!(round_to_permutation(&y, mode).unwrap(), perm.to_vec());
        }
    }

    #[test]
    fn exact_beats_greedy_when_it_should() {
        // Greedy takes 10 then is forced into 1; the optimum is 9 + 9.
        let y = Mat::from_rows(&[&[10.0, 9.0], &[9.0, 1.0]]);
        assert_eq!(round_to_permutation(&y, RoundingMode::Greedy).unwrap(), vec![0, 1]);
        assert_eq!(round_to_permutation(&y, RoundingMode::Exact).unwrap(), vec![1, 0]);
        let big = Mat::zeros(EXACT_ASSIGNMENT_MAX_N + 1, EXACT_ASSIGNMENT_MAX_N + 1);
        assert!(round_to_permutation(&big, RoundingMode::Exact).is_err());
        assert!(round_to_permutation(&Mat::zeros(2, 3), RoundingMode::Greedy).is_err());
    }

    #[test]
    fn accuracy_counts_matches() {
        assert_eq!(permutation_accuracy(&[0, 1, 2, 3], &[0, 1, 3, 2]), 0.5);
    }

    #[test]
    fn precision_report_fractions() {
        let r = PrecisionReport {
            p_at_1: 0.5,
            p_at_5: 0.75,
            evaluated_queries: 4,
            skipped_oov: 4,
            hits_at_1: 2,
            hits_at_5: 3,
        };
        assert_eq!(r.total_queries(), 8);
        assert_eq!(r.p_at_1_all(), 0.25);
        assert_eq!(r.p_at_5_all(), 0.375);
    }
}
