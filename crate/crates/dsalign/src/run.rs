//! End-to-end alignment and evaluation runs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dsalign_core::embedding::EmbeddingMatrix;
use dsalign_core::gw_baseline::gw_align;
use dsalign_core::inference::{csls_retrieve_rows, evaluate_bli, round_to_permutation, PrecisionReport};
use dsalign_core::optimizer::{curriculum_align, Clock, Termination};
use dsalign_core::procrustes::{procrustes_from_permutation, procrustes_solve, LinearMap};
use dsalign_core::{AlignmentMatrix, CovarianceOperator, Mat};
use serde::{Deserialize, Serialize};

use crate::config::{Method, NormalizationArg, RunConfig};
use crate::error::{AppError, AppResult, DataError};
use crate::formats::{self, MatrixFormat, TraceRecord};

pub const MAPPING_FILE: &str = "mapping.bin";
pub const MAPPING_TEXT_FILE: &str = "mapping.txt";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.tsv";
pub const PERMUTATION_FILE: &str = "permutation.txt";

/// Tolerance on `WᵀW = I` when loading a stored mapping.
const MAP_ORTHOGONALITY_TOL: f64 = 1e-6;

/// Wall time since construction.
#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        WallClock(Instant::now())
    }
}

impl Clock for WallClock {
    fn elapsed_millis(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputInfo {
    pub path: PathBuf,
    pub words: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub load_ms: f64,
    pub align_ms: f64,
    pub procrustes_ms: f64,
    pub evaluate_ms: Option<f64>,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub n: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Fisher norm of the final Riemannian gradient; absent for GW.
    pub final_grad_norm: Option<f64>,
    pub iterations: usize,
    pub termination: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub p_at_1: f64,
    pub p_at_5: f64,
    pub evaluated_queries: usize,
    pub skipped_oov: usize,
}

impl From<&PrecisionReport> for ReportSummary {
    fn from(r: &PrecisionReport) -> Self {
        ReportSummary {
            p_at_1: r.p_at_1,
            p_at_5: r.p_at_5,
            evaluated_queries: r.evaluated_queries,
            skipped_oov: r.skipped_oov,
        }
    }
}

/// Everything needed to repeat and audit a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub config: RunConfig,
    pub source: InputInfo,
    pub target: InputInfo,
    pub timings: Timings,
    pub stages: Vec<StageSummary>,
    pub procrustes_rank_deficient: bool,
    pub report: Option<ReportSummary>,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct AlignOutcome {
    pub map: LinearMap,
    pub alignment: AlignmentMatrix,
    pub permutation: Option<Vec<usize>>,
    pub report: Option<PrecisionReport>,
    pub manifest: Manifest,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn load_normalized(path: &Path, max_vocab: Option<usize>, mode: NormalizationArg) -> AppResult<EmbeddingMatrix> {
    let raw = formats::load_embeddings(path, max_vocab)?;
    Ok(raw.normalized(mode.into())?)
}

fn termination_name(t: Termination) -> String {
    match t {
        Termination::GradientTolerance => "gradient-tolerance",
        Termination::MaxIterations => "max-iterations",
        Termination::LineSearchStalled => "line-search-stalled",
    }
    .to_string()
}

/// Loads both languages, learns the alignment on the training vocabulary,
/// extracts the orthogonal mapping, writes the artifacts, and evaluates when
/// a dictionary is configured.
pub fn run_align(config: &RunConfig) -> AppResult<AlignOutcome> {
    let start = Instant::now();
    let source = load_normalized(&config.source, config.max_vocab, config.normalization)?;
    let target = load_normalized(&config.target, config.max_vocab, config.normalization)?;
    if source.dim() != target.dim() {
        return Err(DataError::format(
            &config.target,
            format!("dimension {} differs from the source dimension {}", target.dim(), source.dim()),
        )
        .into());
    }
    for (e, path) in [(&source, &config.source), (&target, &config.target)] {
        if e.len() < config.train_vocab {
            return Err(DataError::format(
                path,
                format!("holds {} words but training needs {}", e.len(), config.train_vocab),
            )
            .into());
        }
    }
    let dictionary = config
        .dictionary
        .as_deref()
        .map(|p| formats::load_dictionary_for(p, &source, &target))
        .transpose()?;
    let load_ms = ms_since(start);
    log::info!(
        "loaded {} source and {} target words of dimension {}",
        source.len(),
        target.len(),
        source.dim()
    );

    let n = config.train_vocab;
    let x = source.truncated(n);
    let z = target.truncated(n);
    let align_start = Instant::now();
    let (alignment, stages, trace) = match config.method {
        Method::Mba => {
            let clock = WallClock::start();
            let result = curriculum_align(
                &x,
                &z,
                &config.schedule()?,
                &config.rcg_options(),
                &config.init_options(),
                &clock,
            )?;
            let mut trace = Vec::new();
            let mut stages = Vec::new();
            for stage in &result.stages {
                trace.extend(stage.trace.records.iter().map(|r| TraceRecord {
                    stage: stage.n,
                    iteration: r.iteration,
                    objective: r.objective,
                    grad_norm: Some(r.grad_norm),
                    step: (r.iteration > 0).then_some(r.step),
                    millis: Some(r.millis),
                }));
                stages.push(StageSummary {
                    n: stage.n,
                    initial_objective: stage.initial_objective,
                    final_objective: stage.trace.final_objective(),
                    final_grad_norm: Some(stage.trace.final_grad_norm()),
                    iterations: stage.trace.accepted_steps(),
                    termination: termination_name(stage.trace.termination),
                });
            }
            (result.alignment, stages, trace)
        }
        Method::Gw => {
            let cx = CovarianceOperator::new(x.vectors().clone())?;
            let cz = CovarianceOperator::new(z.vectors().clone())?;
            let result = gw_align(&cx, &cz, &config.gw_options())?;
            let trace: Vec<TraceRecord> = result
                .objective_history
                .iter()
                .enumerate()
                .map(|(k, &objective)| TraceRecord {
                    stage: n,
                    iteration: k + 1,
                    objective,
                    grad_norm: None,
                    step: None,
                    millis: None,
                })
                .collect();
            let last = result.objective_history.last().copied().unwrap_or(f64::NAN);
            let stages = vec![StageSummary {
                n,
                initial_objective: result.objective_history.first().copied().unwrap_or(f64::NAN),
                final_objective: last,
                final_grad_norm: None,
                iterations: result.objective_history.len(),
                termination: "max-iterations".into(),
            }];
            (result.alignment, stages, trace)
        }
    };
    let align_ms = ms_since(align_start);

    let procrustes_start = Instant::now();
    let permutation = config
        .rounding
        .mode()
        .map(|mode| round_to_permutation(alignment.as_mat(), mode))
        .transpose()?;
    let solution = match &permutation {
        Some(perm) => procrustes_from_permutation(x.vectors(), perm, z.vectors())?,
        None => procrustes_solve(x.vectors(), alignment.as_mat(), z.vectors())?,
    };
    let procrustes_ms = ms_since(procrustes_start);

    let out = &config.output;
    std::fs::create_dir_all(out).map_err(|e| DataError::io(out, e))?;
    let mut artifacts = vec![MAPPING_FILE.to_string(), TRACE_FILE.to_string()];
    formats::write_matrix(&out.join(MAPPING_FILE), solution.map.matrix(), MatrixFormat::Binary)?;
    if config.text_matrix {
        formats::write_matrix(&out.join(MAPPING_TEXT_FILE), solution.map.matrix(), MatrixFormat::Text)?;
        artifacts.push(MAPPING_TEXT_FILE.into());
    }
    formats::write_trace(&out.join(TRACE_FILE), &trace)?;
    if let Some(perm) = &permutation {
        write_permutation(&out.join(PERMUTATION_FILE), perm, &x, &z)?;
        artifacts.push(PERMUTATION_FILE.into());
    }

    let mut evaluate_ms = None;
    let report = match &dictionary {
        Some(dict) => {
            let t = Instant::now();
            let report = evaluate_bli(&solution.map, &source, &target, dict, config.csls_k, config.retrieval_block)?;
            std::fs::write(out.join(REPORT_FILE), formats::format_report(&report))
                .map_err(|e| DataError::io(&out.join(REPORT_FILE), e))?;
            artifacts.push(REPORT_FILE.into());
            evaluate_ms = Some(ms_since(t));
            log::info!("P@1 {:.4}, P@5 {:.4}", report.p_at_1, report.p_at_5);
            Some(report)
        }
        None => None,
    };

    artifacts.push(MANIFEST_FILE.into());
    let manifest = Manifest {
        tool: "dsalign".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        core_version: dsalign_core::VERSION.into(),
        config: config.clone(),
        source: InputInfo {
            path: config.source.clone(),
            words: source.len(),
            dim: source.dim(),
        },
        target: InputInfo {
            path: config.target.clone(),
            words: target.len(),
            dim: target.dim(),
        },
        timings: Timings {
            load_ms,
            align_ms,
            procrustes_ms,
            evaluate_ms,
            total_ms: ms_since(start),
        },
        stages,
        procrustes_rank_deficient: solution.rank_deficient,
        report: report.as_ref().map(ReportSummary::from),
        artifacts,
    };
    let manifest_path = out.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| DataError::format(&manifest_path, e.to_string()))?;
    std::fs::write(&manifest_path, json + "\n").map_err(|e| DataError::io(&manifest_path, e))?;

    Ok(AlignOutcome {
        map: solution.map,
        alignment,
        permutation,
        report,
        manifest,
    })
}

fn write_permutation(path: &Path, perm: &[usize], x: &EmbeddingMatrix, z: &EmbeddingMatrix) -> AppResult<()> {
    let text: String = perm
        .iter()
        .enumerate()
        .map(|(i, &j)| format!("{} {}\n", x.vocab()[i], z.vocab()[j]))
        .collect();
    std::fs::write(path, text).map_err(|e| DataError::io(path, e).into())
}

/// Inputs of `dsalign evaluate`.
#[derive(Debug, Clone)]
pub struct EvaluateConfig {
    pub map: PathBuf,
    pub source: PathBuf,
    pub target: PathBuf,
    pub dictionary: PathBuf,
    pub max_vocab: Option<usize>,
    pub normalization: NormalizationArg,
    pub csls_k: usize,
    pub retrieval_block: usize,
    /// Where to write the precision report, besides standard output.
    pub report: Option<PathBuf>,
    /// Where to write the top-5 translations of every query.
    pub ranked: Option<PathBuf>,
}

/// Scores a stored mapping on a test dictionary over the full loaded vocabularies.
pub fn run_evaluate(config: &EvaluateConfig) -> AppResult<PrecisionReport> {
    if config.csls_k == 0 || config.retrieval_block == 0 {
        return Err(AppError::Usage("--csls-k and --retrieval-block must be >= 1".into()));
    }
    let matrix: Mat = formats::load_matrix(&config.map)?;
    let map = LinearMap::new(matrix, MAP_ORTHOGONALITY_TOL)
        .map_err(|e| DataError::format(&config.map, e.to_string()))?;
    let source = load_normalized(&config.source, config.max_vocab, config.normalization)?;
    let target = load_normalized(&config.target, config.max_vocab, config.normalization)?;
    for (e, path) in [(&source, &config.source), (&target, &config.target)] {
        if e.dim() != map.dim() {
            return Err(DataError::format(
                path,
                format!("dimension {} does not match the mapping dimension {}", e.dim(), map.dim()),
            )
            .into());
        }
    }
    let dict = formats::load_dictionary_for(&config.dictionary, &source, &target)?;
    let report = evaluate_bli(&map, &source, &target, &dict, config.csls_k, config.retrieval_block)?;
    if let Some(path) = &config.report {
        std::fs::write(path, formats::format_report(&report)).map_err(|e| DataError::io(path, e))?;
    }
    if let Some(path) = &config.ranked {
        let (queries, _) = dict.resolve(&source, &target);
        let rows: Vec<usize> = queries.iter().map(|(s, _)| *s).collect();
        let mapped = unit_rows(map.apply(source.vectors())?);
        let retrieved = csls_retrieve_rows(
            &mapped,
            &rows,
            target.vectors(),
            config.csls_k,
            5,
            config.retrieval_block,
        )?;
        formats::write_ranked_pairs(path, &rows, &retrieved, &source, &target)?;
    }
    Ok(report)
}

fn unit_rows(mut m: Mat) -> Mat {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    m
}
