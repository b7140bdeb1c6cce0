//! Run configuration for `dsalign align`.
//!
//! Every setting is a command-line flag and, under the same kebab-case name,
//! a key of the configuration file. Values resolve in the order built-in
//! default < preset < configuration file < command line.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use dsalign_core::embedding::Normalization;
use dsalign_core::gw_baseline::GwOptions;
use dsalign_core::inference::RoundingMode;
use dsalign_core::optimizer::{BetaRule, CurriculumSchedule, InitOptions, RcgOptions};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult, DataError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Bi-directional covariance matching with Riemannian conjugate gradient.
    #[default]
    Mba,
    /// Entropic Gromov-Wasserstein.
    Gw,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mba => "mba",
            Method::Gw => "gw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BetaRuleArg {
    /// Polak-Ribière with negative values clipped to zero.
    #[default]
    PrPlus,
    /// Fletcher-Reeves.
    Fr,
    /// Steepest descent (β = 0).
    Sd,
}

impl From<BetaRuleArg> for BetaRule {
    fn from(b: BetaRuleArg) -> Self {
        match b {
            BetaRuleArg::PrPlus => BetaRule::PolakRibierePlus,
            BetaRuleArg::Fr => BetaRule::FletcherReeves,
            BetaRuleArg::Sd => BetaRule::SteepestDescent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationArg {
    /// Scale rows to unit length.
    #[default]
    Unit,
    /// Subtract the mean vector, then scale rows to unit length.
    CenterUnit,
}

impl From<NormalizationArg> for Normalization {
    fn from(n: NormalizationArg) -> Self {
        match n {
            NormalizationArg::Unit => Normalization::UnitNorm,
            NormalizationArg::CenterUnit => Normalization::CenterThenUnit,
        }
    }
}

/// How the learned alignment feeds the Procrustes step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    /// Use the doubly stochastic matrix as a soft correspondence.
    #[default]
    None,
    /// Round greedily to a permutation first.
    Greedy,
    /// Round to the maximum-weight permutation first.
    Exact,
}

impl Rounding {
    pub fn mode(self) -> Option<RoundingMode> {
        match self {
            Rounding::None => None,
            Rounding::Greedy => Some(RoundingMode::Greedy),
            Rounding::Exact => Some(RoundingMode::Exact),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Small enough for a laptop: 4000 training words, curriculum from 250.
    #[default]
    Desk,
    /// 20000 training words, curriculum doubling from 1000.
    Paper,
}

/// Settings as given on the command line or in a configuration file. Unset
/// fields fall through to the next source.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct AlignSettings {
    /// Alignment method.
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Source-language embeddings (text vector format).
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Target-language embeddings (text vector format).
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Test dictionary; when given, the run also writes a precision report.
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    /// Output directory for the artifacts.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Words loaded per language (all when unset). Evaluation retrieves over
    /// every loaded word.
    #[arg(long)]
    pub max_vocab: Option<usize>,
    /// Most frequent words used to learn the alignment.
    #[arg(long)]
    pub train_vocab: Option<usize>,
    /// Explicit curriculum stage sizes, comma separated; the last one is the
    /// training vocabulary.
    #[arg(long, value_delimiter = ',')]
    pub curriculum: Option<Vec<usize>>,
    /// First stage of the doubling curriculum used when no explicit stages are given.
    #[arg(long)]
    pub curriculum_start: Option<usize>,
    /// Conjugate-gradient iterations per curriculum stage.
    #[arg(long)]
    pub iters_per_stage: Option<usize>,
    /// Stop a stage once the Fisher norm of the Riemannian gradient falls below this.
    #[arg(long)]
    pub grad_tol: Option<f64>,
    /// Sufficient-decrease constant of the Armijo line search.
    #[arg(long)]
    pub armijo_c1: Option<f64>,
    /// Step shrink factor of the Armijo line search.
    #[arg(long)]
    pub backtrack_factor: Option<f64>,
    /// First trial step of the first line search.
    #[arg(long)]
    pub initial_step: Option<f64>,
    /// Inflation of the quadratic-model guess for later first trial steps (0 disables the guess).
    #[arg(long)]
    pub step_optimism: Option<f64>,
    /// Largest log-change of any alignment entry allowed by a first trial step.
    #[arg(long)]
    pub max_log_change: Option<f64>,
    /// Conjugate-gradient β rule.
    #[arg(long, value_enum)]
    pub beta_rule: Option<BetaRuleArg>,
    /// Restart along the negative gradient every this many iterations (0 never).
    #[arg(long)]
    pub restart_every: Option<usize>,
    /// Size of the random perturbation of the uniform starting point.
    #[arg(long)]
    pub init_noise: Option<f64>,
    /// Entropic regularization of the Gromov-Wasserstein baseline.
    #[arg(long)]
    pub gw_epsilon: Option<f64>,
    /// Outer iterations of the Gromov-Wasserstein baseline.
    #[arg(long)]
    pub gw_outer_iters: Option<usize>,
    /// Rescale both covariances to unit maximum entry before Gromov-Wasserstein.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub gw_rescale: Option<bool>,
    /// Embedding normalization applied after loading.
    #[arg(long, value_enum)]
    pub normalization: Option<NormalizationArg>,
    /// Rounding applied to the alignment before Procrustes.
    #[arg(long, value_enum)]
    pub rounding: Option<Rounding>,
    /// Neighbourhood size of the CSLS score.
    #[arg(long)]
    pub csls_k: Option<usize>,
    /// Queries scored together during retrieval (bounds memory).
    #[arg(long)]
    pub retrieval_block: Option<usize>,
    /// Seed from which all randomness of the run derives.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (1 gives bit-reproducible results; default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Also write the mapping as text next to the binary file.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub text_matrix: Option<bool>,
    /// Bundle of size defaults.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

impl AlignSettings {
    /// Fills every unset field of `self` from `lower`.
    pub fn or(self, lower: AlignSettings) -> AlignSettings {
        macro_rules! merge {
            ($($f:ident),*) => {
                AlignSettings { $($f: self.$f.or(lower.$f)),* }
            };
        }
        merge!(
            method,
            source,
            target,
            dictionary,
            output,
            max_vocab,
            train_vocab,
            curriculum,
            curriculum_start,
            iters_per_stage,
            grad_tol,
            armijo_c1,
            backtrack_factor,
            initial_step,
            step_optimism,
            max_log_change,
            beta_rule,
            restart_every,
            init_noise,
            gw_epsilon,
            gw_outer_iters,
            gw_rescale,
            normalization,
            rounding,
            csls_k,
            retrieval_block,
            seed,
            threads,
            text_matrix,
            preset
        )
    }

    /// Reads a configuration file: TOML, or JSON (either the settings object
    /// itself or a run manifest, whose `config` member is used).
    pub fn from_file(path: &Path) -> Result<AlignSettings, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
        if is_json {
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| DataError::format(path, e.to_string()))?;
            let settings = match value.get("config") {
                Some(inner) if value.get("tool").is_some() => inner.clone(),
                _ => value,
            };
            serde_json::from_value(settings).map_err(|e| DataError::format(path, e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| DataError::format(path, e.to_string()))
        }
    }
}

fn preset_settings(preset: Preset) -> AlignSettings {
    let (train_vocab, start) = match preset {
        Preset::Desk => (4_000, 250),
        Preset::Paper => (20_000, 1_000),
    };
    AlignSettings {
        train_vocab: Some(train_vocab),
        curriculum_start: Some(start),
        ..AlignSettings::default()
    }
}

fn default_settings() -> AlignSettings {
    let rcg = RcgOptions::default();
    let gw = GwOptions::default();
    AlignSettings {
        method: Some(Method::Mba),
        iters_per_stage: Some(150),
        grad_tol: Some(rcg.grad_tol),
        armijo_c1: Some(rcg.armijo_c1),
        backtrack_factor: Some(rcg.backtrack_factor),
        initial_step: Some(rcg.initial_step),
        step_optimism: Some(rcg.step_optimism),
        max_log_change: Some(rcg.max_log_change),
        beta_rule: Some(BetaRuleArg::PrPlus),
        restart_every: Some(rcg.restart_every),
        init_noise: Some(InitOptions::default().noise_scale),
        gw_epsilon: Some(gw.epsilon),
        gw_outer_iters: Some(gw.outer_iters),
        gw_rescale: Some(gw.rescale_covariances),
        normalization: Some(NormalizationArg::Unit),
        rounding: Some(Rounding::None),
        csls_k: Some(10),
        retrieval_block: Some(1024),
        seed: Some(0),
        text_matrix: Some(false),
        preset: Some(Preset::Desk),
        ..AlignSettings::default()
    }
}

/// Fully resolved settings of one alignment run. Serialized into the run
/// manifest under the same keys a configuration file uses, so a manifest can
/// be fed back with `--config` to repeat the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunConfig {
    pub method: Method,
    pub source: PathBuf,
    pub target: PathBuf,
    pub dictionary: Option<PathBuf>,
    pub output: PathBuf,
    pub max_vocab: Option<usize>,
    pub train_vocab: usize,
    pub curriculum: Vec<usize>,
    pub iters_per_stage: usize,
    pub grad_tol: f64,
    pub armijo_c1: f64,
    pub backtrack_factor: f64,
    pub initial_step: f64,
    pub step_optimism: f64,
    pub max_log_change: f64,
    pub beta_rule: BetaRuleArg,
    pub restart_every: usize,
    pub init_noise: f64,
    pub gw_epsilon: f64,
    pub gw_outer_iters: usize,
    pub gw_rescale: bool,
    pub normalization: NormalizationArg,
    pub rounding: Rounding,
    pub csls_k: usize,
    pub retrieval_block: usize,
    pub seed: u64,
    pub threads: Option<usize>,
    pub text_matrix: bool,
    pub preset: Preset,
}

impl RunConfig {
    /// Resolves command-line settings over an optional configuration file.
    pub fn resolve(cli: AlignSettings, file: Option<AlignSettings>) -> AppResult<RunConfig> {
        let explicit = cli.or(file.unwrap_or_default());
        let preset = explicit.preset.unwrap_or_default();
        let s = explicit.clone().or(preset_settings(preset)).or(default_settings());
        let required = |v: Option<PathBuf>, flag: &str| v.ok_or_else(|| AppError::Usage(format!("--{flag} is required")));

        let (train_vocab, curriculum) = match (s.curriculum, s.curriculum_start) {
            (Some(stages), _) => {
                let last = *stages
                    .last()
                    .ok_or_else(|| AppError::Usage("--curriculum needs at least one stage".into()))?;
                if explicit.train_vocab.is_some_and(|t| t != last) {
                    return Err(AppError::Usage(format!(
                        "--train-vocab {} disagrees with the last curriculum stage {last}",
                        explicit.train_vocab.unwrap_or_default()
                    )));
                }
                (last, stages)
            }
            (None, start) => {
                let full = s.train_vocab.expect("defaulted");
                let start = start.expect("defaulted");
                if start < 2 || full < 2 {
                    return Err(AppError::Usage("--curriculum-start and --train-vocab must be >= 2".into()));
                }
                let schedule = CurriculumSchedule::doubling(start, full, 1)?;
                (full, schedule.stages().to_vec())
            }
        };

        let config = RunConfig {
            method: s.method.expect("defaulted"),
            source: required(s.source, "source")?,
            target: required(s.target, "target")?,
            dictionary: s.dictionary,
            output: required(s.output, "output")?,
            max_vocab: s.max_vocab,
            train_vocab,
            curriculum,
            iters_per_stage: s.iters_per_stage.expect("defaulted"),
            grad_tol: s.grad_tol.expect("defaulted"),
            armijo_c1: s.armijo_c1.expect("defaulted"),
            backtrack_factor: s.backtrack_factor.expect("defaulted"),
            initial_step: s.initial_step.expect("defaulted"),
            step_optimism: s.step_optimism.expect("defaulted"),
            max_log_change: s.max_log_change.expect("defaulted"),
            beta_rule: s.beta_rule.expect("defaulted"),
            restart_every: s.restart_every.expect("defaulted"),
            init_noise: s.init_noise.expect("defaulted"),
            gw_epsilon: s.gw_epsilon.expect("defaulted"),
            gw_outer_iters: s.gw_outer_iters.expect("defaulted"),
            gw_rescale: s.gw_rescale.expect("defaulted"),
            normalization: s.normalization.expect("defaulted"),
            rounding: s.rounding.expect("defaulted"),
            csls_k: s.csls_k.expect("defaulted"),
            retrieval_block: s.retrieval_block.expect("defaulted"),
            seed: s.seed.expect("defaulted"),
            threads: s.threads,
            text_matrix: s.text_matrix.expect("defaulted"),
            preset,
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> AppResult<()> {
        self.schedule()?;
        self.rcg_options().validate()?;
        self.gw_options().validate()?;
        if !(self.init_noise >= 0.0 && self.init_noise.is_finite()) {
            return Err(AppError::Usage(format!("--init-noise must be >= 0, got {}", self.init_noise)));
        }
        if self.csls_k == 0 || self.retrieval_block == 0 {
            return Err(AppError::Usage("--csls-k and --retrieval-block must be >= 1".into()));
        }
        if self.threads == Some(0) {
            return Err(AppError::Usage("--threads must be >= 1".into()));
        }
        if self.max_vocab.is_some_and(|m| m < self.train_vocab) {
            return Err(AppError::Usage(format!(
                "--max-vocab {} is below the training vocabulary {}",
                self.max_vocab.unwrap_or_default(),
                self.train_vocab
            )));
        }
        Ok(())
    }

    pub fn schedule(&self) -> AppResult<CurriculumSchedule> {
        Ok(CurriculumSchedule::new(self.curriculum.clone(), self.iters_per_stage)?)
    }

    pub fn rcg_options(&self) -> RcgOptions {
        RcgOptions {
            max_iter: self.iters_per_stage,
            grad_tol: self.grad_tol,
            armijo_c1: self.armijo_c1,
            backtrack_factor: self.backtrack_factor,
            initial_step: self.initial_step,
            step_optimism: self.step_optimism,
            max_log_change: self.max_log_change,
            beta_rule: self.beta_rule.into(),
            restart_every: self.restart_every,
            ..RcgOptions::default()
        }
    }

    pub fn init_options(&self) -> InitOptions {
        InitOptions {
            noise_scale: self.init_noise,
            seed: self.seed,
        }
    }

    pub fn gw_options(&self) -> GwOptions {
        GwOptions {
            epsilon: self.gw_epsilon,
            outer_iters: self.gw_outer_iters,
            rescale_covariances: self.gw_rescale,
            ..GwOptions::default()
        }
    }
}
