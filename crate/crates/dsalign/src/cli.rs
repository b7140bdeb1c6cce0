//! The `dsalign` command line.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};

use crate::benchmark::{format_table, run_benchmark, BenchmarkConfig};
use crate::config::{AlignSettings, Method, NormalizationArg, RunConfig};
use crate::error::{exit, AppError, AppResult};
use crate::formats;
use crate::run::{run_align, run_evaluate, EvaluateConfig};
use crate::synthetic::{generate, SyntheticSpec};

#[derive(Debug, Parser)]
#[command(name = "dsalign", version, about = "Unsupervised word-embedding alignment over doubly stochastic matrices")]
struct Cli {
    /// More log output (-v info, -vv debug, -vvv trace). RUST_LOG overrides.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn an alignment and the orthogonal mapping it induces.
    Align(Box<AlignArgs>),
    /// Score a stored mapping on a bilingual test dictionary.
    Evaluate(EvaluateArgs),
    /// Write a planted-permutation fixture.
    GenSynthetic(GenSyntheticArgs),
    /// Time objective and gradient evaluations over a size grid.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
struct AlignArgs {
    /// TOML or JSON file with any of the flags below (a run manifest also works).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: AlignSettings,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Mapping written by `align`.
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    dictionary: PathBuf,
    /// Words loaded per language (all when unset).
    #[arg(long)]
    max_vocab: Option<usize>,
    #[arg(long, value_enum, default_value = "unit")]
    normalization: NormalizationArg,
    #[arg(long, default_value_t = 10)]
    csls_k: usize,
    #[arg(long, default_value_t = 1024)]
    retrieval_block: usize,
    /// Also write the report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the top-5 translations of every query as TSV.
    #[arg(long)]
    ranked: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct GenSyntheticArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    /// Standard deviation of the Gaussian noise added to target vectors.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Vocabulary prefixes the planted permutation maps onto themselves, comma separated.
    #[arg(long, value_delimiter = ',')]
    frequency_blocks: Vec<usize>,
    /// Receives source.vec, target.vec and dictionary.txt.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    /// Vocabulary sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [256, 512, 1024])]
    n: Vec<usize>,
    /// Embedding dimensions, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [16])]
    d: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Method::Mba, Method::Gw])]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    /// Minimum timed repetitions per cell; the fastest is reported.
    #[arg(long, default_value_t = 7)]
    reps: usize,
    /// Keep timing each cell until this many milliseconds have been spent.
    #[arg(long, default_value_t = 250.0)]
    min_time_ms: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the table to this file.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

pub const SOURCE_FILE: &str = "source.vec";
pub const TARGET_FILE: &str = "target.vec";
pub const DICTIONARY_FILE: &str = "dictionary.txt";

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> AppResult<T> + Send) -> AppResult<T> {
    match threads {
        None => f(),
        Some(0) => Err(AppError::Usage("--threads must be >= 1".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| AppError::Usage(format!("cannot start {t} threads: {e}")))?
            .install(f),
    }
}

fn align(args: AlignArgs) -> AppResult<()> {
    let file = args.config.as_deref().map(AlignSettings::from_file).transpose()?;
    let config = RunConfig::resolve(args.settings, file)?;
    let outcome = with_threads(config.threads, || run_align(&config))?;
    println!("wrote {}", config.output.display());
    if let Some(report) = &outcome.report {
        print!("{}", formats::format_report(report));
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> AppResult<()> {
    let config = EvaluateConfig {
        map: args.map,
        source: args.source,
        target: args.target,
        dictionary: args.dictionary,
        max_vocab: args.max_vocab,
        normalization: args.normalization,
        csls_k: args.csls_k,
        retrieval_block: args.retrieval_block,
        report: args.report,
        ranked: args.ranked,
    };
    let report = with_threads(args.threads, || run_evaluate(&config))?;
    print!("{}", formats::format_report(&report));
    Ok(())
}

fn gen_synthetic(args: GenSyntheticArgs) -> AppResult<()> {
    if !args.noise.is_finite() || args.noise < 0.0 {
        return Err(AppError::Usage(format!("--noise must be >= 0, got {}", args.noise)));
    }
    let spec = SyntheticSpec::new(args.n, args.d, args.noise, args.seed).with_blocks(args.frequency_blocks);
    let fixture = generate(&spec)?;
    let dir = &args.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| crate::error::DataError::io(dir, e))?;
    formats::write_embeddings(&dir.join(SOURCE_FILE), &fixture.source)?;
    formats::write_embeddings(&dir.join(TARGET_FILE), &fixture.target)?;
    formats::write_dictionary(&dir.join(DICTIONARY_FILE), &fixture.dictionary())?;
    println!("wrote {} words of dimension {} to {}", args.n, args.d, dir.display());
    Ok(())
}

fn benchmark(args: BenchmarkArgs) -> AppResult<()> {
    let config = BenchmarkConfig {
        ns: args.n,
        ds: args.d,
        methods: args.methods,
        warmup: args.warmup,
        reps: args.reps,
        min_time_ms: args.min_time_ms,
        seed: args.seed,
    };
    let rows = with_threads(args.threads, || run_benchmark(&config))?;
    let table = format_table(&rows);
    if let Some(path) = &args.output {
        std::fs::write(path, &table).map_err(|e| crate::error::DataError::io(path, e))?;
    }
    print!("{table}");
    Ok(())
}

/// Parses `args` (including the program name), runs the command, and returns
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
        }
    };
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Align(a) => align(*a),
        Command::Evaluate(a) => evaluate(a),
        Command::GenSynthetic(a) => gen_synthetic(a),
        Command::Benchmark(a) => benchmark(a),
    };
    match result {
        Ok(()) => exit::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
