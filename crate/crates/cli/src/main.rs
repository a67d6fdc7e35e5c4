use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use topiccp::calibrate::{calibrate_permutation, calibrate_simulation, Approach, CalibrateConfig};
use topiccp::corpus::{read_raw, split_three_way, Corpus, CorpusFormat, RawDocument, SplitScheme, Vocabulary};
use topiccp::cpstat::write_trace;
use topiccp::eval::{score_detection, EvalReport};
use topiccp::lda::{estimate_topic_counts, select_model, LdaConfig, TopicModel};
use topiccp::lsa::{lsa_detect, lsa_embed, singular_spectrum, write_scree, LsaDetectConfig, LsaEmbedding, LsaOptions, TermDocument, Weighting};
use topiccp::segment::{detect_full, ChangepointResult, DetectConfig, ScoredInterval};
use topiccp::synthgen::{generate, random_spec, DocLength, GroundTruth, RandomSpecParams};

#[derive(Parser)]
#[command(name = "topiccp", version, about = "Changepoints in the topic proportions of a time-ordered corpus")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "TOPICCP_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its ground truth.
    Gen(GenArgs),
    /// Fit LDA over a grid of topic counts and keep the best held-out model.
    FitTopics(FitArgs),
    /// Compute per-length null thresholds.
    Calibrate(CalibrateArgs),
    /// Run the full detection pipeline.
    Detect(DetectArgs),
    /// Score a detection result against ground truth.
    Eval(EvalArgs),
    /// Latent semantic analysis baseline.
    #[command(subcommand)]
    Lsa(LsaCommand),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long = "T", env = "TOPICCP_T")]
    num_docs: usize,
    #[arg(long = "V", env = "TOPICCP_V")]
    vocab_size: usize,
    #[arg(long = "K", env = "TOPICCP_K")]
    num_topics: usize,
    #[arg(long = "M", env = "TOPICCP_M")]
    num_changes: usize,
    #[arg(long, default_value_t = 1.0, env = "TOPICCP_NORM")]
    norm: f64,
    #[arg(long, default_value_t = 0.5, env = "TOPICCP_EPS")]
    eps: f64,
    /// Smallest gap between changes (default T/60).
    #[arg(long)]
    min_gap: Option<usize>,
    /// Largest gap between changes (default T/10).
    #[arg(long)]
    max_gap: Option<usize>,
    #[arg(long, default_value_t = 50)]
    doc_min: usize,
    #[arg(long, default_value_t = 200)]
    doc_max: usize,
    #[arg(long, default_value_t = 0, env = "TOPICCP_SEED")]
    seed: u64,
    /// Existing directory receiving corpus.jsonl and truth.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CorpusArgs {
    /// JSONL corpus, one document per line.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Tokens)]
    format: Format,
    /// Fixed vocabulary, one word per line.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Drop words occurring fewer times than this across the corpus.
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    /// File of words to drop, one per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tokens,
    Counts,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    ThirdsInterleaved,
    QuartersInterleaved,
}

#[derive(Clone, Copy, ValueEnum)]
enum ApproachArg {
    Permutation,
    Simulation,
}

#[derive(Args)]
struct LdaArgs {
    /// Candidate topic counts.
    #[arg(long, value_delimiter = ',', default_value = "5,10,15,20", env = "TOPICCP_K_GRID")]
    k_grid: Vec<usize>,
    #[arg(long, default_value_t = 300)]
    lda_iters: usize,
    #[arg(long, default_value_t = 150)]
    lda_burn_in: usize,
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    #[arg(long, value_enum, default_value_t = Split::ThirdsInterleaved)]
    split: Split,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    lda: LdaArgs,
    #[arg(long, default_value_t = 0, env = "TOPICCP_SEED")]
    seed: u64,
    /// Model JSON to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ThresholdArgs {
    /// Minimum interval length.
    #[arg(long, default_value_t = 20, env = "TOPICCP_DELTA")]
    delta: usize,
    /// Threshold quantile in (0, 1].
    #[arg(long, default_value_t = 0.5, env = "TOPICCP_ETA")]
    eta: f64,
    /// Use the maximum of the null sample (quantile 1.0).
    #[arg(long)]
    conservative: bool,
    /// Null samples per grid length.
    #[arg(long, default_value_t = 100)]
    calibration_intervals: usize,
    #[arg(long, default_value_t = 0, env = "TOPICCP_SEED")]
    seed: u64,
}

impl ThresholdArgs {
    fn eta(&self) -> f64 {
        if self.conservative {
            1.0
        } else {
            self.eta
        }
    }
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Model from fit-topics.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::ThirdsInterleaved)]
    split: Split,
    #[arg(long, value_enum, default_value_t = ApproachArg::Permutation)]
    approach: ApproachArg,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    /// Threshold CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Baseline {
    Lsa,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    lda: LdaArgs,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[arg(long, value_enum, default_value_t = ApproachArg::Permutation)]
    approach: ApproachArg,
    /// Sampled intervals (default five times the series length).
    #[arg(long, env = "TOPICCP_NUM_INTERVALS")]
    num_intervals: Option<usize>,
    /// Run a baseline instead of the topic model pipeline.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Embedding rank for the LSA baseline.
    #[arg(long, default_value_t = 10)]
    lsa_k: usize,
    #[arg(long)]
    tfidf: bool,
    /// Existing directory receiving result.json, thresholds.csv and trace.csv.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Result JSON from detect.
    #[arg(long)]
    result: PathBuf,
    /// Ground truth JSON from gen.
    #[arg(long)]
    truth: PathBuf,
    /// Tolerance in documents.
    #[arg(long, default_value_t = 50)]
    window: usize,
    /// Report path (default stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum LsaCommand {
    /// Write every singular value of the term-document matrix.
    Scree {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        tfidf: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the rank-k document embedding.
    Embed {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        tfidf: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect changes in a stored embedding.
    Detect {
        #[arg(long)]
        embedding: PathBuf,
        #[command(flatten)]
        thresholds: ThresholdArgs,
        #[arg(long)]
        num_intervals: Option<usize>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn split_scheme(s: Split) -> SplitScheme {
    match s {
        Split::ThirdsInterleaved => SplitScheme::ThirdsInterleaved,
        Split::QuartersInterleaved => SplitScheme::QuartersInterleaved,
    }
}

fn approach(a: ApproachArg) -> Approach {
    match a {
        ApproachArg::Permutation => Approach::Permutation,
        ApproachArg::Simulation => Approach::Simulation,
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn load(args: &CorpusArgs) -> Result<Corpus> {
    let format = match args.format {
        Format::Tokens => CorpusFormat::TokensJsonl,
        Format::Counts => CorpusFormat::CountsJsonl,
    };
    let mut raw = read_raw(&args.corpus, format).with_context(|| format!("reading {}", args.corpus.display()))?;
    let stop: HashSet<String> = match &args.stopwords {
        Some(p) => read_lines(p)?.into_iter().collect(),
        None => HashSet::new(),
    };
    if !stop.is_empty() || args.min_count > 1 {
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for d in &raw {
            for w in &d.tokens {
                *freq.entry(w.as_str()).or_default() += 1;
            }
        }
        let keep: HashSet<String> = freq
            .into_iter()
            .filter(|&(w, c)| c >= args.min_count && !stop.contains(w))
            .map(|(w, _)| w.to_string())
            .collect();
        let before = raw.len();
        raw = raw
            .into_iter()
            .filter_map(|mut d: RawDocument| {
                d.tokens.retain(|w| keep.contains(w));
                (!d.tokens.is_empty()).then_some(d)
            })
            .collect();
        if raw.len() < before {
            log::warn!("dropped {} documents left empty by preprocessing", before - raw.len());
        }
    }
    let vocab = match &args.vocab {
        Some(p) => Some(Vocabulary::new(read_lines(p)?)?),
        None => None,
    };
    Ok(Corpus::from_raw(raw, vocab)?)
}

fn require_dir(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        bail!("output directory {} does not exist", dir.display());
    }
    Ok(())
}

fn lda_config(args: &LdaArgs, seed: u64) -> LdaConfig {
    LdaConfig {
        iters: args.lda_iters,
        burn_in: args.lda_burn_in,
        beta: args.beta,
        seed,
        ..LdaConfig::default()
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_scored(path: &Path, trace: &[ScoredInterval]) -> Result<()> {
    let rows: Vec<_> = trace.iter().map(ScoredInterval::trace_row).collect();
    Ok(write_trace(path, &rows)?)
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    require_dir(&a.out_dir)?;
    let mut p = RandomSpecParams::new(a.num_docs, a.vocab_size, a.num_topics, a.num_changes);
    p.norm = a.norm;
    p.epsilon = a.eps;
    if let Some(g) = a.min_gap {
        p.min_gap = g;
    }
    if let Some(g) = a.max_gap {
        p.max_gap = g;
    }
    p.doc_length = DocLength {
        min: a.doc_min,
        max: a.doc_max,
    };
    p.seed = a.seed;
    let spec = random_spec(&p)?;
    let (corpus, truth) = generate(&spec)?;
    corpus.write_tokens_jsonl(&a.out_dir.join("corpus.jsonl"))?;
    truth.write(&a.out_dir.join("truth.json"))?;
    log::info!("wrote {} documents with {} changes", corpus.len(), truth.changepoints.len());
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let corpus = load(&a.corpus)?;
    let split = split_three_way(&corpus, split_scheme(a.lda.split))?;
    let sel = select_model(&split.w_tilde_1, &split.w_tilde_2, &a.lda.k_grid, &lda_config(&a.lda, a.seed))?;
    sel.best.save(&a.out)?;
    let scores: Vec<_> = sel
        .scores
        .iter()
        .map(|(k, s)| serde_json::json!({"K": k, "log_perplexity": s}))
        .collect();
    println!("{}", serde_json::json!({"selected_k": sel.best.num_topics(), "scores": scores}));
    Ok(())
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let corpus = load(&a.corpus)?;
    let model = TopicModel::load(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let split = split_three_way(&corpus, split_scheme(a.split))?;
    let z = estimate_topic_counts(&model, &split.w)?;
    let cfg = CalibrateConfig {
        delta: a.thresholds.delta,
        num_intervals: a.thresholds.calibration_intervals,
        eta: a.thresholds.eta(),
        seed: a.thresholds.seed,
        ..CalibrateConfig::default()
    };
    let table = match approach(a.approach) {
        Approach::Simulation => {
            let lengths = z.doc_lengths();
            let dl = DocLength {
                min: *lengths.iter().min().expect("non-empty") as usize,
                max: *lengths.iter().max().expect("non-empty") as usize,
            };
            calibrate_simulation(&model, z.num_docs(), dl, &cfg)?
        }
        _ => calibrate_permutation(&z, &cfg)?,
    };
    table.write_csv(&a.out)?;
    Ok(())
}

fn cmd_detect(a: DetectArgs) -> Result<()> {
    require_dir(&a.out_dir)?;
    let corpus = load(&a.corpus)?;
    let t = &a.thresholds;
    if a.baseline == Some(Baseline::Lsa) {
        let opts = LsaOptions {
            weighting: if a.tfidf { Weighting::TfIdf } else { Weighting::Raw },
            full_spectrum: false,
            ..LsaOptions::default()
        };
        let emb = lsa_embed(&corpus, a.lsa_k, &opts)?;
        return run_lsa_detect(&emb, t, a.num_intervals, &a.out_dir, Some(&corpus));
    }
    let cfg = DetectConfig {
        split: split_scheme(a.lda.split),
        k_grid: a.lda.k_grid.clone(),
        lda: lda_config(&a.lda, t.seed),
        delta: t.delta,
        eta: t.eta(),
        num_intervals: a.num_intervals,
        calibration_intervals: t.calibration_intervals,
        approach: approach(a.approach),
        seed: t.seed,
        ..DetectConfig::default()
    };
    let d = detect_full(&corpus, &cfg)?;
    d.result.write(&a.out_dir.join("result.json"))?;
    d.thresholds.write_csv(&a.out_dir.join("thresholds.csv"))?;
    write_scored(&a.out_dir.join("trace.csv"), &d.trace)?;
    println!("{}", serde_json::to_string(&d.result.full_positions)?);
    Ok(())
}

fn run_lsa_detect(
    emb: &LsaEmbedding,
    t: &ThresholdArgs,
    num_intervals: Option<usize>,
    out_dir: &Path,
    corpus: Option<&Corpus>,
) -> Result<()> {
    require_dir(out_dir)?;
    let cfg = LsaDetectConfig {
        delta: t.delta,
        eta: t.eta(),
        num_intervals,
        calibration_intervals: t.calibration_intervals,
        seed: t.seed,
        ..LsaDetectConfig::default()
    };
    let mut d = lsa_detect(emb, &cfg)?;
    if let Some(c) = corpus {
        d.result.time_indices = d.result.changepoints.iter().map(|&i| c.documents()[i].time_index).collect();
    }
    d.result.write(&out_dir.join("result.json"))?;
    d.thresholds.write_csv(&out_dir.join("thresholds.csv"))?;
    write_scored(&out_dir.join("trace.csv"), &d.trace)?;
    println!("{}", serde_json::to_string(&d.result.full_positions)?);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let result = ChangepointResult::read(&a.result).with_context(|| format!("reading {}", a.result.display()))?;
    let truth = GroundTruth::read(&a.truth).with_context(|| format!("reading {}", a.truth.display()))?;
    let metrics = score_detection(&result.full_positions, &truth.changepoints, a.window);
    let report = EvalReport {
        estimated: result.full_positions,
        truth: truth.changepoints,
        metrics,
    };
    match a.out {
        Some(p) => write_json(&p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn cmd_lsa(c: LsaCommand) -> Result<()> {
    let weighting = |tfidf: bool| if tfidf { Weighting::TfIdf } else { Weighting::Raw };
    match c {
        LsaCommand::Scree { corpus, tfidf, out } => {
            let corpus = load(&corpus)?;
            write_scree(&out, &singular_spectrum(&TermDocument::new(&corpus, weighting(tfidf))))?;
        }
        LsaCommand::Embed { corpus, k, tfidf, out } => {
            let corpus = load(&corpus)?;
            let opts = LsaOptions {
                weighting: weighting(tfidf),
                full_spectrum: false,
                ..LsaOptions::default()
            };
            lsa_embed(&corpus, k, &opts)?.write(&out)?;
        }
        LsaCommand::Detect {
            embedding,
            thresholds,
            num_intervals,
            out_dir,
        } => {
            let emb = LsaEmbedding::read(&embedding).with_context(|| format!("reading {}", embedding.display()))?;
            run_lsa_detect(&emb, &thresholds, num_intervals, &out_dir, None)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::FitTopics(a) => cmd_fit(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Lsa(c) => cmd_lsa(c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
