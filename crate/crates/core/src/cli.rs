//! Command-line front end. [`run`] parses arguments, merges them over an
//! optional JSON config file, logs the effective config and dispatches.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or I/O error.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::attention::AttentionVariant;
use crate::decoding::{summarize, BeamConfig};
use crate::embeddings::{MeanSentenceEncoder, PrecomputedSentenceStore, SentenceEncoder, WordVectorStore};
use crate::metrics::{
    holdout_stats, pearson, rouge_multi, score_report, scoring_tokens, vert_score, HoldoutStats, RougeResult,
    ScoreRow, VertConfig, VertResult, DEFAULT_ALPHA, HOLDOUT_BINS,
};
use crate::textproc::{
    build_vocab, filter_pairs, load_parallel, preprocess, read_lines, save_parallel, synth_corpus, Corpus, Pair,
    Stopwords,
};
use crate::transformer::{load_checkpoint, save_checkpoint, Model, ModelConfig, TrainConfig, Trainer};

/// Data root used when `--corpus` is not given.
pub const DATA_ENV: &str = "SUMKIT_DATA";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub pairs: usize,
    pub vocab: usize,
    pub k: usize,
    /// Trailing pairs written as the test split.
    pub holdout: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { pairs: 5000, vocab: 200, k: 4, holdout: 500 }
    }
}

/// Every setting a command may read. Defaults, then the config file, then flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: Option<PathBuf>,
    pub src: Option<PathBuf>,
    pub tgt: Option<PathBuf>,
    pub hyp: Option<PathBuf>,
    pub refs: Vec<PathBuf>,
    pub wordvecs: Option<PathBuf>,
    pub wordvecs_bin: Option<PathBuf>,
    pub sent_vecs: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub human: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub alpha: f64,
    pub vocab_size: usize,
    /// Width of the seeded random word vectors used when none are supplied.
    pub random_vec_dim: usize,
    pub variants: Vec<AttentionVariant>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub beam: BeamConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            corpus: None,
            src: None,
            tgt: None,
            hyp: None,
            refs: Vec::new(),
            wordvecs: None,
            wordvecs_bin: None,
            sent_vecs: None,
            stopwords: None,
            checkpoint: None,
            scores: None,
            human: None,
            out: None,
            alpha: DEFAULT_ALPHA,
            vocab_size: 20000,
            random_vec_dim: 50,
            variants: AttentionVariant::ALL.to_vec(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            beam: BeamConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "sumkit", version, about = "Sentence summarization toolkit: transformer training, beam decoding, ROUGE and VERT scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Normalize, tokenize and filter raw parallel text into <out>/train.{src,tgt}
    Preprocess {
        #[command(flatten)]
        common: CommonFlags,
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        stopwords: Option<PathBuf>,
    },
    /// Write a synthetic corpus to <out>/{train,test}.{src,tgt}
    Synth {
        #[command(flatten)]
        common: CommonFlags,
        #[command(flatten)]
        synth: SynthFlags,
    },
    /// Train a model and write a checkpoint to <out>
    Train {
        #[command(flatten)]
        common: CommonFlags,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Beam-decode each line of --src with a checkpoint
    Summarize {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        src: Option<PathBuf>,
        #[command(flatten)]
        decode: DecodeFlags,
    },
    /// ROUGE and VERT report for --hyp against --refs
    Score {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        hyp: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        refs: Vec<PathBuf>,
        #[command(flatten)]
        vectors: VectorFlags,
        #[arg(long)]
        byte_cap: Option<usize>,
    },
    /// Hold out each reference against the others of its document
    Holdout {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long, value_delimiter = ',')]
        refs: Vec<PathBuf>,
        #[command(flatten)]
        vectors: VectorFlags,
    },
    /// Train and evaluate one model per attention variant
    Sweep {
        #[command(flatten)]
        common: CommonFlags,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        decode: DecodeFlags,
        #[command(flatten)]
        vectors: VectorFlags,
        #[command(flatten)]
        synth: SynthFlags,
    },
    /// Pearson correlation of report columns with human scores
    Correlate {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        human: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Default)]
struct CommonFlags {
    /// JSON file with RunConfig fields; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct DataFlags {
    /// Directory holding train.{src,tgt} and optionally test.{src,tgt}
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    src: Option<PathBuf>,
    #[arg(long)]
    tgt: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct ModelFlags {
    #[arg(long)]
    variant: Option<AttentionVariant>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_tokens: Option<usize>,
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long)]
    vocab_size: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct DecodeFlags {
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    max_words: Option<usize>,
    #[arg(long)]
    byte_cap: Option<usize>,
    #[arg(long)]
    length_bonus: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct VectorFlags {
    /// Text-format word vectors (sentence similarity; also WMD if no binary file)
    #[arg(long)]
    wordvecs: Option<PathBuf>,
    /// Binary-format word vectors (WMD; also similarity if no text file)
    #[arg(long)]
    wordvecs_bin: Option<PathBuf>,
    /// Precomputed sentence vectors, TSV
    #[arg(long)]
    sent_vecs: Option<PathBuf>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct SynthFlags {
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    holdout: Option<usize>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

impl CommonFlags {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| data(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        set(&mut cfg.seed, self.seed);
        set_opt(&mut cfg.out, self.out.clone());
        Ok(cfg)
    }
}

impl DataFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        set_opt(&mut cfg.corpus, self.corpus.clone());
        set_opt(&mut cfg.src, self.src.clone());
        set_opt(&mut cfg.tgt, self.tgt.clone());
    }
}

impl ModelFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.variant {
            cfg.model.variant = v;
            cfg.variants = vec![v];
        }
        set(&mut cfg.model.layers, self.layers);
        set(&mut cfg.model.d_model, self.d_model);
        set(&mut cfg.model.heads, self.heads);
        set(&mut cfg.model.d_ff, self.d_ff);
        set(&mut cfg.model.dropout, self.dropout);
        set(&mut cfg.train.epochs, self.epochs);
        set(&mut cfg.train.batch_tokens, self.batch_tokens);
        set(&mut cfg.train.warmup, self.warmup);
        set(&mut cfg.vocab_size, self.vocab_size);
    }
}

impl DecodeFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.beam.beam_size, self.beam);
        set(&mut cfg.beam.max_words, self.max_words);
        set(&mut cfg.beam.byte_cap, self.byte_cap);
        set(&mut cfg.beam.length_bonus, self.length_bonus);
    }
}

impl VectorFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        set_opt(&mut cfg.wordvecs, self.wordvecs.clone());
        set_opt(&mut cfg.wordvecs_bin, self.wordvecs_bin.clone());
        set_opt(&mut cfg.sent_vecs, self.sent_vecs.clone());
        set_opt(&mut cfg.stopwords, self.stopwords.clone());
        set(&mut cfg.alpha, self.alpha);
    }
}

impl SynthFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.synth.pairs, self.pairs);
        set(&mut cfg.synth.vocab, self.vocab);
        set(&mut cfg.synth.k, self.k);
        set(&mut cfg.synth.holdout, self.holdout);
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("sumkit: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    let (name, cfg) = match &cmd {
        Command::Preprocess { common, data, stopwords } => {
            let mut c = common.load()?;
            data.apply(&mut c);
            set_opt(&mut c.stopwords, stopwords.clone());
            ("preprocess", c)
        }
        Command::Synth { common, synth } => {
            let mut c = common.load()?;
            synth.apply(&mut c);
            ("synth", c)
        }
        Command::Train { common, data, model } => {
            let mut c = common.load()?;
            data.apply(&mut c);
            model.apply(&mut c);
            ("train", c)
        }
        Command::Summarize { common, checkpoint, src, decode } => {
            let mut c = common.load()?;
            set_opt(&mut c.checkpoint, checkpoint.clone());
            set_opt(&mut c.src, src.clone());
            decode.apply(&mut c);
            ("summarize", c)
        }
        Command::Score { common, hyp, refs, vectors, byte_cap } => {
            let mut c = common.load()?;
            set_opt(&mut c.hyp, hyp.clone());
            if !refs.is_empty() {
                c.refs = refs.clone();
            }
            vectors.apply(&mut c);
            set(&mut c.beam.byte_cap, *byte_cap);
            ("score", c)
        }
        Command::Holdout { common, refs, vectors } => {
            let mut c = common.load()?;
            if !refs.is_empty() {
                c.refs = refs.clone();
            }
            vectors.apply(&mut c);
            ("holdout", c)
        }
        Command::Sweep { common, data, model, decode, vectors, synth } => {
            let mut c = common.load()?;
            data.apply(&mut c);
            model.apply(&mut c);
            decode.apply(&mut c);
            vectors.apply(&mut c);
            synth.apply(&mut c);
            ("sweep", c)
        }
        Command::Correlate { common, scores, human } => {
            let mut c = common.load()?;
            set_opt(&mut c.scores, scores.clone());
            set_opt(&mut c.human, human.clone());
            ("correlate", c)
        }
    };
    log::info!("{name} effective config: {}", serde_json::to_string(&cfg).expect("config serializes"));
    match name {
        "preprocess" => cmd_preprocess(&cfg),
        "synth" => cmd_synth(&cfg),
        "train" => cmd_train(&cfg),
        "summarize" => cmd_summarize(&cfg),
        "score" => cmd_score(&cfg),
        "holdout" => cmd_holdout(&cfg),
        "sweep" => cmd_variant_sweep(&cfg),
        _ => cmd_correlate(&cfg),
    }
}

/// Writes to `--out` when given, else stdout.
fn emit(cfg: &RunConfig, text: &str) -> Result<(), CliError> {
    match &cfg.out {
        Some(p) => fs::write(p, text).map_err(|e| data(format!("{}: {e}", p.display()))),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(data),
    }
}

fn required<'c>(p: &'c Option<PathBuf>, flag: &str) -> Result<&'c Path, CliError> {
    p.as_deref().ok_or_else(|| usage(format!("--{flag} is required")))
}

fn stopwords(cfg: &RunConfig) -> Result<Stopwords, CliError> {
    match &cfg.stopwords {
        Some(p) => Stopwords::load(p).map_err(data),
        None => Ok(Stopwords::builtin()),
    }
}

fn cmd_preprocess(cfg: &RunConfig) -> Result<(), CliError> {
    let src = read_lines(required(&cfg.src, "src")?).map_err(data)?;
    let tgt = read_lines(required(&cfg.tgt, "tgt")?).map_err(data)?;
    if src.len() != tgt.len() {
        return Err(data(format!("{} source lines but {} target lines", src.len(), tgt.len())));
    }
    let pairs: Vec<Pair> = src
        .iter()
        .zip(&tgt)
        .map(|(s, t)| Pair { source: preprocess(s), target: preprocess(t) })
        .filter(|p| !p.source.is_empty() && !p.target.is_empty())
        .collect();
    let before = pairs.len();
    let kept = filter_pairs(pairs, &stopwords(cfg)?);
    log::info!("preprocess: {} lines, {before} non-empty pairs, {} kept", src.len(), kept.len());
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    fs::create_dir_all(&out).map_err(|e| data(format!("{}: {e}", out.display())))?;
    let corpus = Corpus { pairs: kept, provenance: "preprocess".into() };
    save_parallel(&corpus, &out.join("train.src"), &out.join("train.tgt")).map_err(data)
}

fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    let s = &cfg.synth;
    if s.holdout >= s.pairs {
        return Err(usage(format!("holdout {} must be smaller than pairs {}", s.holdout, s.pairs)));
    }
    let corpus = synth_corpus(cfg.seed, s.pairs, s.vocab, s.k).map_err(|e| usage(e.to_string()))?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    fs::create_dir_all(&out).map_err(|e| data(format!("{}: {e}", out.display())))?;
    let (train, test) = corpus.pairs.split_at(s.pairs - s.holdout);
    let split = |p: &[Pair]| Corpus { pairs: p.to_vec(), provenance: corpus.provenance.clone() };
    save_parallel(&split(train), &out.join("train.src"), &out.join("train.tgt")).map_err(data)?;
    save_parallel(&split(test), &out.join("test.src"), &out.join("test.tgt")).map_err(data)?;
    log::info!("synth: {} train, {} test pairs in {}", train.len(), test.len(), out.display());
    Ok(())
}

/// Training pairs and optional test pairs from `--src/--tgt` or a corpus directory.
fn load_corpus(cfg: &RunConfig) -> Result<(Corpus, Option<Corpus>), CliError> {
    if let (Some(s), Some(t)) = (&cfg.src, &cfg.tgt) {
        return Ok((load_parallel(s, t).map_err(data)?, None));
    }
    if cfg.src.is_some() != cfg.tgt.is_some() {
        return Err(usage("--src and --tgt go together"));
    }
    let dir = match &cfg.corpus {
        Some(d) => d.clone(),
        None => std::env::var_os(DATA_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| usage(format!("--corpus (or {DATA_ENV}) is required")))?,
    };
    let train = load_parallel(&dir.join("train.src"), &dir.join("train.tgt")).map_err(data)?;
    let test_src = dir.join("test.src");
    let test = if test_src.exists() {
        Some(load_parallel(&test_src, &dir.join("test.tgt")).map_err(data)?)
    } else {
        None
    };
    Ok((train, test))
}

fn train_model(cfg: &RunConfig, model_cfg: ModelConfig, train: &Corpus) -> Result<(Model, crate::textproc::Vocab), CliError> {
    if train.pairs.is_empty() {
        return Err(data("training corpus is empty"));
    }
    let vocab = build_vocab(&train.pairs, cfg.vocab_size).map_err(|e| usage(e.to_string()))?;
    let model_cfg = ModelConfig { vocab_size: vocab.len(), ..model_cfg };
    let mut ids: Vec<(Vec<u32>, Vec<u32>)> = Vec::with_capacity(train.pairs.len());
    for p in &train.pairs {
        let mut s = vocab.encode(&p.source);
        let mut t = vocab.encode(&p.target);
        s.truncate(model_cfg.max_len);
        t.truncate(model_cfg.max_len - 1);
        ids.push((s, t));
    }
    let model = Model::new(model_cfg, cfg.seed).map_err(|e| usage(e.to_string()))?;
    let tcfg = TrainConfig { seed: cfg.seed, ..cfg.train.clone() };
    let mut trainer = Trainer::new(model, tcfg);
    let variant = trainer.model.config.variant;
    trainer
        .fit(&ids, |e, l| log::info!("{variant} epoch {e}: mean loss {l:.4}"))
        .map_err(data)?;
    Ok((trainer.model, vocab))
}

fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let (train, _) = load_corpus(cfg)?;
    let (model, vocab) = train_model(cfg, cfg.model.clone(), &train)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("model.ckpt"));
    save_checkpoint(&out, &model, &vocab).map_err(data)?;
    log::info!("train: {} parameters written to {}", model.params.count(), out.display());
    Ok(())
}

fn cmd_summarize(cfg: &RunConfig) -> Result<(), CliError> {
    let (model, vocab) = load_checkpoint(required(&cfg.checkpoint, "checkpoint")?).map_err(data)?;
    let lines = read_lines(required(&cfg.src, "src")?).map_err(data)?;
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        let toks = preprocess(line);
        if toks.is_empty() {
            return Err(data(format!("line {} is empty after preprocessing", i + 1)));
        }
        let words = summarize(&model, &vocab, &toks, &cfg.beam).map_err(data)?;
        out.push_str(&words.join(" "));
        out.push('\n');
    }
    emit(cfg, &out)
}

/// Word stores for WMD and similarity, from `--wordvecs-bin` / `--wordvecs`.
fn word_stores(cfg: &RunConfig) -> Result<Option<(WordVectorStore, WordVectorStore)>, CliError> {
    let text = cfg.wordvecs.as_deref().map(WordVectorStore::load_text).transpose().map_err(data)?;
    let bin = cfg.wordvecs_bin.as_deref().map(WordVectorStore::load_binary).transpose().map_err(data)?;
    Ok(match (text, bin) {
        (Some(t), Some(b)) => Some((b, t)),
        (Some(t), None) => Some((t.clone(), t)),
        (None, Some(b)) => Some((b.clone(), b)),
        (None, None) => None,
    })
}

fn with_vert<R>(
    cfg: &RunConfig,
    wmd_store: &WordVectorStore,
    sim_store: &WordVectorStore,
    f: impl FnOnce(&VertConfig) -> Result<R, CliError>,
) -> Result<R, CliError> {
    let sw = stopwords(cfg)?;
    let pre = cfg.sent_vecs.as_deref().map(PrecomputedSentenceStore::load).transpose().map_err(data)?;
    let mean = MeanSentenceEncoder { store: sim_store };
    let encoder: &dyn SentenceEncoder = match &pre {
        Some(p) => p,
        None => &mean,
    };
    let vc = VertConfig { alpha: cfg.alpha, stopwords: &sw, words: wmd_store, encoder };
    vc.validate().map_err(|e| usage(e.to_string()))?;
    f(&vc)
}

fn read_texts(paths: &[PathBuf]) -> Result<Vec<Vec<Vec<String>>>, CliError> {
    paths
        .iter()
        .map(|p| Ok(read_lines(p).map_err(data)?.iter().map(|l| scoring_tokens(l)).collect()))
        .collect()
}

fn cmd_score(cfg: &RunConfig) -> Result<(), CliError> {
    let hyp_path = required(&cfg.hyp, "hyp")?;
    if cfg.refs.is_empty() {
        return Err(usage("--refs is required"));
    }
    let (wmd_store, sim_store) =
        word_stores(cfg)?.ok_or_else(|| usage("--wordvecs or --wordvecs-bin is required"))?;
    let hyps = read_texts(std::slice::from_ref(&hyp_path.to_path_buf()))?.remove(0);
    let refs = read_texts(&cfg.refs)?;
    for (p, r) in cfg.refs.iter().zip(&refs) {
        if r.len() != hyps.len() {
            return Err(data(format!("{} has {} lines, hypotheses have {}", p.display(), r.len(), hyps.len())));
        }
    }
    let rows = with_vert(cfg, &wmd_store, &sim_store, |vc| {
        let mut rows = Vec::with_capacity(hyps.len());
        for (i, h) in hyps.iter().enumerate() {
            let rs: Vec<Vec<String>> = refs.iter().map(|r| r[i].clone()).collect();
            let rouge = rouge_multi(h, &rs, cfg.beam.byte_cap).map_err(data)?;
            let capped = crate::textproc::truncate_to_bytes(h, cfg.beam.byte_cap);
            let vert = vert_score(&capped, &rs, vc).map_err(data)?;
            rows.push(ScoreRow { id: (i + 1).to_string(), rouge, vert });
        }
        Ok(rows)
    })?;
    emit(cfg, &score_report(&rows))
}

/// Text rendering of holdout statistics.
pub fn holdout_report(st: &HoldoutStats) -> String {
    let mut out = String::from("wmd\tcount\n");
    for b in 0..HOLDOUT_BINS {
        let label = if b + 1 == HOLDOUT_BINS { format!("{b}+") } else { format!("{b}-{}", b + 1) };
        let _ = writeln!(out, "{label}\t{}", st.wmd_bins[b]);
    }
    let _ = writeln!(out, "comparisons\t{}", st.comparisons);
    let _ = writeln!(out, "mean_wmd\t{:.6}", st.mean_wmd);
    let _ = writeln!(out, "mean_sim\t{:.6}", st.mean_sim);
    let _ = writeln!(out, "mean_dis\t{:.6}", st.mean_dis);
    let _ = writeln!(out, "mean_vert\t{:.6}", st.mean_vert);
    out
}

fn cmd_holdout(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.refs.len() < 2 {
        return Err(usage("--refs needs at least two reference files"));
    }
    let (wmd_store, sim_store) =
        word_stores(cfg)?.ok_or_else(|| usage("--wordvecs or --wordvecs-bin is required"))?;
    let refs = read_texts(&cfg.refs)?;
    let n = refs[0].len();
    if refs.iter().any(|r| r.len() != n) {
        return Err(data("reference files differ in line count"));
    }
    let docs: Vec<Vec<Vec<String>>> = (0..n).map(|i| refs.iter().map(|r| r[i].clone()).collect()).collect();
    let st = with_vert(cfg, &wmd_store, &sim_store, |vc| holdout_stats(&docs, vc).map_err(data))?;
    emit(cfg, &holdout_report(&st))
}

/// Header of the variant comparison table.
pub const SWEEP_HEADER: &str = "variant\trg1\trg2\trgl\tvert_s\tvert_d\tvert";

/// Trains one model per configured variant and scores its test-set output.
pub fn cmd_variant_sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let (train, test) = match (&cfg.corpus, &cfg.src, std::env::var_os(DATA_ENV)) {
        (None, None, None) => {
            let s = &cfg.synth;
            if s.holdout == 0 || s.holdout >= s.pairs {
                return Err(usage("synthetic sweep needs 0 < holdout < pairs"));
            }
            log::info!("sweep: no corpus given, using synthetic seed {}", cfg.seed);
            let c = synth_corpus(cfg.seed, s.pairs, s.vocab, s.k).map_err(|e| usage(e.to_string()))?;
            let (a, b) = c.pairs.split_at(s.pairs - s.holdout);
            let mk = |p: &[Pair]| Corpus { pairs: p.to_vec(), provenance: c.provenance.clone() };
            (mk(a), Some(mk(b)))
        }
        _ => load_corpus(cfg)?,
    };
    let test = test.ok_or_else(|| usage("sweep needs a test split (<corpus>/test.{src,tgt})"))?;
    let stores = match word_stores(cfg)? {
        Some(s) => s,
        None => {
            let mut words: Vec<&String> = train.pairs.iter().chain(&test.pairs).flat_map(|p| p.source.iter().chain(&p.target)).collect();
            words.sort();
            words.dedup();
            log::warn!("sweep: no word vectors given, using seeded random vectors; VERT values are not semantic");
            let s = WordVectorStore::random(&words, cfg.random_vec_dim, cfg.seed);
            (s.clone(), s)
        }
    };
    let mut report = String::from(SWEEP_HEADER);
    report.push('\n');
    for &variant in &cfg.variants {
        let (model, vocab) = train_model(cfg, ModelConfig { variant, ..cfg.model.clone() }, &train)?;
        let row = with_vert(cfg, &stores.0, &stores.1, |vc| {
            let (mut r, mut v) = (RougeResult::default(), VertResult::default());
            for p in &test.pairs {
                let out = summarize(&model, &vocab, &p.source, &cfg.beam).map_err(data)?;
                let hyp = scoring_tokens(&out.join(" "));
                let reference = vec![scoring_tokens(&p.target.join(" "))];
                let rg = rouge_multi(&hyp, &reference, cfg.beam.byte_cap).map_err(data)?;
                let vt = vert_score(&hyp, &reference, vc).map_err(data)?;
                r.r1 += rg.r1;
                r.r2 += rg.r2;
                r.rl += rg.rl;
                v.sim += vt.sim;
                v.dis += vt.dis;
                v.vert += vt.vert;
            }
            let k = test.pairs.len().max(1) as f64;
            Ok(format!(
                "{variant}\t{:.2}\t{:.2}\t{:.2}\t{:.5}\t{:.5}\t{:.5}\n",
                r.r1 / k,
                r.r2 / k,
                r.rl / k,
                v.sim / k,
                v.dis / k,
                v.vert / k
            ))
        })?;
        log::info!("sweep row: {}", row.trim_end());
        report.push_str(&row);
    }
    emit(cfg, &report)
}

/// `id<TAB>score` lines; blank lines and a leading `id` header are skipped.
fn read_id_scores(path: &Path) -> Result<Vec<(String, f64)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in read_lines(path).map_err(data)?.iter().enumerate() {
        if line.trim().is_empty() || (i == 0 && line.starts_with("id\t")) {
            continue;
        }
        let (id, score) = line
            .split_once('\t')
            .ok_or_else(|| data(format!("{}:{}: expected id<TAB>score", path.display(), i + 1)))?;
        let s: f64 = score
            .trim()
            .parse()
            .map_err(|e| data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push((id.to_string(), s));
    }
    Ok(out)
}

/// Correlation table for the ROUGE and VERT columns of a score report.
pub fn correlate_report(report: &str, human: &[(String, f64)]) -> Result<String, CliError> {
    let mut lines = report.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| data("empty score report"))?.split('\t').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or_else(|| data(format!("report lacks column {name}")));
    let metrics = [("ROUGE-1", col("r1")?), ("ROUGE-2", col("r2")?), ("ROUGE-L", col("rl")?), ("VERT", col("vert")?)];
    let mut rows: HashMap<String, Vec<f64>> = HashMap::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.first() == Some(&"mean") || line.trim().is_empty() {
            continue;
        }
        if f.len() != header.len() {
            return Err(data(format!("report line {} has {} fields", i + 2, f.len())));
        }
        let vals = f[1..].iter().map(|x| x.parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(data)?;
        if rows.insert(f[0].to_string(), vals).is_some() {
            return Err(data(format!("duplicate id {} in report", f[0])));
        }
    }
    if rows.len() != human.len() {
        return Err(data(format!("report has {} ids, human file {}", rows.len(), human.len())));
    }
    let mut aligned = Vec::with_capacity(human.len());
    for (id, h) in human {
        let r = rows.get(id).ok_or_else(|| data(format!("id {id} missing from score report")))?;
        aligned.push((r, *h));
    }
    let ys: Vec<f64> = aligned.iter().map(|a| a.1).collect();
    if ys.iter().all(|&y| y == ys[0]) {
        return Err(data("human scores have zero variance"));
    }
    let mut out = String::from("metric\tpearson\tp_value\n");
    for (name, c) in metrics {
        let xs: Vec<f64> = aligned.iter().map(|a| a.0[c - 1]).collect();
        match pearson(&xs, &ys) {
            Ok(corr) => {
                let _ = writeln!(out, "{name}\t{:.4}\t{:.4}", corr.r, corr.p);
            }
            // A constant metric column has no correlation; the others still do.
            Err(e) => {
                log::warn!("{name}: {e}");
                let _ = writeln!(out, "{name}\tNA\tNA");
            }
        }
    }
    Ok(out)
}

fn cmd_correlate(cfg: &RunConfig) -> Result<(), CliError> {
    let scores = required(&cfg.scores, "scores")?;
    let human = read_id_scores(required(&cfg.human, "human")?)?;
    let report = fs::read_to_string(scores).map_err(|e| data(format!("{}: {e}", scores.display())))?;
    emit(cfg, &correlate_report(&report, &human)?)
}
