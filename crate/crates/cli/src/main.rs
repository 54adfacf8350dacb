use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use topickg::corpus::{load_corpus, CleaningRules, Corpus, CorpusError, LoadOptions};
use topickg::eval::{evaluate, export_tree, sweep, EvalError, EvalOptions, ExportInput, SweepGrid, WordVectors};
use topickg::model::checkpoint::{Checkpoint, CheckpointError};
use topickg::model::{ModelError, StrategyRegistry};
use topickg::taxonomy::{build_tree, parse_lexicon, read_tree, write_tree, TaxonomyError};
use topickg::trainer::{TrainConfig, TrainError, Trainer};

#[derive(Debug, Parser)]
#[command(name = "topickg", version, about = "Knowledge-guided hierarchical topic models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a topic tree from a vocabulary and a hypernym lexicon.
    BuildTree(BuildTreeArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint: topic metrics and document classification.
    Eval(EvalArgs),
    /// Write the learned topic hierarchy.
    Export(ExportArgs),
    /// Train and evaluate over a (β, s) grid with several seeds.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct CorpusArgs {
    /// Documents: one per line (text) or `doc_id word_id count` lines (triplets).
    #[arg(long)]
    docs: PathBuf,
    #[arg(long, default_value = "text")]
    format: String,
    /// Vocabulary file, one token per line; built from the documents when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// One integer label per document.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    min_count: u64,
    #[arg(long)]
    max_vocab: Option<usize>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Fraction of documents held out for classification.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

impl CorpusArgs {
    fn load(&self) -> Result<Corpus> {
        let mut rules = CleaningRules {
            min_count: self.min_count,
            max_vocab: self.max_vocab,
            ..Default::default()
        };
        if let Some(p) = &self.stopwords {
            rules.load_stopwords(p)?;
        }
        let opts = LoadOptions {
            format: self.format.parse()?,
            vocab_path: self.vocab.clone(),
            labels_path: self.labels.clone(),
            rules,
        };
        let corpus = load_corpus(&self.docs, &opts)?.with_split(self.test_fraction, self.split_seed)?;
        if !corpus.dropped().is_empty() {
            log::warn!("{} empty documents dropped", corpus.dropped().len());
        }
        Ok(corpus)
    }
}

/// One flag per configuration key; each overrides the config file.
#[derive(Debug, Args, Default)]
struct ConfigFlags {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    embed_dim: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    gcn_layers: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long)]
    anneal_period: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    iterations: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    rate: Option<String>,
    #[arg(long)]
    k_min: Option<String>,
    #[arg(long)]
    k_max: Option<String>,
    #[arg(long)]
    lam_min: Option<String>,
    #[arg(long)]
    lam_max: Option<String>,
    #[arg(long)]
    init_std: Option<String>,
    #[arg(long)]
    log_every: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<String>,
}

impl ConfigFlags {
    fn overrides(&self) -> [(&'static str, &Option<String>); 23] {
        [
            ("mode", &self.mode),
            ("layers", &self.layers),
            ("embed_dim", &self.embed_dim),
            ("hidden", &self.hidden),
            ("gcn_layers", &self.gcn_layers),
            ("beta", &self.beta),
            ("threshold", &self.threshold),
            ("anneal_period", &self.anneal_period),
            ("batch_size", &self.batch_size),
            ("learning_rate", &self.learning_rate),
            ("weight_decay", &self.weight_decay),
            ("epochs", &self.epochs),
            ("iterations", &self.iterations),
            ("seed", &self.seed),
            ("gamma", &self.gamma),
            ("rate", &self.rate),
            ("k_min", &self.k_min),
            ("k_max", &self.k_max),
            ("lam_min", &self.lam_min),
            ("lam_max", &self.lam_max),
            ("init_std", &self.init_std),
            ("log_every", &self.log_every),
            ("checkpoint_every", &self.checkpoint_every),
        ]
    }

    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                cfg.set(key, v)
                    .map_err(|reason| TrainError::Config { line: 0, reason })
                    .with_context(|| format!("--{key}"))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct BuildTreeArgs {
    /// Vocabulary file, one token per line.
    #[arg(long)]
    vocab: PathBuf,
    /// `<child> <parent>` lines.
    #[arg(long)]
    lexicon: PathBuf,
    /// `<term>\t<definition>` lines used to attach concept words.
    #[arg(long)]
    definitions: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    max_layers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    tree: PathBuf,
    #[command(flatten)]
    config: ConfigFlags,
    /// Checkpoint destination.
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration training curve (CSV).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Edges added or removed at every anneal event (CSV).
    #[arg(long)]
    revisions: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh model.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated metric names.
    #[arg(long, default_value = "tc,td,we")]
    metrics: String,
    /// Comma-separated topic layers; all when absent.
    #[arg(long)]
    layers: Option<String>,
    /// GloVe-style text vectors; the model's word embeddings otherwise.
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long)]
    no_classify: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// `text` or `dot`.
    #[arg(long, default_value = "text")]
    format: String,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    tree: PathBuf,
    #[command(flatten)]
    config: ConfigFlags,
    /// Comma-separated β values.
    #[arg(long, default_value = "50")]
    betas: String,
    /// Comma-separated thresholds s.
    #[arg(long, default_value = "0.4")]
    thresholds: String,
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value = "tc,td,we")]
    metrics: String,
    #[arg(long)]
    no_classify: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn split_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|_| EvalError::Usage(format!("bad {what} value `{t}`")).into()))
        .collect()
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn build_tree_cmd(a: &BuildTreeArgs) -> Result<()> {
    let vocab = topickg::corpus::read_vocab(&a.vocab)?;
    let pairs = parse_lexicon(&read_text(&a.lexicon)?)?;
    let mut defs = HashMap::new();
    if let Some(p) = &a.definitions {
        for line in read_text(p)?.lines() {
            if let Some((term, def)) = line.split_once('\t') {
                defs.insert(term.trim().to_string(), def.trim().to_string());
            }
        }
    }
    let (tree, report) = build_tree(&vocab, &pairs, a.max_layers, &defs)?;
    fs::write(&a.out, write_tree(&tree)).with_context(|| format!("cannot write {}", a.out.display()))?;
    println!("layers_top_down,{:?}", report.top_down_sizes());
    println!("excluded_words,{}", report.excluded_words.len());
    println!("multi_parent_terms,{}", report.multi_parent_terms);
    println!("collapsed_chains,{}", report.collapsed_chains);
    println!("padded_chains,{}", report.padded_chains);
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let corpus = a.corpus.load()?;
    let registry = StrategyRegistry::default();
    let mut trainer = match &a.resume {
        Some(p) => {
            let mut t = Trainer::from_checkpoint(&Checkpoint::load(p)?, &registry)?;
            let target = a.config.resolve()?;
            t.config.iterations = target.iterations;
            t.config.epochs = target.epochs;
            t
        }
        None => Trainer::new(read_tree(&a.tree)?, a.config.resolve()?, &registry)?,
    };
    trainer = trainer.with_checkpoint_path(&a.out);
    trainer.fit(&corpus)?;
    if let Some(p) = &a.report {
        emit(Some(p), &trainer.report.to_csv())?;
    }
    if let Some(p) = &a.revisions {
        emit(Some(p), &trainer.report.revisions_csv())?;
    }
    if let Some(last) = trainer.report.records.last() {
        println!("iteration,{}", last.iteration);
        println!("nll,{}", last.nll);
        println!("elbo,{}", last.elbo);
    }
    Ok(())
}

fn eval_options(metrics: &str, layers: Option<&str>, vectors: Option<&Path>, corpus: &Corpus, classify: bool) -> Result<EvalOptions> {
    Ok(EvalOptions {
        layers: layers.map(|l| split_list(l, "layer")).transpose()?,
        metrics: split_list(metrics, "metric")?,
        vectors: vectors
            .map(|p| -> Result<_> { Ok(WordVectors::parse(&read_text(p)?, corpus.vocab())?) })
            .transpose()?,
        reference_docs: None,
        classify,
    })
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let corpus = a.corpus.load()?;
    let t = Trainer::from_checkpoint(&Checkpoint::load(&a.checkpoint)?, &StrategyRegistry::default())?;
    let opts = eval_options(&a.metrics, a.layers.as_deref(), a.vectors.as_deref(), &corpus, !a.no_classify)?;
    let report = evaluate(&t.model, &t.graph, &corpus, &opts)?;
    emit(a.out.as_deref(), &report.to_csv())
}

fn export_cmd(a: &ExportArgs) -> Result<()> {
    let t = Trainer::from_checkpoint(&Checkpoint::load(&a.checkpoint)?, &StrategyRegistry::default())?;
    let phi = t.model.phi_values(&t.graph)?;
    let input = ExportInput {
        tree: &t.tree,
        prior: t.prior(),
        graph: &t.graph,
        phi: &phi,
        top_k: a.top_k,
    };
    emit(a.out.as_deref(), &export_tree(&input, &a.format)?)
}

fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    let corpus = a.corpus.load()?;
    let tree = read_tree(&a.tree)?;
    let base = a.config.resolve()?;
    let betas: Vec<f64> = split_list(&a.betas, "beta")?;
    let thresholds: Vec<f64> = split_list(&a.thresholds, "threshold")?;
    let cells = betas.iter().flat_map(|&b| thresholds.iter().map(move |&s| (b, s))).collect();
    let grid = SweepGrid {
        cells,
        seeds: a.seeds,
        workers: a.workers,
    };
    let opts = eval_options(&a.metrics, None, None, &corpus, !a.no_classify)?;
    let result = sweep(&corpus, &tree, &base, &grid, &opts)?;
    emit(a.out.as_deref(), &result.to_csv())
}

/// Error category for the machine-readable failure line.
fn kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if cause.is::<CorpusError>() {
            return "corpus";
        }
        if cause.is::<TaxonomyError>() {
            return "taxonomy";
        }
        if cause.is::<CheckpointError>() {
            return "checkpoint";
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::Config { .. } | TrainError::Invalid(_) => "config",
                TrainError::Diverged { .. } => "diverged",
                TrainError::Io { .. } => "io",
                _ => continue,
            };
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return match e {
                EvalError::Usage(_) | EvalError::TooManyWords { .. } => "usage",
                _ => "eval",
            };
        }
        if cause.is::<ModelError>() {
            return "model";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "error"
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::BuildTree(a) => build_tree_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Export(a) => export_cmd(a),
        Command::Sweep(a) => {
            if a.seeds == 0 {
                bail!(EvalError::Usage("--seeds must be at least 1".into()));
            }
            sweep_cmd(a)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}").replace('"', "'");
            eprintln!("error: kind={} message=\"{message}\"", kind(&e));
            ExitCode::FAILURE
        }
    }
}
