//! Command-line pipeline: indexing, first-stage retrieval, model
//! training, reranking, evaluation, a cross-validated experiment
//! driver, and a synthetic task generator.

mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use drmm::embed::{EmbeddingFormat, EmbeddingStore};
use drmm::eval::{evaluate_run, fisher_randomization};
use drmm::experiment::{query_terms, run_experiment, validation_split, ExperimentOutcome};
use drmm::firststage::{retrieve, RetrievalModel, RetrievalParams};
use drmm::index::{build_index, Index};
use drmm::model::{DrmmModel, ModelVariant, NetworkConfig};
use drmm::rerank::{prepare_query, PreparedQuery};
use drmm::synth::{generate, SynthConfig};
use drmm::textpipe::{Normalizer, StemmerKind, StopList};
use drmm::train::{format_log, mix_seed, train, TrainConfig};
use drmm::trec::{
    read_corpus, read_qrels, read_run, read_topics, run_rankings, write_run, QueryField, Topic,
};
use drmm::{Error, Result};

use config::{ConfigMap, ExperimentSetup};

#[derive(Parser)]
#[command(
    name = "drmm",
    version,
    about = "Ad-hoc retrieval with histogram-based deep relevance matching"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize a corpus and persist the inverted index.
    Index(IndexArgs),
    /// Rank topics against an index with QL or BM25.
    Retrieve(RetrieveArgs),
    /// Train a matching model on first-stage candidates.
    Train(TrainArgs),
    /// Rescore a first-stage run with a trained checkpoint.
    Rerank(RerankArgs),
    /// Score a run file against relevance judgments.
    Evaluate(EvaluateArgs),
    /// Run the full cross-validated protocol from one configuration.
    Experiment(ExperimentArgs),
    /// Generate a synthetic corpus with topics, qrels and embeddings.
    Synth(SynthArgs),
}

/// An error annotated with the pipeline stage it aborted.
struct CliError {
    stage: Option<&'static str>,
    err: Error,
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        CliError { stage: None, err }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError {
            stage: None,
            err: Error::Io(err),
        }
    }
}

fn stage<T>(name: &'static str, result: Result<T>) -> std::result::Result<T, CliError> {
    result.map_err(|err| CliError {
        stage: Some(name),
        err,
    })
}

/// One exit code per error class: 2 usage/configuration, 3 malformed
/// data, 4 I/O, 1 anything else.
fn exit_class(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_)
        | Error::EmptyQuery
        | Error::NoQueryTerms
        | Error::ValueOutOfRange(_)
        | Error::TooFewQueries { .. } => 2,
        Error::InvalidFormat { .. } | Error::Json(_) => 3,
        Error::Io(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Index(args) => cmd_index(args),
        Command::Retrieve(args) => cmd_retrieve(args),
        Command::Train(args) => cmd_train(args),
        Command::Rerank(args) => cmd_rerank(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.stage {
                Some(s) => eprintln!("error in {s}: {}", e.err),
                None => eprintln!("error: {}", e.err),
            }
            ExitCode::from(exit_class(&e.err))
        }
    }
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(Error::from)
}

fn load_stoplist(path: Option<&Path>, normalizer: &Normalizer) -> Result<StopList> {
    match path {
        Some(p) => StopList::load(p, normalizer),
        None => Ok(StopList::default_list(normalizer)),
    }
}

fn topic_map(topics: &[Topic]) -> BTreeMap<&str, &Topic> {
    topics.iter().map(|t| (t.query_id.as_str(), t)).collect()
}

fn report_coverage(store: &EmbeddingStore, terms: &BTreeSet<String>) {
    let (in_vocab, oov) = store.coverage(terms.iter().map(String::as_str));
    eprintln!(
        "embedding coverage: {in_vocab}/{} distinct query terms in vocabulary",
        terms.len()
    );
    if !oov.is_empty() {
        eprintln!("out of vocabulary: {}", oov.join(" "));
    }
}

#[derive(Args)]
struct IndexArgs {
    /// Corpus file: TREC text (`<DOC>` blocks) or TSV (`id<TAB>text`).
    #[arg(long)]
    corpus: PathBuf,
    /// Directory receiving the persisted index.
    #[arg(long)]
    index_dir: PathBuf,
    /// Stemmer applied to documents and, later, to queries.
    #[arg(long, default_value = "english")]
    stemmer: StemmerKind,
    /// Replace an existing index in the target directory.
    #[arg(long)]
    force: bool,
}

fn cmd_index(args: IndexArgs) -> std::result::Result<(), CliError> {
    if args.index_dir.join("meta.txt").exists() && !args.force {
        return Err(Error::InvalidConfig(format!(
            "{} already holds an index; pass --force to replace it",
            args.index_dir.display()
        ))
        .into());
    }
    let docs = read_corpus(&args.corpus)?;
    if docs.is_empty() {
        eprintln!("warning: corpus {} contains no documents", args.corpus.display());
    }
    let index = build_index(
        docs.into_iter().map(|d| (d.external_id, d.text)),
        args.stemmer,
    )?;
    index.save(&args.index_dir)?;
    let stats = index.stats();
    println!("docs\t{}", stats.doc_count);
    println!("vocab\t{}", index.vocab_size());
    println!("collection_length\t{}", stats.total_term_count);
    println!("avg_doc_length\t{:.3}", stats.avg_doc_length());
    println!("index\t{}", args.index_dir.display());
    Ok(())
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    index_dir: PathBuf,
    /// Topic file: TREC SGML or TSV (`qid<TAB>title[<TAB>desc]`).
    #[arg(long)]
    topics: PathBuf,
    /// Output run file in TREC format.
    #[arg(long)]
    output: PathBuf,
    /// Topic field to use as the query.
    #[arg(long, default_value = "title")]
    field: QueryField,
    #[arg(long, default_value = "ql")]
    model: RetrievalModel,
    /// Dirichlet smoothing parameter (QL).
    #[arg(long, default_value_t = 2500.0)]
    mu: f64,
    /// Term-frequency saturation (BM25).
    #[arg(long, default_value_t = 1.2)]
    k1: f64,
    /// Length normalization (BM25).
    #[arg(long, default_value_t = 0.75)]
    b: f64,
    /// Documents retained per query.
    #[arg(long, default_value_t = 2000)]
    top_k: usize,
    /// Stopword file (one term per line); defaults to the built-in list.
    #[arg(long)]
    stoplist: Option<PathBuf>,
    /// Run tag; defaults to the model name.
    #[arg(long)]
    tag: Option<String>,
}

fn cmd_retrieve(args: RetrieveArgs) -> std::result::Result<(), CliError> {
    let index = Index::load(&args.index_dir)?;
    let topics = read_topics(&args.topics)?;
    let params = RetrievalParams {
        model: args.model,
        mu: args.mu,
        k1: args.k1,
        b: args.b,
        top_k: args.top_k,
    };
    params.validate()?;
    let normalizer = Normalizer::new(index.stemmer());
    let stoplist = load_stoplist(args.stoplist.as_deref(), &normalizer)?;
    let mut run = BTreeMap::new();
    let mut skipped = 0usize;
    for topic in &topics {
        let terms = query_terms(topic, args.field, &normalizer, &stoplist);
        if terms.is_empty() {
            eprintln!(
                "warning: query {} skipped: no query terms after normalization",
                topic.query_id
            );
            skipped += 1;
            continue;
        }
        let scored = retrieve(&index, &terms, &params)?;
        if scored.is_empty() {
            eprintln!(
                "warning: query {} skipped: no candidate documents in the collection",
                topic.query_id
            );
            skipped += 1;
            continue;
        }
        run.insert(topic.query_id.clone(), scored);
    }
    let tag = args.tag.unwrap_or_else(|| args.model.to_string());
    write_run(&run, &tag, &args.output)?;
    println!("queries\t{}", run.len());
    println!("skipped\t{skipped}");
    println!("run\t{}", args.output.display());
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    index_dir: PathBuf,
    /// Text embedding file (`vocab dim` header, one vector per line).
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    topics: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// First-stage run supplying the candidate documents per query.
    #[arg(long)]
    candidates: PathBuf,
    /// Output checkpoint path (JSON).
    #[arg(long)]
    output: PathBuf,
    /// Optional epoch log file; the log always goes to stdout too.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Model variant, e.g. LCHxIDF, CHxTV, NHxUNI, KMAXxIDF.
    #[arg(long, default_value = "LCHxIDF")]
    variant: ModelVariant,
    /// Histogram bins, or the k of the k-max input.
    #[arg(long, default_value_t = 30)]
    bins: usize,
    /// Hidden layer widths, comma separated.
    #[arg(long, default_value = "5", value_delimiter = ',')]
    hidden: Vec<usize>,
    #[arg(long, default_value = "title")]
    field: QueryField,
    #[arg(long)]
    stoplist: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 20)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-8)]
    adagrad_epsilon: f64,
    #[arg(long, default_value_t = 30)]
    max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 1)]
    negatives_per_positive: usize,
    /// Fraction of queries held out for early stopping.
    #[arg(long, default_value_t = 0.2)]
    validation_fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

/// Precompute network inputs for every run query that still has terms
/// after normalization. Warns and skips stopped-out topics; a run query
/// absent from the topic file is an error.
fn prepare_run_queries(
    run: &BTreeMap<String, Vec<drmm::trec::RunEntry>>,
    topics: &[Topic],
    field: QueryField,
    index: &Index,
    store: &EmbeddingStore,
    net: &NetworkConfig,
    stoplist: &StopList,
) -> Result<(BTreeMap<String, PreparedQuery>, BTreeSet<String>)> {
    let by_id = topic_map(topics);
    let normalizer = Normalizer::new(index.stemmer());
    let mut prepared = BTreeMap::new();
    let mut all_terms = BTreeSet::new();
    for (qid, entries) in run {
        let Some(topic) = by_id.get(qid.as_str()) else {
            return Err(Error::InvalidConfig(format!(
                "run query {qid} does not appear in the topic file"
            )));
        };
        let terms = query_terms(topic, field, &normalizer, stoplist);
        if terms.is_empty() {
            eprintln!("warning: query {qid} skipped: no query terms after normalization");
            continue;
        }
        all_terms.extend(terms.iter().cloned());
        let ids: Vec<String> = entries.iter().map(|e| e.external_id.clone()).collect();
        prepared.insert(qid.clone(), prepare_query(qid, &terms, &ids, index, store, net)?);
    }
    Ok((prepared, all_terms))
}

fn cmd_train(args: TrainArgs) -> std::result::Result<(), CliError> {
    let index = Index::load(&args.index_dir)?;
    let normalizer = Normalizer::new(index.stemmer());
    let store = EmbeddingStore::load(&args.embeddings, EmbeddingFormat::Text, &normalizer)?;
    let topics = read_topics(&args.topics)?;
    let qrels = read_qrels(&args.qrels)?;
    let run = read_run(&args.candidates)?;

    let mut layer_sizes = Vec::with_capacity(args.hidden.len() + 2);
    layer_sizes.push(args.bins);
    layer_sizes.extend_from_slice(&args.hidden);
    layer_sizes.push(1);
    let net = NetworkConfig {
        layer_sizes,
        variant: args.variant,
        embedding_dim: store.dim(),
    };
    net.validate()?;

    let stoplist = load_stoplist(args.stoplist.as_deref(), &normalizer)?;
    let (prepared, terms) =
        prepare_run_queries(&run, &topics, args.field, &index, &store, &net, &stoplist)?;
    report_coverage(&store, &terms);

    let qids: Vec<String> = prepared.keys().cloned().collect();
    let (train_ids, val_ids) =
        validation_split(&qids, args.validation_fraction, mix_seed(args.seed, 0x5711))?;
    let pick = |ids: &[String]| -> Vec<PreparedQuery> {
        ids.iter().map(|qid| prepared[qid].clone()).collect()
    };
    let config = TrainConfig {
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        adagrad_epsilon: args.adagrad_epsilon,
        max_epochs: args.max_epochs,
        patience: args.patience,
        negatives_per_positive: args.negatives_per_positive,
        seed: args.seed,
    };
    let outcome = train(&pick(&train_ids), &pick(&val_ids), &qrels, &net, &config)?;
    outcome.model.save(&args.output)?;

    let log = format_log(&outcome.log);
    print!("{log}");
    if let Some(path) = &args.log {
        write_text(path, &log)?;
    }
    println!("train_queries\t{}", train_ids.len());
    println!("validation_queries\t{}", val_ids.len());
    println!("triples\t{}", outcome.triple_stats.triples);
    println!("skipped_queries\t{}", outcome.triple_stats.skipped_queries);
    println!("unjudged_negatives\t{}", outcome.triple_stats.unjudged_negatives);
    println!("best_epoch\t{}", outcome.best_epoch);
    println!("best_validation_map\t{:.6}", outcome.best_validation_map);
    println!("model\t{}", args.output.display());
    Ok(())
}

#[derive(Args)]
struct RerankArgs {
    #[arg(long)]
    index_dir: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Trained checkpoint written by `train` or `experiment`.
    #[arg(long)]
    model: PathBuf,
    /// First-stage run whose candidates are rescored.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    topics: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "title")]
    field: QueryField,
    #[arg(long)]
    stoplist: Option<PathBuf>,
    /// Documents retained per query after rescoring.
    #[arg(long, default_value_t = 1000)]
    depth: usize,
    /// Run tag; defaults to drmm-<variant>.
    #[arg(long)]
    tag: Option<String>,
}

fn cmd_rerank(args: RerankArgs) -> std::result::Result<(), CliError> {
    if args.depth == 0 {
        return Err(Error::InvalidConfig("depth must be at least 1".into()).into());
    }
    let index = Index::load(&args.index_dir)?;
    let normalizer = Normalizer::new(index.stemmer());
    let store = EmbeddingStore::load(&args.embeddings, EmbeddingFormat::Text, &normalizer)?;
    let model = DrmmModel::load(&args.model)?;
    if store.dim() != model.config.embedding_dim {
        return Err(Error::InvalidConfig(format!(
            "embedding dimension {} does not match the checkpoint's {}",
            store.dim(),
            model.config.embedding_dim
        ))
        .into());
    }
    let topics = read_topics(&args.topics)?;
    let run = read_run(&args.run)?;
    let stoplist = load_stoplist(args.stoplist.as_deref(), &normalizer)?;
    let (prepared, terms) =
        prepare_run_queries(&run, &topics, args.field, &index, &store, &model.config, &stoplist)?;
    report_coverage(&store, &terms);

    let mut out = BTreeMap::new();
    for (qid, query) in &prepared {
        let mut scored = query.rerank(&model)?;
        scored.truncate(args.depth);
        out.insert(qid.clone(), scored);
    }
    let tag = args
        .tag
        .unwrap_or_else(|| format!("drmm-{}", model.config.variant));
    write_run(&out, &tag, &args.output)?;
    println!("queries\t{}", out.len());
    println!("run\t{}", args.output.display());
    Ok(())
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Rank cutoff for average precision.
    #[arg(long, default_value_t = 1000)]
    ap_cutoff: usize,
    /// Second run for a paired randomization test per metric.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    iterations: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Emit `metric<TAB>qid<TAB>value` lines instead of the table.
    #[arg(long)]
    kv: bool,
}

fn cmd_evaluate(args: EvaluateArgs) -> std::result::Result<(), CliError> {
    let run = read_run(&args.run)?;
    let qrels = read_qrels(&args.qrels)?;
    let report = evaluate_run(&run_rankings(&run), &qrels, args.ap_cutoff);
    if args.kv {
        print!("{}", report.to_kv_lines());
    } else {
        print!("{}", report.to_table());
    }
    let Some(baseline_path) = &args.baseline else {
        return Ok(());
    };
    let baseline_run = read_run(baseline_path)?;
    let baseline = evaluate_run(&run_rankings(&baseline_run), &qrels, args.ap_cutoff);
    if !args.kv {
        println!();
        println!("== baseline ==");
        print!("{}", baseline.to_table());
    }
    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = vec![(vec![], vec![]); 3];
    for (qid, a) in &report.per_query {
        if let Some(b) = baseline.per_query.get(qid) {
            pairs[0].0.push(a.ap);
            pairs[0].1.push(b.ap);
            pairs[1].0.push(a.ndcg20);
            pairs[1].1.push(b.ndcg20);
            pairs[2].0.push(a.p20);
            pairs[2].1.push(b.p20);
        }
    }
    if pairs[0].0.is_empty() {
        eprintln!("warning: no query evaluated in both runs; significance not computed");
        return Ok(());
    }
    for (salt, (name, (a, b))) in ["map", "ndcg20", "p20"].iter().zip(&pairs).enumerate() {
        let p = fisher_randomization(a, b, args.iterations, mix_seed(args.seed, salt as u64))?;
        println!("p_{name}\tall\t{p:.6}");
    }
    Ok(())
}

#[derive(Args)]
struct ExperimentArgs {
    /// `key = value` configuration file; the flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus to index when the index directory is empty.
    #[arg(long)]
    corpus: Option<String>,
    #[arg(long)]
    topics: Option<String>,
    #[arg(long)]
    qrels: Option<String>,
    #[arg(long)]
    embeddings: Option<String>,
    /// Index directory, loaded if present and built otherwise.
    #[arg(long)]
    index_dir: Option<String>,
    /// Directory for fold checkpoints and logs; defaults to the output dir.
    #[arg(long)]
    model_dir: Option<String>,
    #[arg(long)]
    output_dir: Option<String>,
    /// Stemmer used when building the index (english or none).
    #[arg(long)]
    stemmer: Option<String>,
    /// Topic field (title or desc).
    #[arg(long)]
    field: Option<String>,
    /// Model variant, e.g. LCHxIDF.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    bins: Option<String>,
    /// Hidden layer widths, comma separated.
    #[arg(long)]
    hidden: Option<String>,
    /// First-stage model (ql or bm25).
    #[arg(long)]
    first_stage: Option<String>,
    #[arg(long)]
    mu: Option<String>,
    #[arg(long)]
    k1: Option<String>,
    #[arg(long)]
    b: Option<String>,
    /// Candidates retrieved per query for reranking.
    #[arg(long)]
    rerank_depth: Option<String>,
    /// Documents kept per query in the final run files.
    #[arg(long)]
    output_depth: Option<String>,
    #[arg(long)]
    ap_cutoff: Option<String>,
    #[arg(long)]
    folds: Option<String>,
    #[arg(long)]
    fold_seed: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    /// Learning rates swept per fold, comma separated.
    #[arg(long)]
    learning_rates: Option<String>,
    #[arg(long)]
    adagrad_epsilon: Option<String>,
    #[arg(long)]
    max_epochs: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    negatives_per_positive: Option<String>,
    #[arg(long)]
    train_seed: Option<String>,
    #[arg(long)]
    validation_fraction: Option<String>,
    #[arg(long)]
    significance_iterations: Option<String>,
    /// Rebuild the index even if the index directory holds one.
    #[arg(long)]
    force: bool,
}

impl ExperimentArgs {
    fn into_setup(self) -> std::result::Result<(ExperimentSetup, bool), CliError> {
        let mut map = match &self.config {
            Some(path) => stage("configuration", ConfigMap::load(path))?,
            None => ConfigMap::new(),
        };
        let overrides = [
            ("corpus", self.corpus),
            ("topics", self.topics),
            ("qrels", self.qrels),
            ("embeddings", self.embeddings),
            ("index_dir", self.index_dir),
            ("model_dir", self.model_dir),
            ("output_dir", self.output_dir),
            ("stemmer", self.stemmer),
            ("field", self.field),
            ("variant", self.variant),
            ("bins", self.bins),
            ("hidden", self.hidden),
            ("first_stage", self.first_stage),
            ("mu", self.mu),
            ("k1", self.k1),
            ("b", self.b),
            ("rerank_depth", self.rerank_depth),
            ("output_depth", self.output_depth),
            ("ap_cutoff", self.ap_cutoff),
            ("folds", self.folds),
            ("fold_seed", self.fold_seed),
            ("batch_size", self.batch_size),
            ("learning_rate", self.learning_rate),
            ("learning_rates", self.learning_rates),
            ("adagrad_epsilon", self.adagrad_epsilon),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("negatives_per_positive", self.negatives_per_positive),
            ("train_seed", self.train_seed),
            ("validation_fraction", self.validation_fraction),
            ("significance_iterations", self.significance_iterations),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                map.set(key, v);
            }
        }
        let setup = stage("configuration", map.into_setup())?;
        Ok((setup, self.force))
    }
}

fn load_or_build_index(setup: &ExperimentSetup, force: bool) -> std::result::Result<Index, CliError> {
    let dir = &setup.paths.index_dir;
    if dir.join("meta.txt").exists() && !force {
        let index = stage("index", Index::load(dir))?;
        if index.stemmer() != setup.stemmer {
            eprintln!(
                "warning: loaded index uses stemmer `{}`; the configured `{}` applies only when rebuilding",
                index.stemmer(),
                setup.stemmer
            );
        }
        return Ok(index);
    }
    let Some(corpus) = &setup.paths.corpus else {
        return Err(CliError {
            stage: Some("index"),
            err: Error::InvalidConfig(format!(
                "no index at {} and no `corpus` configured to build one",
                dir.display()
            )),
        });
    };
    let docs = stage("corpus", read_corpus(corpus))?;
    let index = stage(
        "index",
        build_index(docs.into_iter().map(|d| (d.external_id, d.text)), setup.stemmer),
    )?;
    stage("index", index.save(dir))?;
    Ok(index)
}

fn render_report(setup: &ExperimentSetup, out: &ExperimentOutcome) -> String {
    let c = &setup.config;
    let mut r = String::new();
    let _ = writeln!(r, "experiment report");
    let _ = writeln!(r, "variant        {}", c.variant);
    let _ = writeln!(r, "query field    {}", c.query_field);
    let _ = writeln!(
        r,
        "first stage    {} (rerank depth {}, output depth {})",
        c.first_stage.model, c.first_stage.top_k, c.output_depth
    );
    let _ = writeln!(
        r,
        "topics         {} evaluated, {} skipped",
        out.drmm.evaluated_count(),
        out.skipped_topics.len()
    );
    let _ = writeln!(r);
    let _ = writeln!(r, "== first stage ==");
    r.push_str(&out.baseline.to_table());
    let _ = writeln!(r);
    let _ = writeln!(r, "== drmm ==");
    r.push_str(&out.drmm.to_table());
    let _ = writeln!(r);
    let _ = writeln!(r, "== folds ==");
    let _ = writeln!(
        r,
        "{:>4}  {:>13}  {:>9}  {:>11}  {:>10}  {:>12}",
        "fold", "learning_rate", "train_map", "heldout_map", "best_epoch", "best_val_map"
    );
    for f in &out.cv.folds {
        let _ = writeln!(
            r,
            "{:>4}  {:>13.5}  {:>9.4}  {:>11.4}  {:>10}  {:>12.4}",
            f.fold, f.selected, f.train_map, f.report.map, f.model.best_epoch, f.model.best_validation_map
        );
    }
    let _ = writeln!(
        r,
        "fold means: map {:.4}  ndcg20 {:.4}  p20 {:.4}",
        out.cv.mean_map, out.cv.mean_ndcg20, out.cv.mean_p20
    );
    let _ = writeln!(r);
    match out.p_value {
        Some(p) => {
            let _ = writeln!(
                r,
                "randomization test on per-query ap (drmm vs first stage): p = {p:.6}"
            );
        }
        None => {
            let _ = writeln!(r, "randomization test skipped: no query evaluated by both runs");
        }
    }
    if !out.skipped_topics.is_empty() {
        let _ = writeln!(r, "skipped topics:");
        for s in &out.skipped_topics {
            let _ = writeln!(r, "  {}\t{}", s.query_id, s.reason);
        }
    }
    r
}

fn write_experiment_artifacts(setup: &ExperimentSetup, out: &ExperimentOutcome) -> Result<()> {
    let o = &setup.paths.output_dir;
    let m = &setup.paths.model_dir;
    fs::create_dir_all(o)?;
    fs::create_dir_all(m)?;
    write_run(
        &out.baseline_run,
        &setup.config.first_stage.model.to_string(),
        &o.join("firststage.run"),
    )?;
    write_run(
        &out.drmm_run,
        &format!("drmm-{}", setup.config.variant),
        &o.join("drmm.run"),
    )?;
    write_text(&o.join("firststage.eval.tsv"), &out.baseline.to_kv_lines())?;
    write_text(&o.join("drmm.eval.tsv"), &out.drmm.to_kv_lines())?;

    let mut folds = String::from("query_id\tfold\n");
    for (qid, fold) in &out.fold_assignments {
        let _ = writeln!(folds, "{qid}\t{fold}");
    }
    write_text(&o.join("folds.tsv"), &folds)?;

    let mut skipped = String::from("query_id\treason\n");
    for s in &out.skipped_topics {
        let _ = writeln!(skipped, "{}\t{}", s.query_id, s.reason);
    }
    write_text(&o.join("skipped.tsv"), &skipped)?;

    for f in &out.cv.folds {
        f.model
            .model
            .save(&m.join(format!("fold-{}.model.json", f.fold)))?;
        let mut log = String::new();
        let _ = writeln!(
            log,
            "fold {}\tselected_learning_rate {}\ttrain_map {:.6}",
            f.fold, f.selected, f.train_map
        );
        let _ = writeln!(
            log,
            "best_epoch {}\tbest_validation_map {:.6}",
            f.model.best_epoch, f.model.best_validation_map
        );
        let _ = writeln!(
            log,
            "triples {}\tskipped_queries {}\tunjudged_negatives {}",
            f.model.triple_stats.triples,
            f.model.triple_stats.skipped_queries,
            f.model.triple_stats.unjudged_negatives
        );
        log.push_str(&format_log(&f.model.log));
        write_text(&m.join(format!("fold-{}.train.log", f.fold)), &log)?;
    }
    write_text(&o.join("report.txt"), &render_report(setup, out))?;
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> std::result::Result<(), CliError> {
    let (setup, force) = args.into_setup()?;
    let index = load_or_build_index(&setup, force)?;
    let normalizer = Normalizer::new(index.stemmer());
    let store = stage(
        "embeddings",
        EmbeddingStore::load(&setup.paths.embeddings, EmbeddingFormat::Text, &normalizer),
    )?;
    let topics = stage("topics", read_topics(&setup.paths.topics))?;
    let qrels = stage("qrels", read_qrels(&setup.paths.qrels))?;
    let out = stage(
        "pipeline",
        run_experiment(&index, &store, &topics, &qrels, &setup.config),
    )?;
    stage("artifacts", write_experiment_artifacts(&setup, &out))?;

    println!("firststage_map\t{:.6}", out.baseline.map);
    println!("firststage_ndcg20\t{:.6}", out.baseline.mean_ndcg20);
    println!("firststage_p20\t{:.6}", out.baseline.mean_p20);
    println!("drmm_map\t{:.6}", out.drmm.map);
    println!("drmm_ndcg20\t{:.6}", out.drmm.mean_ndcg20);
    println!("drmm_p20\t{:.6}", out.drmm.mean_p20);
    if let Some(p) = out.p_value {
        println!("p_value\t{p:.6}");
    }
    println!("report\t{}", setup.paths.output_dir.join("report.txt").display());
    Ok(())
}

#[derive(Args)]
struct SynthArgs {
    /// Directory receiving corpus.tsv, topics.tsv, qrels.txt and
    /// embeddings.txt.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 600)]
    docs: usize,
    #[arg(long, default_value_t = 32)]
    queries: usize,
    #[arg(long, default_value_t = 50)]
    vocab: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 8)]
    relevant_per_query: usize,
    #[arg(long, default_value_t = 6)]
    distractors_per_query: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn cmd_synth(args: SynthArgs) -> std::result::Result<(), CliError> {
    let config = SynthConfig {
        docs: args.docs,
        queries: args.queries,
        vocab: args.vocab,
        embedding_dim: args.dim,
        relevant_per_query: args.relevant_per_query,
        distractors_per_query: args.distractors_per_query,
        seed: args.seed,
    };
    let data = generate(&config)?;
    data.write(&args.output)?;
    println!("docs\t{}", data.corpus.len());
    println!("topics\t{}", data.topics.len());
    for name in ["corpus.tsv", "topics.tsv", "qrels.txt", "embeddings.txt"] {
        println!("file\t{}", args.output.join(name).display());
    }
    Ok(())
}
