//! Python bindings: text normalization, indexing, first-stage scoring,
//! histogram inputs, model training and reranking, and evaluation
//! metrics, mirroring the Rust API.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use drmm::embed::{EmbeddingFormat, EmbeddingStore};
use drmm::error::Error;
use drmm::experiment::validation_split;
use drmm::eval;
use drmm::firststage::{self, RetrievalParams};
use drmm::index::{build_index, Index};
use drmm::model::{DrmmModel, InputKind, ModelVariant, NetworkConfig};
use drmm::rerank::{prepare_query, term_input, PreparedQuery};
use drmm::synth::{generate, SynthConfig};
use drmm::textpipe::{remove_stopwords, Normalizer, StemmerKind, StopList};
use drmm::train::{mix_seed, train, TrainConfig};

fn py_err(e: Error) -> PyErr {
    match &e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::DocMissing(_) => PyKeyError::new_err(e.to_string()),
        Error::NonFiniteGradient(_) | Error::NoTriples => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn stemmer_kind(name: &str) -> PyResult<StemmerKind> {
    name.parse().map_err(py_err)
}

fn input_kind(name: &str) -> PyResult<InputKind> {
    match name.to_ascii_lowercase().as_str() {
        "ch" => Ok(InputKind::Ch),
        "nh" => Ok(InputKind::Nh),
        "lch" => Ok(InputKind::Lch),
        "kmax" => Ok(InputKind::Kmax),
        _ => Err(PyValueError::new_err(format!(
            "unknown input kind {name:?}; expected ch, nh, lch or kmax"
        ))),
    }
}

fn variant(name: &str) -> PyResult<ModelVariant> {
    name.parse().map_err(py_err)
}

fn network(bins: usize, hidden: &[usize], variant: ModelVariant, dim: usize) -> PyResult<NetworkConfig> {
    let mut layer_sizes = Vec::with_capacity(hidden.len() + 2);
    layer_sizes.push(bins);
    layer_sizes.extend_from_slice(hidden);
    layer_sizes.push(1);
    let net = NetworkConfig {
        layer_sizes,
        variant,
        embedding_dim: dim,
    };
    net.validate().map_err(py_err)?;
    Ok(net)
}

/// Normalize text to terms: lowercase, strip punctuation, stem.
#[pyfunction]
#[pyo3(signature = (text, stemmer = "english", drop_stopwords = false))]
fn tokenize(text: &str, stemmer: &str, drop_stopwords: bool) -> PyResult<Vec<String>> {
    let normalizer = Normalizer::new(stemmer_kind(stemmer)?);
    let tokens = normalizer.tokenize(text);
    let tokens = if drop_stopwords {
        remove_stopwords(tokens, &StopList::default_list(&normalizer))
    } else {
        tokens
    };
    Ok(tokens.into_iter().map(|t| t.normalized).collect())
}

/// Inverted index over a document collection.
#[pyclass(name = "Index")]
struct PyIndex {
    inner: Index,
}

#[pymethods]
impl PyIndex {
    /// Build from `(external_id, text)` pairs.
    #[staticmethod]
    #[pyo3(signature = (docs, stemmer = "english"))]
    fn build(docs: Vec<(String, String)>, stemmer: &str) -> PyResult<Self> {
        let inner = build_index(docs, stemmer_kind(stemmer)?).map_err(py_err)?;
        Ok(PyIndex { inner })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(PyIndex {
            inner: Index::load(&dir).map_err(py_err)?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(&dir).map_err(py_err)
    }

    #[getter]
    fn doc_count(&self) -> usize {
        self.inner.doc_count()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    #[getter]
    fn collection_length(&self) -> u64 {
        self.inner.stats().total_term_count
    }

    #[getter]
    fn avg_doc_length(&self) -> f64 {
        self.inner.stats().avg_doc_length()
    }

    #[getter]
    fn stemmer(&self) -> String {
        self.inner.stemmer().to_string()
    }

    fn contains_doc(&self, external_id: &str) -> bool {
        self.inner.doc_by_external(external_id).is_some()
    }

    /// Term strings of a document in document order.
    fn doc_terms(&self, external_id: &str) -> PyResult<Vec<String>> {
        let doc = self
            .inner
            .doc_by_external(external_id)
            .ok_or_else(|| py_err(Error::DocMissing(external_id.to_string())))?;
        Ok(self
            .inner
            .doc_terms(doc.doc_id)
            .into_iter()
            .map(str::to_string)
            .collect())
    }

    /// Smoothed inverse document frequency of a normalized term.
    fn idf(&self, term: &str) -> f64 {
        self.inner.idf(term)
    }

    /// `(df, cf)` of a normalized term, or None if absent.
    fn term_stats(&self, term: &str) -> Option<(u64, u64)> {
        self.inner.term_entry(term).map(|e| (e.df as u64, e.cf))
    }
}

/// Unit-normalized word embeddings keyed by normalized term.
#[pyclass(name = "EmbeddingStore")]
struct PyEmbeddingStore {
    inner: EmbeddingStore,
}

#[pymethods]
impl PyEmbeddingStore {
    /// Load the text format: `vocab dim` header, then one
    /// `term c1 .. cdim` line per vector.
    #[staticmethod]
    #[pyo3(signature = (path, stemmer = "english"))]
    fn load(path: PathBuf, stemmer: &str) -> PyResult<Self> {
        let normalizer = Normalizer::new(stemmer_kind(stemmer)?);
        Ok(PyEmbeddingStore {
            inner: EmbeddingStore::load(&path, EmbeddingFormat::Text, &normalizer)
                .map_err(py_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (pairs, stemmer = "english"))]
    fn from_pairs(pairs: Vec<(String, Vec<f64>)>, stemmer: &str) -> PyResult<Self> {
        let normalizer = Normalizer::new(stemmer_kind(stemmer)?);
        Ok(PyEmbeddingStore {
            inner: EmbeddingStore::from_vectors(pairs, &normalizer).map_err(py_err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn contains(&self, term: &str) -> bool {
        self.inner.contains(term)
    }

    /// `(in_vocab_count, out_of_vocab_terms)` over the given terms.
    fn coverage(&self, terms: Vec<String>) -> (usize, Vec<String>) {
        self.inner.coverage(terms.iter().map(String::as_str))
    }
}

/// Graded relevance judgments.
#[pyclass(name = "Qrels")]
struct PyQrels {
    inner: eval::Qrels,
}

#[pymethods]
impl PyQrels {
    #[new]
    fn new() -> Self {
        PyQrels {
            inner: eval::Qrels::new(),
        }
    }

    /// Read the four-column `qid 0 external_id rel` format.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyQrels {
            inner: drmm::trec::read_qrels(&path).map_err(py_err)?,
        })
    }

    /// Add one judgment; negative grades clamp to 0.
    fn add(&mut self, query_id: &str, external_id: &str, rel: i64) {
        self.inner.insert(query_id, external_id, rel);
    }

    fn relevance(&self, query_id: &str, external_id: &str) -> u32 {
        self.inner.relevance(query_id, external_id)
    }

    fn relevant_count(&self, query_id: &str) -> usize {
        self.inner.relevant_count(query_id)
    }

    #[getter]
    fn query_ids(&self) -> Vec<String> {
        self.inner.query_ids().map(str::to_string).collect()
    }
}

/// Query likelihood score of one document for a normalized query.
#[pyfunction]
#[pyo3(signature = (index, query_terms, external_id, mu = 2500.0))]
fn ql_score(index: &PyIndex, query_terms: Vec<String>, external_id: &str, mu: f64) -> PyResult<f64> {
    let doc = index
        .inner
        .doc_by_external(external_id)
        .ok_or_else(|| py_err(Error::DocMissing(external_id.to_string())))?;
    firststage::ql_score(&index.inner, &query_terms, doc.doc_id, mu).map_err(py_err)
}

/// BM25 score of one document for a normalized query.
#[pyfunction]
#[pyo3(signature = (index, query_terms, external_id, k1 = 1.2, b = 0.75))]
fn bm25_score(
    index: &PyIndex,
    query_terms: Vec<String>,
    external_id: &str,
    k1: f64,
    b: f64,
) -> PyResult<f64> {
    let doc = index
        .inner
        .doc_by_external(external_id)
        .ok_or_else(|| py_err(Error::DocMissing(external_id.to_string())))?;
    firststage::bm25_score(&index.inner, &query_terms, doc.doc_id, k1, b).map_err(py_err)
}

/// First-stage retrieval: `(external_id, score)` pairs in rank order.
#[pyfunction]
#[pyo3(signature = (index, query_terms, model = "ql", mu = 2500.0, k1 = 1.2, b = 0.75, top_k = 2000))]
fn retrieve(
    index: &PyIndex,
    query_terms: Vec<String>,
    model: &str,
    mu: f64,
    k1: f64,
    b: f64,
    top_k: usize,
) -> PyResult<Vec<(String, f64)>> {
    let params = RetrievalParams {
        model: model.parse().map_err(py_err)?,
        mu,
        k1,
        b,
        top_k,
    };
    params.validate().map_err(py_err)?;
    let scored = firststage::retrieve(&index.inner, &query_terms, &params).map_err(py_err)?;
    Ok(scored.into_iter().map(|d| (d.external_id, d.score)).collect())
}

/// Network input for one query term against one document: a matching
/// histogram (`ch`, `nh`, `lch`) with `size` bins, or the `kmax`
/// strongest interactions zero-padded to `size`.
#[pyfunction]
#[pyo3(signature = (query_term, doc_terms, store, kind = "lch", size = 30))]
fn query_term_input(
    query_term: &str,
    doc_terms: Vec<String>,
    store: &PyEmbeddingStore,
    kind: &str,
    size: usize,
) -> PyResult<Vec<f64>> {
    let refs: Vec<&str> = doc_terms.iter().map(String::as_str).collect();
    let arr = term_input(query_term, &refs, &store.inner, input_kind(kind)?, size).map_err(py_err)?;
    Ok(arr.to_vec())
}

/// A trained (or freshly initialized) relevance matching model.
#[pyclass(name = "Model")]
struct PyModel {
    inner: DrmmModel,
}

impl PyModel {
    fn prepare(
        &self,
        index: &PyIndex,
        store: &PyEmbeddingStore,
        query_terms: &[String],
        candidates: &[String],
    ) -> PyResult<PreparedQuery> {
        prepare_query("q", query_terms, candidates, &index.inner, &store.inner, &self.inner.config)
            .map_err(py_err)
    }
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (embedding_dim, bins = 30, hidden = vec![5], variant = "LCHxIDF", seed = 42))]
    fn new(
        embedding_dim: usize,
        bins: usize,
        hidden: Vec<usize>,
        variant: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let net = network(bins, &hidden, self::variant(variant)?, embedding_dim)?;
        Ok(PyModel {
            inner: DrmmModel::new(net, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: DrmmModel::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.config.variant.to_string()
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.inner.config.embedding_dim
    }

    #[getter]
    fn layer_sizes(&self) -> Vec<usize> {
        self.inner.config.layer_sizes.clone()
    }

    /// Matching score of one candidate document.
    fn score(
        &self,
        index: &PyIndex,
        store: &PyEmbeddingStore,
        query_terms: Vec<String>,
        external_id: String,
    ) -> PyResult<f64> {
        let prepared = self.prepare(index, store, &query_terms, &[external_id])?;
        let scored = prepared.rerank(&self.inner).map_err(py_err)?;
        Ok(scored[0].score)
    }

    /// Rescore candidates: `(external_id, score)` sorted by descending
    /// score, ties broken by external id.
    fn rerank(
        &self,
        index: &PyIndex,
        store: &PyEmbeddingStore,
        query_terms: Vec<String>,
        candidates: Vec<String>,
    ) -> PyResult<Vec<(String, f64)>> {
        let prepared = self.prepare(index, store, &query_terms, &candidates)?;
        let scored = prepared.rerank(&self.inner).map_err(py_err)?;
        Ok(scored.into_iter().map(|d| (d.external_id, d.score)).collect())
    }
}

/// Train a model on per-query candidate lists with pairwise hinge loss,
/// Adagrad, and early stopping on a held-out validation split. Returns
/// `(Model, stats)` where stats records the best epoch, its validation
/// MAP, triple counts, and the per-epoch log.
#[pyfunction]
#[pyo3(signature = (
    index, store, queries, candidates, qrels,
    bins = 30, hidden = vec![5], variant = "LCHxIDF",
    learning_rate = 0.1, batch_size = 20, max_epochs = 30, patience = 5,
    negatives_per_positive = 1, validation_fraction = 0.2, seed = 42,
))]
#[allow(clippy::too_many_arguments)]
fn train_model(
    py: Python<'_>,
    index: &PyIndex,
    store: &PyEmbeddingStore,
    queries: BTreeMap<String, Vec<String>>,
    candidates: BTreeMap<String, Vec<String>>,
    qrels: &PyQrels,
    bins: usize,
    hidden: Vec<usize>,
    variant: &str,
    learning_rate: f64,
    batch_size: usize,
    max_epochs: usize,
    patience: usize,
    negatives_per_positive: usize,
    validation_fraction: f64,
    seed: u64,
) -> PyResult<(PyModel, Py<PyDict>)> {
    let net = network(bins, &hidden, self::variant(variant)?, store.inner.dim())?;
    let mut prepared = BTreeMap::new();
    for (qid, ids) in &candidates {
        let Some(terms) = queries.get(qid) else {
            return Err(PyValueError::new_err(format!(
                "candidate query {qid} missing from queries"
            )));
        };
        if terms.is_empty() {
            return Err(PyValueError::new_err(format!("query {qid} has no terms")));
        }
        prepared.insert(
            qid.clone(),
            prepare_query(qid, terms, ids, &index.inner, &store.inner, &net).map_err(py_err)?,
        );
    }
    let qids: Vec<String> = prepared.keys().cloned().collect();
    let (train_ids, val_ids) =
        validation_split(&qids, validation_fraction, mix_seed(seed, 0x5711)).map_err(py_err)?;
    let pick = |ids: &[String]| -> Vec<PreparedQuery> {
        ids.iter().map(|qid| prepared[qid].clone()).collect()
    };
    let config = TrainConfig {
        batch_size,
        learning_rate,
        max_epochs,
        patience,
        negatives_per_positive,
        seed,
        ..TrainConfig::default()
    };
    let outcome = train(&pick(&train_ids), &pick(&val_ids), &qrels.inner, &net, &config)
        .map_err(py_err)?;

    let stats = PyDict::new(py);
    stats.set_item("best_epoch", outcome.best_epoch)?;
    stats.set_item("best_validation_map", outcome.best_validation_map)?;
    stats.set_item("triples", outcome.triple_stats.triples)?;
    stats.set_item("skipped_queries", outcome.triple_stats.skipped_queries)?;
    stats.set_item("unjudged_negatives", outcome.triple_stats.unjudged_negatives)?;
    stats.set_item("train_queries", train_ids.len())?;
    stats.set_item("validation_queries", val_ids.len())?;
    let log: Vec<(usize, usize, usize, f64, f64)> = outcome
        .log
        .iter()
        .map(|e| (e.epoch, e.triples, e.active_triples, e.mean_loss, e.validation_map))
        .collect();
    stats.set_item("log", log)?;
    Ok((
        PyModel {
            inner: outcome.model,
        },
        stats.unbind(),
    ))
}

/// Average precision at `cutoff`; 0 when the query has no
/// judged-relevant documents.
#[pyfunction]
#[pyo3(signature = (ranking, qrels, query_id, cutoff = 1000))]
fn average_precision(ranking: Vec<String>, qrels: &PyQrels, query_id: &str, cutoff: usize) -> f64 {
    eval::average_precision(&ranking, &qrels.inner, query_id, cutoff)
}

/// nDCG@k with exponential gain over graded judgments.
#[pyfunction]
#[pyo3(signature = (ranking, qrels, query_id, k = 20))]
fn ndcg(ranking: Vec<String>, qrels: &PyQrels, query_id: &str, k: usize) -> f64 {
    eval::ndcg_at(&ranking, &qrels.inner, query_id, k)
}

/// Precision@k with denominator k.
#[pyfunction]
#[pyo3(signature = (ranking, qrels, query_id, k = 20))]
fn precision(ranking: Vec<String>, qrels: &PyQrels, query_id: &str, k: usize) -> f64 {
    eval::precision_at(&ranking, &qrels.inner, query_id, k)
}

/// Two-sided Fisher randomization p-value for paired per-query scores.
#[pyfunction]
#[pyo3(signature = (per_query_a, per_query_b, iterations = 100_000, seed = 7))]
fn fisher_randomization(
    per_query_a: Vec<f64>,
    per_query_b: Vec<f64>,
    iterations: usize,
    seed: u64,
) -> PyResult<f64> {
    eval::fisher_randomization(&per_query_a, &per_query_b, iterations, seed).map_err(py_err)
}

/// Generate the synthetic retrieval task and write `corpus.tsv`,
/// `topics.tsv`, `qrels.txt` and `embeddings.txt` under `output_dir`.
#[pyfunction]
#[pyo3(signature = (
    output_dir, docs = 600, queries = 32, vocab = 50, dim = 8,
    relevant_per_query = 8, distractors_per_query = 6, seed = 7,
))]
fn generate_synth(
    output_dir: PathBuf,
    docs: usize,
    queries: usize,
    vocab: usize,
    dim: usize,
    relevant_per_query: usize,
    distractors_per_query: usize,
    seed: u64,
) -> PyResult<(usize, usize)> {
    let config = SynthConfig {
        docs,
        queries,
        vocab,
        embedding_dim: dim,
        relevant_per_query,
        distractors_per_query,
        seed,
    };
    let data = generate(&config).map_err(py_err)?;
    data.write(&output_dir).map_err(py_err)?;
    Ok((data.corpus.len(), data.topics.len()))
}

#[pymodule]
fn drmm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIndex>()?;
    m.add_class::<PyEmbeddingStore>()?;
    m.add_class::<PyQrels>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(ql_score, m)?)?;
    m.add_function(wrap_pyfunction!(bm25_score, m)?)?;
    m.add_function(wrap_pyfunction!(retrieve, m)?)?;
    m.add_function(wrap_pyfunction!(query_term_input, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg, m)?)?;
    m.add_function(wrap_pyfunction!(precision, m)?)?;
    m.add_function(wrap_pyfunction!(fisher_randomization, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synth, m)?)?;
    Ok(())
}
