//! Synthetic retrieval task generator. Builds a small corpus, topics,
//! judgments, and unit embeddings from one seed, for exercising the
//! whole pipeline without a licensed test collection.
//!
//! Relevance is mechanical: a document is relevant to a topic exactly
//! when it contains at least two distinct query terms. Each topic gets
//! planted relevant documents (two or three query terms at modest
//! frequency) and tf-stuffed distractors (one query term repeated many
//! times), so lexical first-stage models overrate the distractors while
//! a matcher that rewards breadth across query terms can beat them.
//! Judgments are recomputed from the finished corpus, so accidental
//! matches from background sampling are always labeled correctly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Qrels;
use crate::trec::{write_qrels, CorpusDoc, Topic};

const QUERY_TERMS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub docs: usize,
    pub queries: usize,
    pub vocab: usize,
    pub embedding_dim: usize,
    /// Planted documents per topic containing 2-3 of its query terms.
    pub relevant_per_query: usize,
    /// Planted documents per topic stuffing a single query term.
    pub distractors_per_query: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            docs: 600,
            queries: 32,
            vocab: 50,
            embedding_dim: 8,
            relevant_per_query: 8,
            distractors_per_query: 6,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 * QUERY_TERMS {
            return Err(Error::InvalidConfig(format!(
                "vocabulary of {} is too small for {QUERY_TERMS}-term queries",
                self.vocab
            )));
        }
        if self.queries == 0 {
            return Err(Error::InvalidConfig("need at least one query".into()));
        }
        if self.embedding_dim < 2 {
            return Err(Error::InvalidConfig("embedding_dim must be at least 2".into()));
        }
        if self.relevant_per_query == 0 {
            return Err(Error::InvalidConfig(
                "need at least one planted relevant document per query".into(),
            ));
        }
        let planted = self.queries * (self.relevant_per_query + self.distractors_per_query);
        if self.docs < planted {
            return Err(Error::InvalidConfig(format!(
                "docs = {} cannot hold {planted} planted documents; raise docs or lower the per-query counts",
                self.docs
            )));
        }
        Ok(())
    }
}

/// A generated task: corpus, topics, judgments, and term embeddings
/// (unit vectors, ready for the text embedding format).
#[derive(Debug, Clone)]
pub struct SynthData {
    pub corpus: Vec<CorpusDoc>,
    pub topics: Vec<Topic>,
    pub qrels: Qrels,
    pub embeddings: Vec<(String, Vec<f64>)>,
}

fn term_name(i: usize, vocab: usize) -> String {
    let width = vocab.saturating_sub(1).max(10).to_string().len();
    format!("t{i:0width$}")
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Sample an index from `0..vocab` avoiding the excluded ids.
fn background_term(rng: &mut ChaCha8Rng, vocab: usize, exclude: &[usize]) -> usize {
    loop {
        let i = rng.random_range(0..vocab);
        if !exclude.contains(&i) {
            return i;
        }
    }
}

/// Generate the full task for one configuration. Deterministic: the same
/// configuration always yields identical data.
pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocab: Vec<String> = (0..config.vocab).map(|i| term_name(i, config.vocab)).collect();

    let embeddings: Vec<(String, Vec<f64>)> = vocab
        .iter()
        .map(|t| (t.clone(), unit_vector(&mut rng, config.embedding_dim)))
        .collect();

    let mut topics = Vec::with_capacity(config.queries);
    let mut query_terms: Vec<Vec<usize>> = Vec::with_capacity(config.queries);
    for q in 0..config.queries {
        let picked = rand::seq::index::sample(&mut rng, config.vocab, QUERY_TERMS).into_vec();
        let words: Vec<&str> = picked.iter().map(|&i| vocab[i].as_str()).collect();
        let mut reversed = words.clone();
        reversed.reverse();
        topics.push(Topic {
            query_id: format!("s{q:02}"),
            title: words.join(" "),
            description: reversed.join(" "),
        });
        query_terms.push(picked);
    }

    let mut corpus: Vec<CorpusDoc> = Vec::with_capacity(config.docs);
    let push_doc = |corpus: &mut Vec<CorpusDoc>, terms: Vec<usize>| {
        let text: Vec<&str> = terms.iter().map(|&i| vocab[i].as_str()).collect();
        corpus.push(CorpusDoc {
            external_id: format!("D{:04}", corpus.len()),
            text: text.join(" "),
        });
    };

    for qt in &query_terms {
        for r in 0..config.relevant_per_query {
            let hits = if r % 2 == 0 { QUERY_TERMS } else { 2 };
            let mut terms: Vec<usize> = Vec::new();
            for &t in qt.iter().take(hits) {
                for _ in 0..rng.random_range(1..=3) {
                    terms.push(t);
                }
            }
            let length = rng.random_range(12..=25).max(terms.len());
            while terms.len() < length {
                terms.push(background_term(&mut rng, config.vocab, qt));
            }
            terms.shuffle(&mut rng);
            push_doc(&mut corpus, terms);
        }
        for d in 0..config.distractors_per_query {
            let stuffed = qt[d % QUERY_TERMS];
            let mut terms: Vec<usize> = vec![stuffed; rng.random_range(8..=15)];
            for _ in 0..rng.random_range(5..=10) {
                terms.push(background_term(&mut rng, config.vocab, qt));
            }
            terms.shuffle(&mut rng);
            push_doc(&mut corpus, terms);
        }
    }
    while corpus.len() < config.docs {
        let length = rng.random_range(12..=25);
        let terms: Vec<usize> = (0..length).map(|_| rng.random_range(0..config.vocab)).collect();
        push_doc(&mut corpus, terms);
    }

    let mut qrels = Qrels::new();
    for (topic, qt) in topics.iter().zip(&query_terms) {
        let names: Vec<&str> = qt.iter().map(|&i| vocab[i].as_str()).collect();
        for doc in &corpus {
            let distinct = names
                .iter()
                .filter(|t| doc.text.split(' ').any(|w| w == **t))
                .count();
            if distinct >= 1 {
                let rel = i64::from(distinct >= 2);
                qrels.insert(&topic.query_id, &doc.external_id, rel);
            }
        }
    }

    Ok(SynthData {
        corpus,
        topics,
        qrels,
        embeddings,
    })
}

impl SynthData {
    /// Write `corpus.tsv`, `topics.tsv`, `qrels.txt`, and
    /// `embeddings.txt` (text embedding format) into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut corpus = String::new();
        for d in &self.corpus {
            writeln!(corpus, "{}\t{}", d.external_id, d.text).unwrap();
        }
        fs::write(dir.join("corpus.tsv"), corpus)?;

        let mut topics = String::new();
        for t in &self.topics {
            writeln!(topics, "{}\t{}\t{}", t.query_id, t.title, t.description).unwrap();
        }
        fs::write(dir.join("topics.tsv"), topics)?;

        write_qrels(&self.qrels, &dir.join("qrels.txt"))?;

        let dim = self.embeddings.first().map_or(0, |(_, v)| v.len());
        let mut emb = String::new();
        writeln!(emb, "{} {dim}", self.embeddings.len()).unwrap();
        for (term, v) in &self.embeddings {
            write!(emb, "{term}").unwrap();
            for x in v {
                write!(emb, " {x:.8}").unwrap();
            }
            emb.push('\n');
        }
        fs::write(dir.join("embeddings.txt"), emb)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            docs: 80,
            queries: 6,
            vocab: 20,
            embedding_dim: 4,
            relevant_per_query: 5,
            distractors_per_query: 4,
            seed: 11,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.topics, b.topics);
        assert_eq!(a.embeddings.len(), b.embeddings.len());
        for ((ta, va), (tb, vb)) in a.embeddings.iter().zip(&b.embeddings) {
            assert_eq!(ta, tb);
            assert_eq!(va, vb);
        }
        let c = generate(&SynthConfig { seed: 12, ..small() }).unwrap();
        assert_ne!(a.corpus, c.corpus);
    }

    #[test]
    fn sizes_match_config() {
        let cfg = small();
        let data = generate(&cfg).unwrap();
        assert_eq!(data.corpus.len(), cfg.docs);
        assert_eq!(data.topics.len(), cfg.queries);
        assert_eq!(data.embeddings.len(), cfg.vocab);
        for (_, v) in &data.embeddings {
            assert_eq!(v.len(), cfg.embedding_dim);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn judgments_follow_the_two_term_rule() {
        let data = generate(&small()).unwrap();
        for topic in &data.topics {
            let terms: Vec<&str> = topic.title.split(' ').collect();
            assert_eq!(terms.len(), QUERY_TERMS);
            for doc in &data.corpus {
                let distinct = terms
                    .iter()
                    .filter(|t| doc.text.split(' ').any(|w| w == **t))
                    .count();
                let judged = data
                    .qrels
                    .judged(&topic.query_id)
                    .map_or(false, |m| m.contains_key(&doc.external_id));
                assert_eq!(judged, distinct >= 1, "judgment coverage mismatch");
                let rel = data.qrels.relevance(&topic.query_id, &doc.external_id);
                assert_eq!(rel >= 1, distinct >= 2, "relevance label mismatch");
            }
        }
    }

    #[test]
    fn every_query_has_relevant_documents() {
        let data = generate(&small()).unwrap();
        for topic in &data.topics {
            assert!(
                data.qrels.relevant_count(&topic.query_id) >= small().relevant_per_query,
                "query {} has too few relevant documents",
                topic.query_id
            );
        }
    }

    #[test]
    fn distractors_are_present_and_nonrelevant() {
        let data = generate(&small()).unwrap();
        // Planted distractors sit right after the relevant block of each
        // query; spot-check the first query's block.
        let cfg = small();
        let topic = &data.topics[0];
        let terms: Vec<&str> = topic.title.split(' ').collect();
        for d in 0..cfg.distractors_per_query {
            let doc = &data.corpus[cfg.relevant_per_query + d];
            let distinct = terms
                .iter()
                .filter(|t| doc.text.split(' ').any(|w| w == **t))
                .count();
            assert_eq!(distinct, 1, "distractor {d} matches more than one term");
            assert_eq!(data.qrels.relevance(&topic.query_id, &doc.external_id), 0);
            let stuffed = terms[d % QUERY_TERMS];
            let tf = doc.text.split(' ').filter(|w| *w == stuffed).count();
            assert!(tf >= 8, "distractor {d} has tf {tf}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(generate(&SynthConfig { vocab: 4, ..small() }).is_err());
        assert!(generate(&SynthConfig { docs: 10, ..small() }).is_err());
        assert!(generate(&SynthConfig { queries: 0, ..small() }).is_err());
    }

    #[test]
    fn written_files_load_back() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate(&small()).unwrap();
        data.write(dir.path()).unwrap();

        let corpus = crate::trec::read_corpus(&dir.path().join("corpus.tsv")).unwrap();
        assert_eq!(corpus, data.corpus);
        let topics = crate::trec::read_topics(&dir.path().join("topics.tsv")).unwrap();
        assert_eq!(topics, data.topics);
        let qrels = crate::trec::read_qrels(&dir.path().join("qrels.txt")).unwrap();
        assert_eq!(qrels.query_count(), data.qrels.query_count());

        let norm = crate::textpipe::Normalizer::new(crate::textpipe::StemmerKind::None);
        let store = crate::embed::EmbeddingStore::load(
            &dir.path().join("embeddings.txt"),
            crate::embed::EmbeddingFormat::Text,
            &norm,
        )
        .unwrap();
        assert_eq!(store.len(), small().vocab);
        assert_eq!(store.dim(), small().embedding_dim);
    }
}
