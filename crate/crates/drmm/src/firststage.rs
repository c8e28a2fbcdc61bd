//! Lexical first-stage retrieval over the inverted index: query
//! likelihood with Dirichlet smoothing (the default candidate generator)
//! and Okapi BM25. Produces a deterministically ordered candidate list
//! for reranking.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{Index, Posting};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalModel {
    Ql,
    Bm25,
}

impl fmt::Display for RetrievalModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RetrievalModel::Ql => write!(f, "ql"),
            RetrievalModel::Bm25 => write!(f, "bm25"),
        }
    }
}

impl FromStr for RetrievalModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "ql" => Ok(RetrievalModel::Ql),
            "bm25" => Ok(RetrievalModel::Bm25),
            other => Err(Error::InvalidConfig(format!(
                "unknown retrieval model {other:?} (expected ql or bm25)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalParams {
    pub model: RetrievalModel,
    /// Dirichlet smoothing parameter.
    pub mu: f64,
    pub k1: f64,
    pub b: f64,
    /// Number of candidates to return.
    pub top_k: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        RetrievalParams {
            model: RetrievalModel::Ql,
            mu: 2500.0,
            k1: 1.2,
            b: 0.75,
            top_k: 2000,
        }
    }
}

impl RetrievalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if !(self.k1 >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "k1 must be >= 0, got {}",
                self.k1
            )));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidConfig(format!(
                "b must be in [0, 1], got {}",
                self.b
            )));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: u32,
    pub external_id: String,
    pub score: f64,
    /// 1-based position within its result list.
    pub rank: usize,
}

/// Sort by score descending, ties by external id ascending — a total
/// order, making result lists deterministic and prefix-stable across
/// depths — then renumber ranks from 1.
pub fn sort_scored(docs: &mut [ScoredDoc]) {
    docs.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.external_id.cmp(&b.external_id))
    });
    for (i, d) in docs.iter_mut().enumerate() {
        d.rank = i + 1;
    }
}

/// Query terms collapsed to (term, count) in first-occurrence order, so
/// summation order is fixed regardless of how the query repeats terms.
fn query_counts(query_terms: &[String]) -> Vec<(&str, f64)> {
    let mut order: Vec<(&str, f64)> = Vec::new();
    for t in query_terms {
        match order.iter_mut().find(|(s, _)| *s == t.as_str()) {
            Some((_, c)) => *c += 1.0,
            None => order.push((t.as_str(), 1.0)),
        }
    }
    order
}

struct ResolvedTerm<'a> {
    postings: &'a [Posting],
    qtf: f64,
    df: f64,
    cf: f64,
}

/// Drop query terms absent from the collection (cf = 0 contributes
/// nothing to either model) and attach their postings and statistics.
fn resolve<'a>(index: &'a Index, query_terms: &[String]) -> Result<Vec<ResolvedTerm<'a>>> {
    if query_terms.is_empty() {
        return Err(Error::EmptyQuery);
    }
    Ok(query_counts(query_terms)
        .into_iter()
        .filter_map(|(t, qtf)| {
            let entry = index.term_entry(t)?;
            Some(ResolvedTerm {
                postings: index.postings(t).unwrap(),
                qtf,
                df: entry.df as f64,
                cf: entry.cf as f64,
            })
        })
        .collect())
}

fn tf_in(postings: &[Posting], doc_id: u32) -> f64 {
    match postings.binary_search_by_key(&doc_id, |p| p.doc_id) {
        Ok(i) => postings[i].tf as f64,
        Err(_) => 0.0,
    }
}

fn ql_of(resolved: &[ResolvedTerm], index: &Index, doc_id: u32, mu: f64) -> f64 {
    let total = index.stats().total_term_count as f64;
    let dl = index.doc(doc_id).length as f64;
    let mut score = 0.0;
    for r in resolved {
        let tf = tf_in(r.postings, doc_id);
        score += r.qtf * ((tf + mu * r.cf / total) / (dl + mu)).ln();
    }
    score
}

fn bm25_of(resolved: &[ResolvedTerm], index: &Index, doc_id: u32, k1: f64, b: f64) -> f64 {
    let n_docs = index.stats().doc_count as f64;
    let avgdl = index.stats().avg_doc_length();
    let dl = index.doc(doc_id).length as f64;
    let mut score = 0.0;
    for r in resolved {
        let tf = tf_in(r.postings, doc_id);
        if tf == 0.0 {
            continue;
        }
        let idf = ((n_docs - r.df + 0.5) / (r.df + 0.5) + 1.0).ln();
        let denom = tf + k1 * (1.0 - b + b * dl / avgdl);
        score += r.qtf * idf * tf * (k1 + 1.0) / denom;
    }
    score
}

/// Dirichlet-smoothed query likelihood of one document:
/// sum over query terms of qtf * ln((tf + mu*cf/total) / (|d| + mu)),
/// skipping terms the collection has never seen.
pub fn ql_score(index: &Index, query_terms: &[String], doc_id: u32, mu: f64) -> Result<f64> {
    Ok(ql_of(&resolve(index, query_terms)?, index, doc_id, mu))
}

/// Okapi BM25 score of one document; terms missing from the document
/// contribute zero.
pub fn bm25_score(
    index: &Index,
    query_terms: &[String],
    doc_id: u32,
    k1: f64,
    b: f64,
) -> Result<f64> {
    Ok(bm25_of(&resolve(index, query_terms)?, index, doc_id, k1, b))
}

/// Rank the collection against a normalized query. Candidates are the
/// union of the postings of the query terms; documents matching no term
/// are never returned. Output is sorted by score descending with ties
/// broken by external id ascending, truncated to `top_k`. For a fixed
/// index and query any shorter `top_k` list is a prefix of a longer one.
pub fn retrieve(
    index: &Index,
    query_terms: &[String],
    params: &RetrievalParams,
) -> Result<Vec<ScoredDoc>> {
    params.validate()?;
    let resolved = resolve(index, query_terms)?;

    let mut candidates: Vec<u32> = resolved
        .iter()
        .flat_map(|r| r.postings.iter().map(|p| p.doc_id))
        .collect();
    candidates.sort_unstable();
    candidates.dedup();

    let mut scored: Vec<ScoredDoc> = candidates
        .into_iter()
        .map(|doc_id| ScoredDoc {
            doc_id,
            external_id: index.doc(doc_id).external_id.clone(),
            score: match params.model {
                RetrievalModel::Ql => ql_of(&resolved, index, doc_id, params.mu),
                RetrievalModel::Bm25 => bm25_of(&resolved, index, doc_id, params.k1, params.b),
            },
            rank: 0,
        })
        .collect();

    sort_scored(&mut scored);
    scored.truncate(params.top_k);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::build_index;
    use crate::textpipe::StemmerKind;

    fn two_doc_index() -> Index {
        build_index([("d1", "a b a"), ("d2", "b c")], StemmerKind::None).unwrap()
    }

    fn q(terms: &[&str]) -> Vec<String> {
        terms.iter().map(|t| t.to_string()).collect()
    }

    fn ql_params(mu: f64) -> RetrievalParams {
        RetrievalParams {
            model: RetrievalModel::Ql,
            mu,
            ..RetrievalParams::default()
        }
    }

    #[test]
    fn ql_hand_oracle() {
        let index = two_doc_index();
        // d1: ln((2 + 1 * 2/5) / (3 + 1)) = ln(0.6)
        let d1 = ql_score(&index, &q(&["a"]), 0, 1.0).unwrap();
        assert!((d1 - 0.6f64.ln()).abs() < 1e-9);
        // d2: ln((0 + 0.4) / (2 + 1)) = ln(0.4/3), well below d1
        let d2 = ql_score(&index, &q(&["a"]), 1, 1.0).unwrap();
        assert!((d2 - (0.4f64 / 3.0).ln()).abs() < 1e-9);
        assert!(d1 > d2);
    }

    #[test]
    fn ql_tf_monotonicity() {
        let index = build_index([("x1", "a b b"), ("x2", "a a b")], StemmerKind::None).unwrap();
        let low = ql_score(&index, &q(&["a"]), 0, 10.0).unwrap();
        let high = ql_score(&index, &q(&["a"]), 1, 10.0).unwrap();
        assert!(high > low);
    }

    #[test]
    fn ql_repeated_query_term_doubles_score() {
        let index = two_doc_index();
        let once = ql_score(&index, &q(&["a"]), 0, 1.0).unwrap();
        let twice = ql_score(&index, &q(&["a", "a"]), 0, 1.0).unwrap();
        assert!((twice - 2.0 * once).abs() < 1e-12);
    }

    #[test]
    fn ql_skips_unseen_terms() {
        let index = two_doc_index();
        let base = ql_score(&index, &q(&["a"]), 0, 1.0).unwrap();
        let with_oov = ql_score(&index, &q(&["a", "zzz"]), 0, 1.0).unwrap();
        assert_eq!(base, with_oov);
    }

    #[test]
    fn bm25_hand_oracle() {
        let index = two_doc_index();
        let idf = 1.2f64.ln();
        // d1 (len 3): tf 1, denom 1 + 1.2 * (0.25 + 0.75 * 3/2.5)
        let want_d1 = idf * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 3.0 / 2.5));
        // d2 (len 2): denom 1 + 1.2 * (0.25 + 0.75 * 2/2.5)
        let want_d2 = idf * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 2.0 / 2.5));
        let d1 = bm25_score(&index, &q(&["b"]), 0, 1.2, 0.75).unwrap();
        let d2 = bm25_score(&index, &q(&["b"]), 1, 1.2, 0.75).unwrap();
        assert!((d1 - want_d1).abs() < 1e-12);
        assert!((d2 - want_d2).abs() < 1e-12);
        // The shorter document wins.
        assert!(d2 > d1);
    }

    #[test]
    fn bm25_zero_when_nothing_matches() {
        let index = two_doc_index();
        assert_eq!(bm25_score(&index, &q(&["c"]), 0, 1.2, 0.75).unwrap(), 0.0);
    }

    #[test]
    fn bm25_b_zero_ignores_length() {
        let index = two_doc_index();
        let d1 = bm25_score(&index, &q(&["b"]), 0, 1.2, 0.0).unwrap();
        let d2 = bm25_score(&index, &q(&["b"]), 1, 1.2, 0.0).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
    }

    #[test]
    fn retrieve_scores_match_direct_scoring() {
        let index = two_doc_index();
        let out = retrieve(&index, &q(&["b"]), &ql_params(1.0)).unwrap();
        assert_eq!(out.len(), 2);
        for d in &out {
            let direct = ql_score(&index, &q(&["b"]), d.doc_id, 1.0).unwrap();
            assert_eq!(d.score.to_bits(), direct.to_bits());
        }
        assert_eq!(out[0].rank, 1);
        assert_eq!(out[1].rank, 2);
        assert!(out[0].score >= out[1].score);
    }

    #[test]
    fn candidates_are_union_of_postings() {
        let index = two_doc_index();
        // Only d1 contains "a"; smoothing alone never admits d2.
        let out = retrieve(&index, &q(&["a"]), &ql_params(1.0)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].external_id, "d1");
        let none = retrieve(&index, &q(&["zzz"]), &ql_params(2500.0)).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn empty_query_is_an_error() {
        let index = two_doc_index();
        assert!(matches!(
            retrieve(&index, &[], &ql_params(1.0)),
            Err(Error::EmptyQuery)
        ));
        assert!(matches!(
            ql_score(&index, &[], 0, 1.0),
            Err(Error::EmptyQuery)
        ));
        assert!(matches!(
            bm25_score(&index, &[], 0, 1.2, 0.75),
            Err(Error::EmptyQuery)
        ));
    }

    #[test]
    fn top_k_is_a_prefix() {
        let docs: Vec<(String, String)> = (0..20)
            .map(|i| (format!("doc{i:02}"), format!("t {}", "u ".repeat(i))))
            .collect();
        let index = build_index(docs, StemmerKind::None).unwrap();
        let full = retrieve(&index, &q(&["t"]), &ql_params(10.0)).unwrap();
        assert_eq!(full.len(), 20);
        for k in 1..=full.len() {
            let params = RetrievalParams {
                top_k: k,
                ..ql_params(10.0)
            };
            let short = retrieve(&index, &q(&["t"]), &params).unwrap();
            assert_eq!(short.len(), k);
            assert_eq!(short[..], full[..k]);
        }
    }

    #[test]
    fn ties_break_by_external_id() {
        let index = build_index([("zz", "x y"), ("aa", "x y")], StemmerKind::None).unwrap();
        let out = retrieve(&index, &q(&["x"]), &ql_params(100.0)).unwrap();
        assert_eq!(out[0].external_id, "aa");
        assert_eq!(out[1].external_id, "zz");
        assert_eq!(out[0].score.to_bits(), out[1].score.to_bits());
    }

    #[test]
    fn invalid_params_rejected() {
        let index = two_doc_index();
        let bad_mu = RetrievalParams {
            mu: 0.0,
            ..RetrievalParams::default()
        };
        assert!(retrieve(&index, &q(&["a"]), &bad_mu).is_err());
        let bad_b = RetrievalParams {
            b: 1.5,
            ..RetrievalParams::default()
        };
        assert!(retrieve(&index, &q(&["a"]), &bad_b).is_err());
        let bad_k = RetrievalParams {
            top_k: 0,
            ..RetrievalParams::default()
        };
        assert!(retrieve(&index, &q(&["a"]), &bad_k).is_err());
    }
}
