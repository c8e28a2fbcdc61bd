//! Bridges text, embeddings and histograms to the matching network:
//! builds per-query-term gating features and per-candidate network
//! inputs, and reranks first-stage candidate lists with a trained model.
//!
//! Inputs depend only on the corpus, the embeddings and the variant, so
//! a [`PreparedQuery`] is computed once and reused across training
//! epochs, validation reranks and final scoring.

use ndarray::Array1;

use crate::embed::{interactions, EmbeddingStore};
use crate::error::{Error, Result};
use crate::firststage::{sort_scored, ScoredDoc};
use crate::histogram::{histogram, kmax_input, BinScheme};
use crate::index::Index;
use crate::model::{score_parts, DrmmModel, GateFeature, Gating, InputKind, NetworkConfig};

/// Gating feature for one query term: the term embedding for term-vector
/// gating (zero vector when out of vocabulary), the index idf for idf
/// gating, nothing for uniform.
pub fn gate_feature(
    term: &str,
    gating: Gating,
    index: &Index,
    store: &EmbeddingStore,
    dim: usize,
) -> GateFeature {
    match gating {
        Gating::TermVector => GateFeature::Vector(
            store
                .get(term)
                .map(|v| Array1::from(v.to_vec()))
                .unwrap_or_else(|| Array1::zeros(dim)),
        ),
        Gating::Idf => GateFeature::Scalar(index.idf(term)),
        Gating::Uniform => GateFeature::None,
    }
}

/// Network input for one query term against one document: the matching
/// histogram of the local interactions, or the k strongest interactions
/// for the k-max ablation.
pub fn term_input(
    query_term: &str,
    doc_terms: &[&str],
    store: &EmbeddingStore,
    input: InputKind,
    size: usize,
) -> Result<Array1<f64>> {
    let row = interactions(query_term, doc_terms.iter().copied(), store);
    let values = match input.histogram_mode() {
        Some(mode) => histogram(&row, BinScheme::new(size)?, mode)?.values,
        None => kmax_input(&row, size),
    };
    Ok(Array1::from(values))
}

#[derive(Debug, Clone)]
pub struct PreparedCandidate {
    pub external_id: String,
    pub doc_id: u32,
    /// One network input per query term, in query order.
    pub term_inputs: Vec<Array1<f64>>,
}

/// One query with gating features and precomputed inputs for every
/// candidate, in first-stage order.
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    pub query_id: String,
    pub query_terms: Vec<String>,
    pub gate_features: Vec<GateFeature>,
    pub candidates: Vec<PreparedCandidate>,
}

impl PreparedQuery {
    pub fn candidate_ids(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.external_id.clone()).collect()
    }

    /// Rescore every candidate; output sorted by score descending with
    /// ties broken by external id.
    pub fn rerank(&self, model: &DrmmModel) -> Result<Vec<ScoredDoc>> {
        let gating = model.config.variant.gating;
        let mut out = Vec::with_capacity(self.candidates.len());
        for c in &self.candidates {
            out.push(ScoredDoc {
                doc_id: c.doc_id,
                external_id: c.external_id.clone(),
                score: score_parts(&self.gate_features, &c.term_inputs, &model.params, gating)?,
                rank: 0,
            });
        }
        sort_scored(&mut out);
        Ok(out)
    }

    /// External ids in reranked order.
    pub fn ranking(&self, model: &DrmmModel) -> Result<Vec<String>> {
        Ok(self.rerank(model)?.into_iter().map(|d| d.external_id).collect())
    }
}

/// Precompute gating features and per-candidate inputs for one query.
/// Candidates must exist in the index.
pub fn prepare_query(
    query_id: &str,
    query_terms: &[String],
    candidate_ids: &[String],
    index: &Index,
    store: &EmbeddingStore,
    net: &NetworkConfig,
) -> Result<PreparedQuery> {
    if query_terms.is_empty() {
        return Err(Error::NoQueryTerms);
    }
    net.validate()?;
    let gate_features = query_terms
        .iter()
        .map(|t| gate_feature(t, net.variant.gating, index, store, net.embedding_dim))
        .collect();
    let size = net.input_size();
    let mut candidates = Vec::with_capacity(candidate_ids.len());
    for ext in candidate_ids {
        let doc = index
            .doc_by_external(ext)
            .ok_or_else(|| Error::DocMissing(ext.clone()))?;
        let doc_terms = index.doc_terms(doc.doc_id);
        let term_inputs = query_terms
            .iter()
            .map(|qt| term_input(qt, &doc_terms, store, net.variant.input, size))
            .collect::<Result<Vec<_>>>()?;
        candidates.push(PreparedCandidate {
            external_id: ext.clone(),
            doc_id: doc.doc_id,
            term_inputs,
        });
    }
    Ok(PreparedQuery {
        query_id: query_id.to_string(),
        query_terms: query_terms.to_vec(),
        gate_features,
        candidates,
    })
}

/// One-shot rerank of a candidate list.
pub fn rerank_candidates(
    model: &DrmmModel,
    index: &Index,
    store: &EmbeddingStore,
    query_terms: &[String],
    candidate_ids: &[String],
) -> Result<Vec<ScoredDoc>> {
    prepare_query("", query_terms, candidate_ids, index, store, &model.config)?.rerank(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::build_index;
    use crate::model::{DrmmParams, ModelVariant, NetworkConfig};
    use crate::textpipe::{Normalizer, StemmerKind};
    use ndarray::Array2;

    fn norm() -> Normalizer {
        Normalizer::new(StemmerKind::None)
    }

    fn empty_store() -> EmbeddingStore {
        EmbeddingStore::from_vectors(std::iter::empty::<(&str, Vec<f64>)>(), &norm()).unwrap()
    }

    fn net(input: InputKind, gating: Gating, size: usize) -> NetworkConfig {
        NetworkConfig {
            layer_sizes: vec![size, 1],
            variant: ModelVariant { input, gating },
            embedding_dim: if gating == Gating::TermVector { 2 } else { 0 },
        }
    }

    /// Model whose score grows with the count in the exact-match bin.
    fn exact_match_model(bins: usize) -> DrmmModel {
        let config = net(InputKind::Ch, Gating::Uniform, bins);
        let mut w = Array2::zeros((1, bins));
        w[(0, bins - 1)] = 1.0;
        DrmmModel {
            params: DrmmParams {
                weights: vec![w],
                biases: vec![Array1::zeros(1)],
                gate: Array1::zeros(0),
            },
            config,
            seed: 0,
        }
    }

    #[test]
    fn gate_features_by_mode() {
        let index = build_index([("d1", "a b a"), ("d2", "b c")], StemmerKind::None).unwrap();
        let store =
            EmbeddingStore::from_vectors([("a", vec![3.0, 4.0])], &norm()).unwrap();
        match gate_feature("b", Gating::Idf, &index, &store, 0) {
            GateFeature::Scalar(x) => assert!((x - 1.2f64.ln()).abs() < 1e-12),
            other => panic!("expected scalar, got {other:?}"),
        }
        match gate_feature("a", Gating::TermVector, &index, &store, 2) {
            GateFeature::Vector(v) => {
                assert!((v[0] - 0.6).abs() < 1e-12);
                assert!((v[1] - 0.8).abs() < 1e-12);
            }
            other => panic!("expected vector, got {other:?}"),
        }
        match gate_feature("zzz", Gating::TermVector, &index, &store, 2) {
            GateFeature::Vector(v) => assert_eq!(v, Array1::<f64>::zeros(2)),
            other => panic!("expected vector, got {other:?}"),
        }
        assert_eq!(gate_feature("a", Gating::Uniform, &index, &store, 0), GateFeature::None);
    }

    #[test]
    fn term_input_counts_exact_matches_without_embeddings() {
        let store = empty_store();
        let z0 = term_input("car", &["car", "truck", "car"], &store, InputKind::Ch, 5).unwrap();
        assert_eq!(z0, Array1::from(vec![0.0, 0.0, 0.0, 0.0, 2.0]));
        let lch = term_input("car", &["car", "truck", "car"], &store, InputKind::Lch, 5).unwrap();
        assert!((lch[4] - 3f64.ln()).abs() < 1e-12);
        let kmax = term_input("car", &["car", "truck"], &store, InputKind::Kmax, 3).unwrap();
        assert_eq!(kmax, Array1::from(vec![1.0, 0.0, 0.0]));
    }

    #[test]
    fn term_input_invariant_under_doc_permutation() {
        let store =
            EmbeddingStore::from_vectors([("x", vec![1.0, 0.0]), ("y", vec![0.0, 1.0])], &norm())
                .unwrap();
        let a = term_input("x", &["x", "y", "q", "x"], &store, InputKind::Nh, 5).unwrap();
        let b = term_input("x", &["q", "x", "x", "y"], &store, InputKind::Nh, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prepare_rejects_unknown_candidate() {
        let index = build_index([("d1", "a")], StemmerKind::None).unwrap();
        let err = prepare_query(
            "q",
            &["a".to_string()],
            &["ghost".to_string()],
            &index,
            &empty_store(),
            &net(InputKind::Ch, Gating::Uniform, 5),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DocMissing(d) if d == "ghost"));
    }

    #[test]
    fn prepare_rejects_empty_query() {
        let index = build_index([("d1", "a")], StemmerKind::None).unwrap();
        assert!(matches!(
            prepare_query(
                "q",
                &[],
                &[],
                &index,
                &empty_store(),
                &net(InputKind::Ch, Gating::Uniform, 5)
            ),
            Err(Error::NoQueryTerms)
        ));
    }

    #[test]
    fn rerank_orders_by_exact_match_count() {
        let index = build_index(
            [("none", "x y z"), ("one", "t x y"), ("three", "t t t")],
            StemmerKind::None,
        )
        .unwrap();
        let model = exact_match_model(5);
        let candidates: Vec<String> =
            ["none", "one", "three"].iter().map(|s| s.to_string()).collect();
        let out = rerank_candidates(
            &model,
            &index,
            &empty_store(),
            &["t".to_string()],
            &candidates,
        )
        .unwrap();
        let order: Vec<&str> = out.iter().map(|d| d.external_id.as_str()).collect();
        assert_eq!(order, vec!["three", "one", "none"]);
        assert!((out[0].score - 3f64.tanh()).abs() < 1e-12);
        assert!((out[2].score - 0.0).abs() < 1e-12);
        // Rerank permutes, never adds or drops.
        let mut exts: Vec<String> = out.into_iter().map(|d| d.external_id).collect();
        exts.sort();
        let mut want = candidates.clone();
        want.sort();
        assert_eq!(exts, want);
    }

    #[test]
    fn ranking_matches_rerank_order() {
        let index = build_index([("one", "t x"), ("two", "t t")], StemmerKind::None).unwrap();
        let model = exact_match_model(5);
        let pq = prepare_query(
            "q",
            &["t".to_string()],
            &["one".to_string(), "two".to_string()],
            &index,
            &empty_store(),
            &model.config,
        )
        .unwrap();
        assert_eq!(pq.ranking(&model).unwrap(), vec!["two", "one"]);
        assert_eq!(pq.candidate_ids(), vec!["one", "two"]);
    }
}
