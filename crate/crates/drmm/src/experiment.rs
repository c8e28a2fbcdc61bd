//! End-to-end experiment protocol: normalize topics, retrieve
//! first-stage candidates, precompute network inputs, cross-validate
//! training with a per-fold inner validation split for early stopping,
//! rerank each held-out fold with its fold's model, and compare the
//! result against the first-stage baseline with a randomization test.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::eval::{
    cross_validate, evaluate_run, fisher_randomization, CvReport, EvalReport, FoldPlan, Qrels,
};
use crate::firststage::{retrieve, RetrievalParams, ScoredDoc};
use crate::index::Index;
use crate::model::{Gating, InputKind, ModelVariant, NetworkConfig};
use crate::rerank::{prepare_query, PreparedQuery};
use crate::textpipe::{remove_stopwords, Normalizer, StopList};
use crate::train::{mix_seed, train, TrainConfig, TrainOutcome};
use crate::trec::{QueryField, Topic};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub variant: ModelVariant,
    /// Histogram bins; doubles as the k of the k-max ablation.
    pub bins: usize,
    /// Hidden layer widths between the input layer and the scalar output.
    pub hidden: Vec<usize>,
    pub query_field: QueryField,
    /// First-stage model; its `top_k` is the rerank depth.
    pub first_stage: RetrievalParams,
    /// Documents kept per query in the final run files.
    pub output_depth: usize,
    pub ap_cutoff: usize,
    pub folds: usize,
    pub fold_seed: u64,
    /// Base training settings; the learning rate is swept over
    /// `learning_rates` and the per-fold seed is derived from `seed`.
    pub train: TrainConfig,
    /// Fraction of each fold's training queries held out for early
    /// stopping.
    pub validation_fraction: f64,
    /// Candidate learning rates; per fold, the one with the best
    /// training MAP is kept.
    pub learning_rates: Vec<f64>,
    pub significance_iterations: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let learning_rates = vec![train.learning_rate];
        ExperimentConfig {
            variant: ModelVariant::new(InputKind::Lch, Gating::Idf).unwrap(),
            bins: 30,
            hidden: vec![5],
            query_field: QueryField::Title,
            first_stage: RetrievalParams::default(),
            output_depth: 1000,
            ap_cutoff: 1000,
            folds: 5,
            fold_seed: 42,
            train,
            validation_fraction: 0.2,
            learning_rates,
            significance_iterations: 100_000,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.first_stage.validate()?;
        self.train.validate()?;
        if self.bins < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 histogram bins, got {}",
                self.bins
            )));
        }
        if self.output_depth == 0 {
            return Err(Error::InvalidConfig("output_depth must be at least 1".into()));
        }
        if self.first_stage.top_k < self.output_depth {
            return Err(Error::InvalidConfig(format!(
                "rerank depth {} is smaller than output depth {}",
                self.first_stage.top_k, self.output_depth
            )));
        }
        if self.ap_cutoff == 0 {
            return Err(Error::InvalidConfig("ap_cutoff must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 folds, got {}",
                self.folds
            )));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "validation_fraction must lie strictly between 0 and 1, got {}",
                self.validation_fraction
            )));
        }
        if self.learning_rates.is_empty() {
            return Err(Error::InvalidConfig("no candidate learning rates".into()));
        }
        if self.learning_rates.iter().any(|lr| !(lr.is_finite() && *lr > 0.0)) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if self.significance_iterations == 0 {
            return Err(Error::InvalidConfig(
                "significance_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// The network architecture this configuration trains.
    pub fn network(&self, embedding_dim: usize) -> NetworkConfig {
        let mut layer_sizes = Vec::with_capacity(self.hidden.len() + 2);
        layer_sizes.push(self.bins);
        layer_sizes.extend_from_slice(&self.hidden);
        layer_sizes.push(1);
        NetworkConfig {
            layer_sizes,
            variant: self.variant,
            embedding_dim,
        }
    }
}

/// A topic left out of the experiment, with the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedTopic {
    pub query_id: String,
    pub reason: String,
}

pub struct ExperimentOutcome {
    /// First-stage results truncated to the output depth.
    pub baseline_run: BTreeMap<String, Vec<ScoredDoc>>,
    pub baseline: EvalReport,
    /// Fold-level results; each fold's `model` is the training outcome
    /// whose checkpoint reranked that fold.
    pub cv: CvReport<f64, TrainOutcome>,
    /// Reranked results truncated to the output depth, each query scored
    /// by the model of the fold holding it out.
    pub drmm_run: BTreeMap<String, Vec<ScoredDoc>>,
    pub drmm: EvalReport,
    /// Fisher randomization p-value for DRMM vs. first-stage per-query
    /// AP; absent when no query was evaluated by both.
    pub p_value: Option<f64>,
    pub skipped_topics: Vec<SkippedTopic>,
    pub fold_assignments: BTreeMap<String, usize>,
}

fn rankings(run: &BTreeMap<String, Vec<ScoredDoc>>) -> BTreeMap<String, Vec<String>> {
    run.iter()
        .map(|(qid, docs)| (qid.clone(), docs.iter().map(|d| d.external_id.clone()).collect()))
        .collect()
}

/// Deterministically split query ids into (training, validation) sets.
/// The ids are sorted and deduplicated before the seeded shuffle, so
/// the outcome does not depend on input order; both sides come back
/// sorted and keep at least one query each.
pub fn validation_split(
    query_ids: &[String],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "validation fraction must lie strictly between 0 and 1, got {fraction}"
        )));
    }
    let mut ids = query_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "{} distinct queries are too few to split off a validation set",
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..ids.len()).rev() {
        let j = rng.random_range(0..=i);
        ids.swap(i, j);
    }
    let mut n_val = ((ids.len() as f64) * fraction).round() as usize;
    n_val = n_val.clamp(1, ids.len() - 1);
    let (val, train) = ids.split_at(n_val);
    let mut val = val.to_vec();
    let mut train = train.to_vec();
    val.sort();
    train.sort();
    Ok((train, val))
}

/// Normalize a topic into query terms: tokenize the chosen field with
/// the index's stemmer and drop stopwords.
pub fn query_terms(
    topic: &Topic,
    field: QueryField,
    normalizer: &Normalizer,
    stoplist: &StopList,
) -> Vec<String> {
    let tokens = normalizer.tokenize(topic.text(field));
    remove_stopwords(tokens, stoplist)
        .into_iter()
        .map(|t| t.normalized)
        .collect()
}

/// Run the whole protocol over an indexed corpus. Deterministic: the
/// same inputs and configuration yield bit-identical outcomes.
pub fn run_experiment(
    index: &Index,
    store: &EmbeddingStore,
    topics: &[Topic],
    qrels: &Qrels,
    config: &ExperimentConfig,
) -> Result<ExperimentOutcome> {
    config.validate()?;
    let net = config.network(store.dim());
    net.validate()?;
    let normalizer = Normalizer::new(index.stemmer());
    let stoplist = StopList::default_list(&normalizer);

    let mut baseline_run = BTreeMap::new();
    let mut prepared: BTreeMap<String, PreparedQuery> = BTreeMap::new();
    let mut skipped_topics = Vec::new();
    for topic in topics {
        let terms = query_terms(topic, config.query_field, &normalizer, &stoplist);
        if terms.is_empty() {
            skipped_topics.push(SkippedTopic {
                query_id: topic.query_id.clone(),
                reason: "no query terms after normalization".into(),
            });
            continue;
        }
        let candidates = retrieve(index, &terms, &config.first_stage)?;
        if candidates.is_empty() {
            skipped_topics.push(SkippedTopic {
                query_id: topic.query_id.clone(),
                reason: "no candidate documents in the collection".into(),
            });
            continue;
        }
        let ids: Vec<String> = candidates.iter().map(|d| d.external_id.clone()).collect();
        prepared.insert(
            topic.query_id.clone(),
            prepare_query(&topic.query_id, &terms, &ids, index, store, &net)?,
        );
        let mut shortlist = candidates;
        shortlist.truncate(config.output_depth);
        baseline_run.insert(topic.query_id.clone(), shortlist);
    }

    let baseline = evaluate_run(&rankings(&baseline_run), qrels, config.ap_cutoff);

    let qids: Vec<String> = prepared.keys().cloned().collect();
    let plan = FoldPlan::new(&qids, config.folds, config.fold_seed)?;

    let cv = cross_validate(
        &plan,
        &config.learning_rates,
        qrels,
        config.ap_cutoff,
        |fold, lr, train_qids| {
            if train_qids.len() < 2 {
                return Err(Error::InvalidConfig(format!(
                    "fold {fold} has {} training queries; too few to split off a validation set",
                    train_qids.len()
                )));
            }
            let (train_ids, val_ids) = validation_split(
                train_qids,
                config.validation_fraction,
                mix_seed(config.fold_seed, 1000 + fold as u64),
            )?;
            let to_prepared = |subset: &[String]| -> Vec<PreparedQuery> {
                subset.iter().map(|qid| prepared[qid].clone()).collect()
            };
            let tc = TrainConfig {
                learning_rate: *lr,
                seed: mix_seed(config.train.seed, fold as u64),
                ..config.train.clone()
            };
            train(&to_prepared(&train_ids), &to_prepared(&val_ids), qrels, &net, &tc)
        },
        |outcome, qid| prepared[qid].ranking(&outcome.model),
    )?;

    let mut drmm_run = BTreeMap::new();
    for (fold, outcome) in cv.folds.iter().enumerate() {
        for qid in plan.fold(fold) {
            let mut scored = prepared[qid].rerank(&outcome.model.model)?;
            scored.truncate(config.output_depth);
            drmm_run.insert(qid.clone(), scored);
        }
    }
    let drmm = evaluate_run(&rankings(&drmm_run), qrels, config.ap_cutoff);

    let mut drmm_ap = Vec::new();
    let mut base_ap = Vec::new();
    for (qid, eval) in &drmm.per_query {
        if let Some(b) = baseline.per_query.get(qid) {
            drmm_ap.push(eval.ap);
            base_ap.push(b.ap);
        }
    }
    let p_value = if drmm_ap.is_empty() {
        None
    } else {
        Some(fisher_randomization(
            &drmm_ap,
            &base_ap,
            config.significance_iterations,
            mix_seed(config.fold_seed, 0x51f),
        )?)
    };

    Ok(ExperimentOutcome {
        baseline_run,
        baseline,
        cv,
        drmm_run,
        drmm,
        p_value,
        skipped_topics,
        fold_assignments: plan.assignments(),
    })
}
