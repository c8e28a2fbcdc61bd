//! Pairwise training: triple sampling from judgments, mini-batch hinge
//! loss with Adagrad updates, and early stopping on validation MAP.

use std::collections::{BTreeMap, HashMap};

use ndarray::{ArrayBase, DataMut, Dimension};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_run, Qrels, DEFAULT_AP_CUTOFF};
use crate::model::{DrmmModel, DrmmParams, NetworkConfig, TripleInput};
use crate::rerank::PreparedQuery;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adagrad_epsilon: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    /// Negatives sampled per positive per epoch.
    pub negatives_per_positive: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 20,
            learning_rate: 0.1,
            adagrad_epsilon: 1e-8,
            max_epochs: 30,
            patience: 5,
            negatives_per_positive: 1,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.adagrad_epsilon >= 0.0) {
            return Err(Error::InvalidConfig("adagrad_epsilon must be >= 0".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::InvalidConfig("max_epochs must be >= 1".into()));
        }
        if self.patience < 1 {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        if self.negatives_per_positive < 1 {
            return Err(Error::InvalidConfig(
                "negatives_per_positive must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Accumulated squared gradients, one cell per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdagradState {
    sums: DrmmParams,
}

impl AdagradState {
    pub fn new(params: &DrmmParams) -> Self {
        AdagradState {
            sums: params.zeros_like(),
        }
    }

    pub fn sums(&self) -> &DrmmParams {
        &self.sums
    }
}

fn adagrad_update<D, Sp, Sg, Ss>(
    params: &mut ArrayBase<Sp, D>,
    grads: &ArrayBase<Sg, D>,
    sums: &mut ArrayBase<Ss, D>,
    lr: f64,
    eps: f64,
) where
    D: Dimension,
    Sp: DataMut<Elem = f64>,
    Sg: ndarray::Data<Elem = f64>,
    Ss: DataMut<Elem = f64>,
{
    ndarray::Zip::from(params)
        .and(grads)
        .and(sums)
        .for_each(|p, &g, s| {
            if g == 0.0 {
                return;
            }
            *s += g * g;
            *p -= lr * g / (s.sqrt() + eps);
        });
}

/// One Adagrad step: `state += g^2; params -= lr * g / (sqrt(state) + eps)`
/// elementwise. Zero-gradient cells change neither the state nor the
/// parameter. A non-finite gradient aborts the step untouched.
pub fn adagrad_step(
    params: &mut DrmmParams,
    grads: &DrmmParams,
    state: &mut AdagradState,
    lr: f64,
    eps: f64,
) -> Result<()> {
    if !params.same_shape(grads) {
        return Err(Error::ShapeMismatch(
            "gradient shapes differ from parameter shapes".into(),
        ));
    }
    if !grads.all_finite() {
        return Err(Error::NonFiniteGradient("adagrad step aborted".into()));
    }
    for ((p, g), s) in params
        .weights
        .iter_mut()
        .zip(&grads.weights)
        .zip(&mut state.sums.weights)
    {
        adagrad_update(p, g, s, lr, eps);
    }
    for ((p, g), s) in params
        .biases
        .iter_mut()
        .zip(&grads.biases)
        .zip(&mut state.sums.biases)
    {
        adagrad_update(p, g, s, lr, eps);
    }
    adagrad_update(&mut params.gate, &grads.gate, &mut state.sums.gate, lr, eps);
    Ok(())
}

/// A (query, better document, worse document) training instance; the
/// judgments rank `doc_plus` strictly above `doc_minus`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingTriple {
    pub query_id: String,
    pub doc_plus: String,
    pub doc_minus: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TripleStats {
    pub triples: usize,
    /// Queries with no judged-relevant candidate.
    pub skipped_queries: usize,
    /// Sampled negatives that were unjudged rather than judged
    /// non-relevant.
    pub unjudged_negatives: usize,
}

/// Sample training triples: every judged-relevant candidate is a
/// positive, paired with up to `negatives_per_positive` candidates of
/// strictly lower grade drawn uniformly without replacement. Unjudged
/// candidates count as grade 0. Deterministic given the seed.
pub fn generate_triples(
    candidates: &BTreeMap<String, Vec<String>>,
    qrels: &Qrels,
    negatives_per_positive: usize,
    seed: u64,
) -> (Vec<TrainingTriple>, TripleStats) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = Vec::new();
    let mut stats = TripleStats::default();
    for (qid, cands) in candidates {
        let grade = |ext: &str| qrels.relevance(qid, ext);
        if !cands.iter().any(|c| grade(c) >= 1) {
            stats.skipped_queries += 1;
            continue;
        }
        for pos in cands.iter().filter(|c| grade(c) >= 1) {
            let pool: Vec<&String> = cands.iter().filter(|c| grade(c) < grade(pos)).collect();
            if pool.is_empty() {
                continue;
            }
            let n = negatives_per_positive.min(pool.len());
            let picked = rand::seq::index::sample(&mut rng, pool.len(), n);
            for i in picked {
                let neg = pool[i];
                if qrels.judged(qid).map_or(true, |j| !j.contains_key(neg)) {
                    stats.unjudged_negatives += 1;
                }
                triples.push(TrainingTriple {
                    query_id: qid.clone(),
                    doc_plus: pos.clone(),
                    doc_minus: neg.clone(),
                });
            }
        }
    }
    stats.triples = triples.len();
    (triples, stats)
}

/// Mean hinge loss and mean gradient over a batch of triples, plus the
/// number of margin-violating (gradient-carrying) triples.
pub struct BatchGrad {
    pub mean_loss: f64,
    pub active: usize,
    pub grads: DrmmParams,
}

pub fn batch_gradient(
    triples: &[TripleInput],
    params: &DrmmParams,
    gating: crate::model::Gating,
) -> Result<BatchGrad> {
    if triples.is_empty() {
        return Err(Error::NoTriples);
    }
    let mut acc = params.zeros_like();
    let mut loss_sum = 0.0;
    let mut active = 0;
    for t in triples {
        let (loss, g) = crate::model::gradients(t, params, gating)?;
        if loss > 0.0 {
            active += 1;
        }
        loss_sum += loss;
        acc.add_assign(&g);
    }
    acc.scale(1.0 / triples.len() as f64);
    Ok(BatchGrad {
        mean_loss: loss_sum / triples.len() as f64,
        active,
        grads: acc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Early stopping on a strictly-improving validation metric. With
/// patience p, training stops at the p-th consecutive epoch without
/// improvement; the caller keeps the checkpoint of the best epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    bad: usize,
    best: f64,
    best_epoch: Option<usize>,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Result<Self> {
        if patience < 1 {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        Ok(EarlyStopper {
            patience,
            bad: 0,
            best: f64::NEG_INFINITY,
            best_epoch: None,
        })
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        if value > self.best {
            self.best = value;
            self.best_epoch = Some(epoch);
            self.bad = 0;
            return StopDecision::Improved;
        }
        self.bad += 1;
        if self.bad >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub triples: usize,
    pub active_triples: usize,
    pub mean_loss: f64,
    pub validation_map: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Checkpoint of the best validation epoch.
    pub model: DrmmModel,
    pub best_epoch: usize,
    pub best_validation_map: f64,
    pub log: Vec<EpochLog>,
    pub triple_stats: TripleStats,
}

/// Derive a sub-seed, so nested deterministic stages (epochs, folds)
/// never share a random stream with their parent.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    seed.rotate_left(17) ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Train a fresh model on prepared training queries, early-stopping on
/// MAP over the prepared validation queries. Triples are resampled and
/// reshuffled each epoch from an epoch-specific seed, so the whole run
/// is a pure function of its inputs and the seed.
pub fn train(
    train_queries: &[PreparedQuery],
    validation_queries: &[PreparedQuery],
    qrels: &Qrels,
    net: &NetworkConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    net.validate()?;
    if train_queries.is_empty() || validation_queries.is_empty() {
        return Err(Error::InvalidConfig(
            "training and validation query sets must be non-empty".into(),
        ));
    }
    for v in validation_queries {
        if train_queries.iter().any(|t| t.query_id == v.query_id) {
            return Err(Error::InvalidConfig(format!(
                "query {} appears in both training and validation sets",
                v.query_id
            )));
        }
    }

    let candidates: BTreeMap<String, Vec<String>> = train_queries
        .iter()
        .map(|pq| (pq.query_id.clone(), pq.candidate_ids()))
        .collect();
    let by_id: HashMap<&str, &PreparedQuery> = train_queries
        .iter()
        .map(|pq| (pq.query_id.as_str(), pq))
        .collect();
    let inputs_of: HashMap<&str, HashMap<&str, usize>> = train_queries
        .iter()
        .map(|pq| {
            let m = pq
                .candidates
                .iter()
                .enumerate()
                .map(|(i, c)| (c.external_id.as_str(), i))
                .collect();
            (pq.query_id.as_str(), m)
        })
        .collect();

    let gating = net.variant.gating;
    let mut model = DrmmModel::new(net.clone(), config.seed)?;
    let mut state = AdagradState::new(&model.params);
    let mut stopper = EarlyStopper::new(config.patience)?;
    let mut best_params = model.params.clone();
    let mut best_epoch = 0;
    let mut log = Vec::new();
    let mut first_stats = TripleStats::default();

    for epoch in 1..=config.max_epochs {
        let epoch_seed = mix_seed(config.seed, epoch as u64);
        let (mut triples, stats) = generate_triples(
            &candidates,
            qrels,
            config.negatives_per_positive,
            epoch_seed,
        );
        if epoch == 1 {
            first_stats = stats;
        }
        if triples.is_empty() {
            return Err(Error::NoTriples);
        }
        let mut order_rng = ChaCha8Rng::seed_from_u64(mix_seed(epoch_seed, 0x0bad_5eed));
        triples.shuffle(&mut order_rng);

        let mut loss_sum = 0.0;
        let mut active = 0;
        for batch in triples.chunks(config.batch_size) {
            let resolved: Vec<TripleInput> = batch
                .iter()
                .map(|t| {
                    let pq = by_id[t.query_id.as_str()];
                    let idx = &inputs_of[t.query_id.as_str()];
                    TripleInput {
                        gate_features: pq.gate_features.clone(),
                        plus: pq.candidates[idx[t.doc_plus.as_str()]].term_inputs.clone(),
                        minus: pq.candidates[idx[t.doc_minus.as_str()]].term_inputs.clone(),
                    }
                })
                .collect();
            let bg = batch_gradient(&resolved, &model.params, gating)?;
            loss_sum += bg.mean_loss * resolved.len() as f64;
            active += bg.active;
            adagrad_step(
                &mut model.params,
                &bg.grads,
                &mut state,
                config.learning_rate,
                config.adagrad_epsilon,
            )?;
        }

        let mut run = BTreeMap::new();
        for pq in validation_queries {
            run.insert(pq.query_id.clone(), pq.ranking(&model)?);
        }
        let validation_map = evaluate_run(&run, qrels, DEFAULT_AP_CUTOFF).map;

        log.push(EpochLog {
            epoch,
            triples: triples.len(),
            active_triples: active,
            mean_loss: loss_sum / triples.len() as f64,
            validation_map,
        });

        match stopper.observe(epoch, validation_map) {
            StopDecision::Improved => {
                best_params = model.params.clone();
                best_epoch = epoch;
            }
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    model.params = best_params;
    let (_, best_map) = stopper.best().unwrap_or((best_epoch, f64::NEG_INFINITY));
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_validation_map: best_map,
        log,
        triple_stats: first_stats,
    })
}

/// Render the training log as one line per epoch.
pub fn format_log(log: &[EpochLog]) -> String {
    let mut out = String::new();
    for e in log {
        out.push_str(&format!(
            "epoch {}\ttriples {}\tactive {}\tloss {:.6}\tval_map {:.6}\n",
            e.epoch, e.triples, e.active_triples, e.mean_loss, e.validation_map
        ));
    }
    out
}
