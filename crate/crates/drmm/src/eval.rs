//! Evaluation: graded judgments, rank metrics (AP, nDCG@20, P@20),
//! report aggregation, the Fisher randomization significance test, and
//! k-fold cross-validation with per-fold hyperparameter selection.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// MAP is computed over the top-ranked 1000 documents by default.
pub const DEFAULT_AP_CUTOFF: usize = 1000;
pub const DEFAULT_METRIC_DEPTH: usize = 20;

/// Graded relevance judgments: (query, document) -> relevance >= 0.
/// Relevance >= 1 counts as relevant for the binary metrics. Unjudged
/// documents score 0.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    by_query: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Qrels::default()
    }

    /// Record a judgment. Negative grades (used by some TREC tracks for
    /// junk) clamp to 0.
    pub fn insert(&mut self, query_id: &str, external_id: &str, relevance: i64) {
        self.by_query
            .entry(query_id.to_string())
            .or_default()
            .insert(external_id.to_string(), relevance.max(0) as u32);
    }

    pub fn relevance(&self, query_id: &str, external_id: &str) -> u32 {
        self.by_query
            .get(query_id)
            .and_then(|m| m.get(external_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn judged(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.by_query.get(query_id)
    }

    /// Number of judged-relevant documents for the query.
    pub fn relevant_count(&self, query_id: &str) -> usize {
        self.by_query
            .get(query_id)
            .map(|m| m.values().filter(|&&r| r >= 1).count())
            .unwrap_or(0)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(String::as_str)
    }

    pub fn query_count(&self) -> usize {
        self.by_query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_query.is_empty()
    }
}

/// Average precision at `cutoff`: (1/R) sum of precision at each rank
/// holding a relevant document, where R is the total judged-relevant
/// count for the query (retrieved or not). 0 when R = 0.
pub fn average_precision(ranking: &[String], qrels: &Qrels, query_id: &str, cutoff: usize) -> f64 {
    let r = qrels.relevant_count(query_id);
    if r == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, doc) in ranking.iter().take(cutoff).enumerate() {
        if qrels.relevance(query_id, doc) >= 1 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / r as f64
}

fn dcg(gains: impl Iterator<Item = u32>) -> f64 {
    let mut total = 0.0;
    for (i, rel) in gains.enumerate() {
        let gain = 2f64.powi(rel as i32) - 1.0;
        total += gain / ((i + 2) as f64).log2();
    }
    total
}

/// nDCG@k with exponential gain 2^rel - 1 and log2(rank+1) discount.
/// The ideal ordering comes from the judged relevance grades sorted
/// descending. 0 when the query has no positive judgments.
pub fn ndcg_at(ranking: &[String], qrels: &Qrels, query_id: &str, k: usize) -> f64 {
    let Some(judged) = qrels.judged(query_id) else {
        return 0.0;
    };
    let mut ideal: Vec<u32> = judged.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter().take(k));
    if idcg == 0.0 {
        return 0.0;
    }
    let actual = dcg(
        ranking
            .iter()
            .take(k)
            .map(|doc| qrels.relevance(query_id, doc)),
    );
    actual / idcg
}

/// Precision at k: judged-relevant documents in the top k over k.
/// Rankings shorter than k count the missing tail as non-relevant.
pub fn precision_at(ranking: &[String], qrels: &Qrels, query_id: &str, k: usize) -> f64 {
    let hits = ranking
        .iter()
        .take(k)
        .filter(|doc| qrels.relevance(query_id, doc) >= 1)
        .count();
    hits as f64 / k as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub ap: f64,
    pub ndcg20: f64,
    pub p20: f64,
}

/// Per-query metrics plus their arithmetic means. Queries without any
/// judged-relevant document cannot be scored meaningfully; they are
/// listed in `skipped` and excluded from the means.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_query: BTreeMap<String, QueryEval>,
    pub skipped: Vec<String>,
    pub map: f64,
    pub mean_ndcg20: f64,
    pub mean_p20: f64,
}

fn mean<I: Iterator<Item = f64>>(values: I) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl EvalReport {
    fn from_per_query(per_query: BTreeMap<String, QueryEval>, skipped: Vec<String>) -> Self {
        let map = mean(per_query.values().map(|q| q.ap));
        let mean_ndcg20 = mean(per_query.values().map(|q| q.ndcg20));
        let mean_p20 = mean(per_query.values().map(|q| q.p20));
        EvalReport {
            per_query,
            skipped,
            map,
            mean_ndcg20,
            mean_p20,
        }
    }

    pub fn evaluated_count(&self) -> usize {
        self.per_query.len()
    }

    /// Machine-readable lines, one metric per line: `metric \t qid \t value`
    /// with the aggregate row keyed `all`.
    pub fn to_kv_lines(&self) -> String {
        let mut out = String::new();
        for (name, pick, all) in [
            ("map", (|q: &QueryEval| q.ap) as fn(&QueryEval) -> f64, self.map),
            ("ndcg20", |q: &QueryEval| q.ndcg20, self.mean_ndcg20),
            ("p20", |q: &QueryEval| q.p20, self.mean_p20),
        ] {
            for (qid, q) in &self.per_query {
                let _ = writeln!(out, "{name}\t{qid}\t{:.6}", pick(q));
            }
            let _ = writeln!(out, "{name}\tall\t{all:.6}");
        }
        out
    }

    /// Aligned plain-text table for humans.
    pub fn to_table(&self) -> String {
        let width = self
            .per_query
            .keys()
            .map(|q| q.len())
            .chain(["query".len(), "all".len()].into_iter())
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        let _ = writeln!(out, "{:width$}  {:>8}  {:>8}  {:>8}", "query", "map", "ndcg20", "p20");
        for (qid, q) in &self.per_query {
            let _ = writeln!(
                out,
                "{qid:width$}  {:>8.4}  {:>8.4}  {:>8.4}",
                q.ap, q.ndcg20, q.p20
            );
        }
        let _ = writeln!(
            out,
            "{:width$}  {:>8.4}  {:>8.4}  {:>8.4}",
            "all", self.map, self.mean_ndcg20, self.mean_p20
        );
        if !self.skipped.is_empty() {
            let _ = writeln!(
                out,
                "skipped (no judged-relevant docs): {}",
                self.skipped.join(" ")
            );
        }
        out
    }
}

/// Score every query of a run against the judgments. Queries whose
/// judgments contain no relevant document (including entirely unjudged
/// queries) are skipped.
pub fn evaluate_run(
    run: &BTreeMap<String, Vec<String>>,
    qrels: &Qrels,
    ap_cutoff: usize,
) -> EvalReport {
    let mut per_query = BTreeMap::new();
    let mut skipped = Vec::new();
    for (qid, ranking) in run {
        if qrels.relevant_count(qid) == 0 {
            skipped.push(qid.clone());
            continue;
        }
        per_query.insert(
            qid.clone(),
            QueryEval {
                ap: average_precision(ranking, qrels, qid, ap_cutoff),
                ndcg20: ndcg_at(ranking, qrels, qid, DEFAULT_METRIC_DEPTH),
                p20: precision_at(ranking, qrels, qid, DEFAULT_METRIC_DEPTH),
            },
        );
    }
    EvalReport::from_per_query(per_query, skipped)
}

/// Two-sided Fisher randomization test on paired per-query values.
/// Randomly sign-flips the per-query differences `iterations` times and
/// reports the smoothed fraction of permuted |mean|s at least as extreme
/// as the observed |mean|: p = (hits + 1) / (iterations + 1).
pub fn fisher_randomization(
    per_query_a: &[f64],
    per_query_b: &[f64],
    iterations: usize,
    seed: u64,
) -> Result<f64> {
    if per_query_a.len() != per_query_b.len() {
        return Err(Error::LengthMismatch(per_query_a.len(), per_query_b.len()));
    }
    if per_query_a.is_empty() {
        return Err(Error::InvalidConfig(
            "significance test needs at least one paired value".into(),
        ));
    }
    if iterations == 0 {
        return Err(Error::InvalidConfig("iterations must be positive".into()));
    }
    let diffs: Vec<f64> = per_query_a
        .iter()
        .zip(per_query_b)
        .map(|(a, b)| a - b)
        .collect();
    let n = diffs.len() as f64;
    let observed = (diffs.iter().sum::<f64>() / n).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..iterations {
        let mut total = 0.0;
        for &d in &diffs {
            total += if rng.random::<bool>() { d } else { -d };
        }
        if (total / n).abs() >= observed {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (iterations + 1) as f64)
}

/// A seeded partition of the query set into k folds of near-equal size
/// (round-robin over a shuffled order). Fold contents are stored sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    folds: Vec<Vec<String>>,
}

impl FoldPlan {
    pub fn new(query_ids: &[String], k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
        }
        let mut unique: Vec<String> = query_ids.to_vec();
        unique.sort();
        unique.dedup();
        if unique.len() < k {
            return Err(Error::TooFewQueries {
                folds: k,
                got: unique.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Fisher-Yates over the sorted ids, so the plan depends only on
        // the query set and the seed, not input order.
        for i in (1..unique.len()).rev() {
            let j = rng.random_range(0..=i);
            unique.swap(i, j);
        }
        let mut folds: Vec<Vec<String>> = vec![Vec::new(); k];
        for (i, qid) in unique.into_iter().enumerate() {
            folds[i % k].push(qid);
        }
        for fold in &mut folds {
            fold.sort();
        }
        Ok(FoldPlan { folds })
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Held-out queries of the given fold, sorted.
    pub fn fold(&self, i: usize) -> &[String] {
        &self.folds[i]
    }

    /// Queries of every fold except `i`, sorted.
    pub fn training_queries(&self, i: usize) -> Vec<String> {
        let mut out: Vec<String> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect();
        out.sort();
        out
    }

    pub fn assignments(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for (i, fold) in self.folds.iter().enumerate() {
            for qid in fold {
                out.insert(qid.clone(), i);
            }
        }
        out
    }
}

/// Outcome of one cross-validation fold: the setting chosen on the
/// training folds, its training MAP, the trained artifact itself, and
/// the held-out evaluation.
#[derive(Debug, Clone)]
pub struct FoldOutcome<S, M> {
    pub fold: usize,
    pub selected: S,
    pub train_map: f64,
    pub model: M,
    pub report: EvalReport,
}

/// Cross-validation result. The headline means average the fold-level
/// means; `pooled` collects every held-out query's metrics in one report.
#[derive(Debug, Clone)]
pub struct CvReport<S, M> {
    pub folds: Vec<FoldOutcome<S, M>>,
    pub mean_map: f64,
    pub mean_ndcg20: f64,
    pub mean_p20: f64,
    pub pooled: EvalReport,
}

/// For each fold: train every candidate setting on the 4 training folds,
/// pick the one with the best training MAP (first wins ties), then rank
/// the held-out fold with it. `train` receives (fold, setting, training
/// query ids) and returns an opaque trained artifact; `rank` produces a
/// ranking of external ids for one query.
pub fn cross_validate<S, M, TF, RF>(
    plan: &FoldPlan,
    settings: &[S],
    qrels: &Qrels,
    ap_cutoff: usize,
    mut train: TF,
    mut rank: RF,
) -> Result<CvReport<S, M>>
where
    S: Clone,
    TF: FnMut(usize, &S, &[String]) -> Result<M>,
    RF: FnMut(&M, &str) -> Result<Vec<String>>,
{
    if settings.is_empty() {
        return Err(Error::InvalidConfig("no candidate settings".into()));
    }
    let mut folds = Vec::with_capacity(plan.k());
    for fold in 0..plan.k() {
        let train_qids = plan.training_queries(fold);
        let mut best: Option<(f64, usize, M)> = None;
        for (si, setting) in settings.iter().enumerate() {
            let model = train(fold, setting, &train_qids)?;
            let mut run = BTreeMap::new();
            for qid in &train_qids {
                run.insert(qid.clone(), rank(&model, qid)?);
            }
            let report = evaluate_run(&run, qrels, ap_cutoff);
            if best.as_ref().map_or(true, |(m, _, _)| report.map > *m) {
                best = Some((report.map, si, model));
            }
        }
        let (train_map, si, model) = best.unwrap();
        let mut run = BTreeMap::new();
        for qid in plan.fold(fold) {
            run.insert(qid.clone(), rank(&model, qid)?);
        }
        folds.push(FoldOutcome {
            fold,
            selected: settings[si].clone(),
            train_map,
            report: evaluate_run(&run, qrels, ap_cutoff),
            model,
        });
    }

    let mean_map = mean(folds.iter().map(|f| f.report.map));
    let mean_ndcg20 = mean(folds.iter().map(|f| f.report.mean_ndcg20));
    let mean_p20 = mean(folds.iter().map(|f| f.report.mean_p20));
    let mut per_query = BTreeMap::new();
    let mut skipped = Vec::new();
    for f in &folds {
        per_query.extend(f.report.per_query.clone());
        skipped.extend(f.report.skipped.iter().cloned());
    }
    skipped.sort();
    let pooled = EvalReport::from_per_query(per_query, skipped);
    Ok(CvReport {
        folds,
        mean_map,
        mean_ndcg20,
        mean_p20,
        pooled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn qrels_of(qid: &str, judged: &[(&str, i64)]) -> Qrels {
        let mut q = Qrels::new();
        for (doc, rel) in judged {
            q.insert(qid, doc, *rel);
        }
        q
    }

    fn ranking(docs: &[&str]) -> Vec<String> {
        docs.iter().map(|d| d.to_string()).collect()
    }

    #[test]
    fn ap_worked_example() {
        let qrels = qrels_of("q", &[("r1", 1), ("r2", 1)]);
        let ap = average_precision(&ranking(&["r1", "n", "r2"]), &qrels, "q", 1000);
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn ap_perfect_and_empty() {
        let qrels = qrels_of("q", &[("r1", 1), ("r2", 2)]);
        assert_eq!(average_precision(&ranking(&["r1", "r2"]), &qrels, "q", 1000), 1.0);
        assert_eq!(average_precision(&ranking(&["n1", "n2"]), &qrels, "q", 1000), 0.0);
        assert_eq!(average_precision(&[], &qrels, "q", 1000), 0.0);
    }

    #[test]
    fn ap_zero_when_no_relevant_judged() {
        let qrels = qrels_of("q", &[("n", 0)]);
        assert_eq!(average_precision(&ranking(&["n"]), &qrels, "q", 1000), 0.0);
        assert_eq!(average_precision(&ranking(&["x"]), &Qrels::new(), "q", 1000), 0.0);
    }

    #[test]
    fn ap_respects_cutoff() {
        let qrels = qrels_of("q", &[("r", 1)]);
        let rank3 = ranking(&["n", "n", "r"]);
        assert_eq!(average_precision(&rank3, &qrels, "q", 2), 0.0);
        assert!((average_precision(&rank3, &qrels, "q", 3) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ap_denominator_counts_unretrieved_relevant() {
        let qrels = qrels_of("q", &[("r1", 1), ("r2", 1)]);
        let ap = average_precision(&ranking(&["r1"]), &qrels, "q", 1000);
        assert!((ap - 0.5).abs() < 1e-12);
    }

    #[test]
    fn negative_judgments_clamp_to_zero() {
        let qrels = qrels_of("q", &[("junk", -2), ("r", 1)]);
        assert_eq!(qrels.relevance("q", "junk"), 0);
        assert_eq!(qrels.relevant_count("q"), 1);
    }

    #[test]
    fn ndcg_ideal_is_one() {
        let qrels = qrels_of("q", &[("a", 3), ("b", 2), ("c", 1), ("d", 0)]);
        let n = ndcg_at(&ranking(&["a", "b", "c", "d"]), &qrels, "q", 20);
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ndcg_single_relevant_at_rank_two() {
        let qrels = qrels_of("q", &[("r", 1)]);
        let n = ndcg_at(&ranking(&["n", "r"]), &qrels, "q", 20);
        assert!((n - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((n - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn ndcg_graded_hand_value() {
        let qrels = qrels_of("q", &[("hi", 2), ("lo", 1)]);
        let n = ndcg_at(&ranking(&["lo", "hi"]), &qrels, "q", 20);
        let expect = (1.0 + 3.0 / 3f64.log2()) / (3.0 + 1.0 / 3f64.log2());
        assert!((n - expect).abs() < 1e-12);
    }

    #[test]
    fn ndcg_degenerate_cases() {
        let qrels = qrels_of("q", &[("r", 1)]);
        assert_eq!(ndcg_at(&[], &qrels, "q", 20), 0.0);
        let no_rel = qrels_of("q", &[("n", 0)]);
        assert_eq!(ndcg_at(&ranking(&["n"]), &no_rel, "q", 20), 0.0);
        assert_eq!(ndcg_at(&ranking(&["x"]), &Qrels::new(), "q", 20), 0.0);
    }

    #[test]
    fn precision_denominator_is_k() {
        let mut qrels = Qrels::new();
        for i in 0..10 {
            qrels.insert("q", &format!("r{i}"), 1);
        }
        let ten: Vec<String> = (0..10).map(|i| format!("r{i}")).collect();
        assert!((precision_at(&ten, &qrels, "q", 20) - 0.5).abs() < 1e-12);
        let five_of_twenty: Vec<String> = (0..20)
            .map(|i| {
                if i < 5 {
                    format!("r{i}")
                } else {
                    format!("n{i}")
                }
            })
            .collect();
        assert!((precision_at(&five_of_twenty, &qrels, "q", 20) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn evaluate_run_skips_and_averages() {
        let mut qrels = Qrels::new();
        qrels.insert("q1", "r", 1);
        qrels.insert("q2", "n", 0);
        qrels.insert("q3", "r", 1);
        let mut run = BTreeMap::new();
        run.insert("q1".to_string(), ranking(&["r"]));
        run.insert("q2".to_string(), ranking(&["n"]));
        run.insert("q3".to_string(), ranking(&["x", "r"]));
        let report = evaluate_run(&run, &qrels, 1000);
        assert_eq!(report.evaluated_count(), 2);
        assert_eq!(report.skipped, vec!["q2".to_string()]);
        assert!((report.map - (1.0 + 0.5) / 2.0).abs() < 1e-12);
        let lines = report.to_kv_lines();
        assert!(lines.contains("map\tq1\t1.000000"));
        assert!(lines.contains("map\tall\t0.750000"));
        assert!(lines.lines().count() == 9);
        assert!(report.to_table().contains("skipped"));
    }

    #[test]
    fn fisher_identical_inputs_give_p_one() {
        let a = vec![0.3, 0.5, 0.2];
        let p = fisher_randomization(&a, &a.clone(), 1000, 7).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn fisher_single_pair_symmetry() {
        let p = fisher_randomization(&[0.9], &[0.1], 999, 3).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn fisher_detects_consistent_difference() {
        let b: Vec<f64> = (0..30).map(|i| 0.2 + 0.01 * (i % 7) as f64).collect();
        let a: Vec<f64> = b.iter().map(|v| v + 0.3).collect();
        let p = fisher_randomization(&a, &b, 2000, 11).unwrap();
        assert!(p < 0.05, "p = {p}");
    }

    #[test]
    fn fisher_input_validation() {
        assert!(matches!(
            fisher_randomization(&[1.0], &[1.0, 2.0], 10, 0),
            Err(Error::LengthMismatch(1, 2))
        ));
        assert!(fisher_randomization(&[], &[], 10, 0).is_err());
        assert!(fisher_randomization(&[1.0], &[1.0], 0, 0).is_err());
    }

    #[test]
    fn fisher_deterministic_given_seed() {
        let a = vec![0.4, 0.6, 0.1, 0.9];
        let b = vec![0.3, 0.7, 0.2, 0.5];
        let p1 = fisher_randomization(&a, &b, 5000, 42).unwrap();
        let p2 = fisher_randomization(&a, &b, 5000, 42).unwrap();
        assert_eq!(p1.to_bits(), p2.to_bits());
    }

    fn qids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("q{i:02}")).collect()
    }

    #[test]
    fn fold_plan_partitions_evenly() {
        let ids = qids(10);
        let plan = FoldPlan::new(&ids, 5, 17).unwrap();
        assert_eq!(plan.k(), 5);
        let mut seen: Vec<String> = Vec::new();
        for i in 0..5 {
            assert_eq!(plan.fold(i).len(), 2);
            seen.extend(plan.fold(i).iter().cloned());
            assert_eq!(plan.training_queries(i).len(), 8);
        }
        seen.sort();
        assert_eq!(seen, ids);
    }

    #[test]
    fn fold_plan_sizes_differ_by_at_most_one() {
        let plan = FoldPlan::new(&qids(13), 5, 4).unwrap();
        let mut sizes: Vec<usize> = (0..5).map(|i| plan.fold(i).len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 3, 3, 3]);
    }

    #[test]
    fn fold_plan_seed_determinism() {
        let ids = qids(15);
        let a = FoldPlan::new(&ids, 5, 9).unwrap();
        let b = FoldPlan::new(&ids, 5, 9).unwrap();
        assert_eq!(a, b);
        let mut shuffled = ids.clone();
        shuffled.reverse();
        let c = FoldPlan::new(&shuffled, 5, 9).unwrap();
        assert_eq!(a, c);
        let d = FoldPlan::new(&ids, 5, 10).unwrap();
        assert_ne!(a.assignments(), d.assignments());
    }

    #[test]
    fn fold_plan_too_few_queries() {
        assert!(matches!(
            FoldPlan::new(&qids(3), 5, 0),
            Err(Error::TooFewQueries { folds: 5, got: 3 })
        ));
        assert!(FoldPlan::new(&qids(10), 1, 0).is_err());
    }

    #[test]
    fn cross_validate_degenerate_single_setting() {
        let mut qrels = Qrels::new();
        for qid in qids(10) {
            qrels.insert(&qid, "good", 1);
            qrels.insert(&qid, "bad", 0);
        }
        let plan = FoldPlan::new(&qids(10), 5, 1).unwrap();
        let report = cross_validate(
            &plan,
            &["only"],
            &qrels,
            1000,
            |_, _, _| Ok(()),
            |_, _| Ok(ranking(&["good", "bad"])),
        )
        .unwrap();
        assert_eq!(report.folds.len(), 5);
        assert!((report.mean_map - 1.0).abs() < 1e-12);
        assert_eq!(report.pooled.evaluated_count(), 10);
    }

    #[test]
    fn cross_validate_selects_better_setting() {
        let mut qrels = Qrels::new();
        for qid in qids(10) {
            qrels.insert(&qid, "good", 1);
            qrels.insert(&qid, "bad", 0);
        }
        let plan = FoldPlan::new(&qids(10), 5, 1).unwrap();
        let report = cross_validate(
            &plan,
            &["reversed", "oracle"],
            &qrels,
            1000,
            |_, setting, _| Ok(*setting),
            |setting, _| {
                Ok(if *setting == "oracle" {
                    ranking(&["good", "bad"])
                } else {
                    ranking(&["bad", "good"])
                })
            },
        )
        .unwrap();
        for f in &report.folds {
            assert_eq!(f.selected, "oracle");
            assert!((f.train_map - 1.0).abs() < 1e-12);
        }
        assert!((report.mean_map - 1.0).abs() < 1e-12);
    }

    fn ranking_with_judgments() -> impl Strategy<Value = (Vec<String>, Qrels)> {
        prop::collection::vec(0u32..3, 1..8).prop_flat_map(|rels| {
            let n = rels.len();
            (Just(rels), prop::collection::vec(any::<u64>(), n)).prop_map(|(rels, keys)| {
                let mut idx: Vec<usize> = (0..rels.len()).collect();
                idx.sort_by_key(|&i| keys[i]);
                let mut qrels = Qrels::new();
                for (i, r) in rels.iter().enumerate() {
                    qrels.insert("q", &format!("d{i}"), *r as i64);
                }
                let ranking = idx.into_iter().map(|i| format!("d{i}")).collect();
                (ranking, qrels)
            })
        })
    }

    proptest! {
        #[test]
        fn metrics_stay_in_unit_interval((ranking, qrels) in ranking_with_judgments()) {
            for v in [
                average_precision(&ranking, &qrels, "q", 1000),
                ndcg_at(&ranking, &qrels, "q", 20),
                precision_at(&ranking, &qrels, "q", 20),
            ] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
        }

        #[test]
        fn swapping_relevant_upward_never_hurts(
            (ranking, qrels) in ranking_with_judgments(),
            pos in 0usize..7,
        ) {
            // Find an adjacent (non-relevant, relevant) pair at or after
            // `pos` and swap the relevant one upward.
            let mut swapped = ranking.clone();
            let mut target = None;
            for i in pos.min(ranking.len().saturating_sub(1))..ranking.len().saturating_sub(1) {
                let up = qrels.relevance("q", &ranking[i]);
                let down = qrels.relevance("q", &ranking[i + 1]);
                if up == 0 && down >= 1 {
                    target = Some(i);
                    break;
                }
            }
            prop_assume!(target.is_some());
            let i = target.unwrap();
            swapped.swap(i, i + 1);
            prop_assert!(
                average_precision(&swapped, &qrels, "q", 1000)
                    >= average_precision(&ranking, &qrels, "q", 1000) - 1e-12
            );
            prop_assert!(
                ndcg_at(&swapped, &qrels, "q", 20) >= ndcg_at(&ranking, &qrels, "q", 20) - 1e-12
            );
            prop_assert!(
                precision_at(&swapped, &qrels, "q", 20)
                    >= precision_at(&ranking, &qrels, "q", 20) - 1e-12
            );
        }
    }
}
