//! End-to-end tests driving the compiled binary through the full
//! pipeline on a small synthetic task.

use std::path::Path;
use std::process::{Command, Output};

use drmm::trec::read_run;

fn drmm_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_drmm"))
}

fn run_ok(args: &[&str], dir: &Path) -> Output {
    let out = drmm_bin().args(args).current_dir(dir).output().unwrap();
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str], dir: &Path) -> i32 {
    let out = drmm_bin().args(args).current_dir(dir).output().unwrap();
    out.status.code().unwrap()
}

fn synth(dir: &Path) {
    run_ok(
        &[
            "synth",
            "--output",
            "data",
            "--docs",
            "100",
            "--queries",
            "8",
            "--vocab",
            "24",
            "--dim",
            "4",
            "--relevant-per-query",
            "5",
            "--distractors-per-query",
            "4",
            "--seed",
            "11",
        ],
        dir,
    );
}

#[test]
fn pipeline_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    run_ok(
        &["index", "--corpus", "data/corpus.tsv", "--index-dir", "idx", "--stemmer", "none"],
        dir,
    );

    let retrieve = [
        "retrieve",
        "--index-dir",
        "idx",
        "--topics",
        "data/topics.tsv",
        "--output",
        "ql.run",
        "--top-k",
        "200",
    ];
    run_ok(&retrieve, dir);
    let first = std::fs::read(dir.join("ql.run")).unwrap();
    run_ok(&retrieve, dir);
    assert_eq!(first, std::fs::read(dir.join("ql.run")).unwrap());

    run_ok(
        &[
            "train",
            "--index-dir",
            "idx",
            "--embeddings",
            "data/embeddings.txt",
            "--topics",
            "data/topics.tsv",
            "--qrels",
            "data/qrels.txt",
            "--candidates",
            "ql.run",
            "--output",
            "model.json",
            "--bins",
            "5",
            "--hidden",
            "3",
            "--max-epochs",
            "3",
            "--patience",
            "2",
        ],
        dir,
    );
    run_ok(
        &[
            "rerank",
            "--index-dir",
            "idx",
            "--embeddings",
            "data/embeddings.txt",
            "--model",
            "model.json",
            "--run",
            "ql.run",
            "--topics",
            "data/topics.tsv",
            "--output",
            "drmm.run",
            "--depth",
            "50",
        ],
        dir,
    );

    let candidates = read_run(&dir.join("ql.run")).unwrap();
    let reranked = read_run(&dir.join("drmm.run")).unwrap();
    assert_eq!(candidates.len(), reranked.len());
    for (qid, entries) in &reranked {
        assert!(entries.len() <= 50);
        let pool: std::collections::BTreeSet<&str> = candidates[qid]
            .iter()
            .map(|e| e.external_id.as_str())
            .collect();
        for e in entries {
            assert!(pool.contains(e.external_id.as_str()));
        }
    }

    let eval = run_ok(
        &[
            "evaluate",
            "--run",
            "drmm.run",
            "--qrels",
            "data/qrels.txt",
            "--kv",
            "--baseline",
            "ql.run",
            "--iterations",
            "500",
        ],
        dir,
    );
    let stdout = String::from_utf8(eval.stdout).unwrap();
    for metric in ["map\tall\t", "ndcg20\tall\t", "p20\tall\t", "p_map\tall\t"] {
        assert!(stdout.contains(metric), "missing {metric:?} in:\n{stdout}");
    }
}

#[test]
fn index_refuses_overwrite_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let index = ["index", "--corpus", "data/corpus.tsv", "--index-dir", "idx"];
    run_ok(&index, dir);
    assert_eq!(exit_code(&index, dir), 2);
    let mut forced = index.to_vec();
    forced.push("--force");
    run_ok(&forced, dir);
}

#[test]
fn retrieve_skips_stopped_out_topics() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    run_ok(
        &["index", "--corpus", "data/corpus.tsv", "--index-dir", "idx", "--stemmer", "none"],
        dir,
    );
    let mut topics = std::fs::read_to_string(dir.join("data/topics.tsv")).unwrap();
    topics.push_str("s99\tthe of and\n");
    std::fs::write(dir.join("data/topics.tsv"), topics).unwrap();
    let out = drmm_bin()
        .args([
            "retrieve",
            "--index-dir",
            "idx",
            "--topics",
            "data/topics.tsv",
            "--output",
            "ql.run",
        ])
        .current_dir(dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("s99"), "{stderr}");
    let run = read_run(&dir.join("ql.run")).unwrap();
    assert!(!run.contains_key("s99"));
    assert_eq!(run.len(), 8);
}

#[test]
fn experiment_is_deterministic_and_persists_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    std::fs::write(
        dir.join("exp.conf"),
        "corpus = data/corpus.tsv\n\
         topics = data/topics.tsv\n\
         qrels = data/qrels.txt\n\
         embeddings = data/embeddings.txt\n\
         index_dir = idx\n\
         output_dir = out\n\
         stemmer = none\n\
         bins = 5\n\
         hidden = 3\n\
         folds = 3\n\
         max_epochs = 2\n\
         patience = 2\n\
         significance_iterations = 500\n",
    )
    .unwrap();
    let first = run_ok(&["experiment", "--config", "exp.conf"], dir);
    let artifacts = [
        "firststage.run",
        "drmm.run",
        "firststage.eval.tsv",
        "drmm.eval.tsv",
        "folds.tsv",
        "skipped.tsv",
        "report.txt",
        "fold-0.model.json",
        "fold-1.model.json",
        "fold-2.model.json",
        "fold-0.train.log",
    ];
    let snapshot: Vec<Vec<u8>> = artifacts
        .iter()
        .map(|f| std::fs::read(dir.join("out").join(f)).unwrap())
        .collect();

    let second = run_ok(
        &["experiment", "--config", "exp.conf", "--output-dir", "out2"],
        dir,
    );
    assert_eq!(first.stdout_without_paths(), second.stdout_without_paths());
    for (f, bytes) in artifacts.iter().zip(&snapshot) {
        assert_eq!(
            bytes,
            &std::fs::read(dir.join("out2").join(f)).unwrap(),
            "artifact {f} differs between runs"
        );
    }
    let run = read_run(&dir.join("out/drmm.run")).unwrap();
    assert_eq!(run.len(), 8);
}

trait StdoutMetrics {
    fn stdout_without_paths(&self) -> Vec<String>;
}

impl StdoutMetrics for Output {
    /// Metric lines only; the report path differs between output dirs.
    fn stdout_without_paths(&self) -> Vec<String> {
        String::from_utf8_lossy(&self.stdout)
            .lines()
            .filter(|l| !l.starts_with("report\t"))
            .map(str::to_string)
            .collect()
    }
}

#[test]
fn bundled_toy_experiment_completes() {
    let repo = Path::new(env!("CARGO_MANIFEST_DIR"))
        .ancestors()
        .nth(2)
        .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let out = drmm_bin()
        .args([
            "experiment",
            "--config",
            "data/toy/experiment.conf",
            "--index-dir",
            tmp.path().join("idx").to_str().unwrap(),
            "--output-dir",
            tmp.path().join("out").to_str().unwrap(),
            "--significance-iterations",
            "2000",
        ])
        .current_dir(repo)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    let metric = |name: &str| -> f64 {
        stdout
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{name}\t")))
            .unwrap_or_else(|| panic!("missing {name} in:\n{stdout}"))
            .parse()
            .unwrap()
    };
    assert!(metric("drmm_map") >= metric("firststage_map"));
    for name in ["firststage_ndcg20", "firststage_p20", "drmm_ndcg20", "drmm_p20", "p_value"] {
        assert!(metric(name).is_finite());
    }
    assert!(tmp.path().join("out/report.txt").exists());
}

#[test]
fn exit_codes_follow_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    run_ok(
        &["index", "--corpus", "data/corpus.tsv", "--index-dir", "idx", "--stemmer", "none"],
        dir,
    );

    std::fs::write(dir.join("bad.tsv"), "no tab separator\n").unwrap();
    assert_eq!(
        exit_code(&["index", "--corpus", "bad.tsv", "--index-dir", "idx2"], dir),
        3
    );
    assert_eq!(
        exit_code(&["evaluate", "--run", "missing.run", "--qrels", "data/qrels.txt"], dir),
        4
    );
    assert_eq!(
        exit_code(
            &[
                "retrieve",
                "--index-dir",
                "idx",
                "--topics",
                "data/topics.tsv",
                "--output",
                "x.run",
                "--top-k",
                "0",
            ],
            dir,
        ),
        2
    );
    std::fs::write(dir.join("typo.conf"), "topix = data/topics.tsv\n").unwrap();
    assert_eq!(exit_code(&["experiment", "--config", "typo.conf"], dir), 2);
}
