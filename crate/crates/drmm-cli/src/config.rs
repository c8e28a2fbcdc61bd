//! Line-oriented `key = value` configuration for the experiment driver.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are
//! case-insensitive and use underscores. Command-line flags override
//! file entries; every key has a documented default where one exists.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use drmm::experiment::ExperimentConfig;
use drmm::textpipe::StemmerKind;
use drmm::{Error, Result};

/// Where the experiment reads its inputs and writes its artifacts.
#[derive(Debug, Clone)]
pub struct ExperimentPaths {
    /// Needed only when the index directory holds no index yet.
    pub corpus: Option<PathBuf>,
    pub topics: PathBuf,
    pub qrels: PathBuf,
    pub embeddings: PathBuf,
    pub index_dir: PathBuf,
    /// Fold checkpoints and training logs; defaults to `output_dir`.
    pub model_dir: PathBuf,
    pub output_dir: PathBuf,
}

/// A fully resolved experiment invocation.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub paths: ExperimentPaths,
    /// Stemmer used when the index has to be built.
    pub stemmer: StemmerKind,
    pub config: ExperimentConfig,
}

fn parse_value<T>(key: &str, value: &str) -> Result<T>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    value.trim().parse().map_err(|e| {
        Error::InvalidConfig(format!("bad value {value:?} for `{key}`: {e}"))
    })
}

fn parse_list<T>(key: &str, value: &str) -> Result<Vec<T>>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    let mut out = Vec::new();
    for item in value.split(',') {
        let item = item.trim();
        if item.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "empty item in comma-separated list for `{key}`: {value:?}"
            )));
        }
        out.push(parse_value(key, item)?);
    }
    Ok(out)
}

/// Merged key/value settings from a config file and flag overrides.
#[derive(Debug, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn new() -> Self {
        ConfigMap::default()
    }

    /// Parse a config file. Later `set` calls override file entries.
    pub fn load(path: &Path) -> Result<Self> {
        let content = drmm::error::read_file(path)?;
        let mut entries = BTreeMap::new();
        for (lineno, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidFormat {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("expected `key = value`, got {line:?}"),
                });
            };
            let key = key.trim().to_ascii_lowercase();
            if key.is_empty() {
                return Err(Error::InvalidFormat {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: "missing key before `=`".into(),
                });
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::InvalidFormat {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(ConfigMap { entries })
    }

    /// Set or override one entry.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_ascii_lowercase(), value.into());
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn take_path(&mut self, key: &str) -> Option<PathBuf> {
        self.take(key).map(PathBuf::from)
    }

    fn require_path(&mut self, key: &str) -> Result<PathBuf> {
        self.take_path(key)
            .ok_or_else(|| Error::InvalidConfig(format!("missing required setting `{key}`")))
    }

    /// Resolve every setting into a validated experiment setup.
    /// Unknown keys are rejected so typos cannot silently fall back to
    /// defaults.
    pub fn into_setup(mut self) -> Result<ExperimentSetup> {
        let mut config = ExperimentConfig::default();
        if let Some(v) = self.take("variant") {
            config.variant = parse_value("variant", &v)?;
        }
        if let Some(v) = self.take("bins") {
            config.bins = parse_value("bins", &v)?;
        }
        if let Some(v) = self.take("hidden") {
            config.hidden = parse_list("hidden", &v)?;
        }
        if let Some(v) = self.take("field") {
            config.query_field = parse_value("field", &v)?;
        }
        if let Some(v) = self.take("first_stage") {
            config.first_stage.model = parse_value("first_stage", &v)?;
        }
        if let Some(v) = self.take("mu") {
            config.first_stage.mu = parse_value("mu", &v)?;
        }
        if let Some(v) = self.take("k1") {
            config.first_stage.k1 = parse_value("k1", &v)?;
        }
        if let Some(v) = self.take("b") {
            config.first_stage.b = parse_value("b", &v)?;
        }
        if let Some(v) = self.take("rerank_depth") {
            config.first_stage.top_k = parse_value("rerank_depth", &v)?;
        }
        if let Some(v) = self.take("output_depth") {
            config.output_depth = parse_value("output_depth", &v)?;
        }
        if let Some(v) = self.take("ap_cutoff") {
            config.ap_cutoff = parse_value("ap_cutoff", &v)?;
        }
        if let Some(v) = self.take("folds") {
            config.folds = parse_value("folds", &v)?;
        }
        if let Some(v) = self.take("fold_seed") {
            config.fold_seed = parse_value("fold_seed", &v)?;
        }
        if let Some(v) = self.take("batch_size") {
            config.train.batch_size = parse_value("batch_size", &v)?;
        }
        if let Some(v) = self.take("learning_rate") {
            let lr: f64 = parse_value("learning_rate", &v)?;
            config.train.learning_rate = lr;
            config.learning_rates = vec![lr];
        }
        if let Some(v) = self.take("learning_rates") {
            config.learning_rates = parse_list("learning_rates", &v)?;
        }
        if let Some(v) = self.take("adagrad_epsilon") {
            config.train.adagrad_epsilon = parse_value("adagrad_epsilon", &v)?;
        }
        if let Some(v) = self.take("max_epochs") {
            config.train.max_epochs = parse_value("max_epochs", &v)?;
        }
        if let Some(v) = self.take("patience") {
            config.train.patience = parse_value("patience", &v)?;
        }
        if let Some(v) = self.take("negatives_per_positive") {
            config.train.negatives_per_positive = parse_value("negatives_per_positive", &v)?;
        }
        if let Some(v) = self.take("train_seed") {
            config.train.seed = parse_value("train_seed", &v)?;
        }
        if let Some(v) = self.take("validation_fraction") {
            config.validation_fraction = parse_value("validation_fraction", &v)?;
        }
        if let Some(v) = self.take("significance_iterations") {
            config.significance_iterations = parse_value("significance_iterations", &v)?;
        }
        let stemmer = match self.take("stemmer") {
            Some(v) => parse_value("stemmer", &v)?,
            None => StemmerKind::English,
        };
        let corpus = self.take_path("corpus");
        let topics = self.require_path("topics")?;
        let qrels = self.require_path("qrels")?;
        let embeddings = self.require_path("embeddings")?;
        let index_dir = self.require_path("index_dir")?;
        let output_dir = self.require_path("output_dir")?;
        let model_dir = self.take_path("model_dir").unwrap_or_else(|| output_dir.clone());

        if !self.entries.is_empty() {
            let unknown: Vec<&str> = self.entries.keys().map(String::as_str).collect();
            return Err(Error::InvalidConfig(format!(
                "unknown configuration key(s): {}",
                unknown.join(", ")
            )));
        }
        config.validate()?;
        Ok(ExperimentSetup {
            paths: ExperimentPaths {
                corpus,
                topics,
                qrels,
                embeddings,
                index_dir,
                model_dir,
                output_dir,
            },
            stemmer,
            config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn base_map() -> ConfigMap {
        let mut map = ConfigMap::new();
        map.set("topics", "t.tsv");
        map.set("qrels", "q.txt");
        map.set("embeddings", "e.txt");
        map.set("index_dir", "idx");
        map.set("output_dir", "out");
        map
    }

    #[test]
    fn file_round_trip_with_comments_and_overrides() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            "# experiment\n\ntopics = t.tsv\nQRELS = q.txt\nembeddings= e.txt\nindex_dir =idx\noutput_dir = out\nbins = 11\nlearning_rates = 0.05, 0.1"
        )
        .unwrap();
        let mut map = ConfigMap::load(f.path()).unwrap();
        map.set("bins", "7");
        let setup = map.into_setup().unwrap();
        assert_eq!(setup.config.bins, 7);
        assert_eq!(setup.config.learning_rates, vec![0.05, 0.1]);
        assert_eq!(setup.paths.qrels, PathBuf::from("q.txt"));
        assert_eq!(setup.paths.model_dir, setup.paths.output_dir);
        assert_eq!(setup.stemmer, StemmerKind::English);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut map = base_map();
        map.set("hiden", "3");
        let err = map.into_setup().unwrap_err().to_string();
        assert!(err.contains("hiden"), "{err}");
    }

    #[test]
    fn missing_required_key_is_rejected() {
        let mut map = base_map();
        map.entries.remove("qrels");
        let err = map.into_setup().unwrap_err().to_string();
        assert!(err.contains("qrels"), "{err}");
    }

    #[test]
    fn bad_value_names_the_key() {
        let mut map = base_map();
        map.set("folds", "three");
        let err = map.into_setup().unwrap_err().to_string();
        assert!(err.contains("folds"), "{err}");
    }

    #[test]
    fn duplicate_and_malformed_lines_are_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "bins = 5\nbins = 6").unwrap();
        assert!(ConfigMap::load(f.path()).is_err());

        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "no equals sign here").unwrap();
        let err = ConfigMap::load(f.path()).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn learning_rate_scalar_sets_sweep_of_one() {
        let mut map = base_map();
        map.set("learning_rate", "0.02");
        let setup = map.into_setup().unwrap();
        assert_eq!(setup.config.learning_rates, vec![0.02]);
        assert_eq!(setup.config.train.learning_rate, 0.02);
    }
}
