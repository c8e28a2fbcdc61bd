//! Text normalization: whitespace tokenization, edge punctuation stripping,
//! lowercasing, stemming, and query-side stopword removal.
//!
//! Documents and queries go through the same `tokenize` path; stopwords are
//! removed from queries only, so document statistics keep function words.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rust_stemmers::{Algorithm, Stemmer as SnowballStemmer};
use serde::{Deserialize, Serialize};

use crate::error::{read_file, Error, Result};

/// Default query stoplist: common English function words, one per entry.
/// Override with a stoplist file (one term per line, `#` comments).
const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "cannot", "could", "did", "do", "does", "doing", "down", "during", "each",
    "few", "find", "for", "from", "further", "get", "give", "had", "has", "have", "having", "he",
    "her", "here", "hers", "herself", "him", "himself", "his", "how", "i", "identify", "if", "in",
    "including", "into", "is", "it", "its", "itself", "may", "me", "might", "more", "most", "must",
    "my", "myself", "no", "nor", "not", "of", "off", "on", "once", "only", "or", "other", "ought",
    "our", "ours", "ourselves", "out", "over", "own", "relevant", "same", "shall", "she", "should",
    "so", "some", "such", "than", "that", "the", "their", "theirs", "them", "themselves", "then",
    "there", "these", "they", "this", "those", "through", "to", "too", "under", "until", "up",
    "upon", "used", "very", "was", "we", "were", "what", "when", "where", "which", "while", "who",
    "whom", "why", "will", "with", "within", "without", "would", "you", "your", "yours",
    "yourself", "yourselves",
];

/// Stemming algorithm applied after lowercasing. Recorded in the index
/// metadata so queries are normalized the same way as the indexed corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StemmerKind {
    /// Snowball English (Porter2 family).
    English,
    /// No stemming; lowercasing and punctuation stripping only.
    None,
}

impl fmt::Display for StemmerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StemmerKind::English => write!(f, "english"),
            StemmerKind::None => write!(f, "none"),
        }
    }
}

impl FromStr for StemmerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "english" => Ok(StemmerKind::English),
            "none" => Ok(StemmerKind::None),
            other => Err(Error::InvalidConfig(format!("unknown stemmer: {other}"))),
        }
    }
}

/// A single token: the surface form as it appeared (punctuation-stripped)
/// and its normalized form (lowercased, stemmed).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub normalized: String,
}

/// Deterministic text normalizer. Pure after construction; safe to share
/// across threads.
pub struct Normalizer {
    kind: StemmerKind,
    stemmer: Option<SnowballStemmer>,
}

impl Normalizer {
    pub fn new(kind: StemmerKind) -> Self {
        let stemmer = match kind {
            StemmerKind::English => Some(SnowballStemmer::create(Algorithm::English)),
            StemmerKind::None => None,
        };
        Normalizer { kind, stemmer }
    }

    pub fn kind(&self) -> StemmerKind {
        self.kind
    }

    /// Stem an already-lowercased token. Deterministic and idempotent for
    /// the shipped stemmers.
    pub fn stem(&self, token: &str) -> String {
        match &self.stemmer {
            Some(s) => s.stem(token).into_owned(),
            None => token.to_string(),
        }
    }

    /// Split on whitespace, strip leading/trailing non-alphanumeric
    /// characters, lowercase, stem. Empty results are dropped.
    pub fn tokenize(&self, text: &str) -> Vec<Token> {
        text.split_whitespace()
            .filter_map(|raw| {
                let stripped = raw
                    .trim_matches(|c: char| !c.is_alphanumeric())
                    .to_string();
                if stripped.is_empty() {
                    return None;
                }
                let normalized = self.stem(&stripped.to_lowercase());
                if normalized.is_empty() {
                    return None;
                }
                Some(Token {
                    surface: stripped,
                    normalized,
                })
            })
            .collect()
    }

    /// Normalized term sequence for a document or query.
    pub fn terms(&self, text: &str) -> Vec<String> {
        self.tokenize(text).into_iter().map(|t| t.normalized).collect()
    }
}

/// Set of normalized stop terms. Membership is exact string equality
/// post-normalization, so the list must be built with the same normalizer
/// used for queries.
#[derive(Debug, Clone)]
pub struct StopList {
    terms: HashSet<String>,
}

impl StopList {
    pub fn empty() -> Self {
        StopList {
            terms: HashSet::new(),
        }
    }

    /// Built-in English list, normalized through `normalizer`.
    pub fn default_list(normalizer: &Normalizer) -> Self {
        let terms = DEFAULT_STOPWORDS
            .iter()
            .map(|w| normalizer.stem(w))
            .collect();
        StopList { terms }
    }

    /// Load from a UTF-8 file, one term per line; `#`-prefixed lines and
    /// blank lines are ignored. Terms are normalized on load.
    pub fn load(path: &Path, normalizer: &Normalizer) -> Result<Self> {
        let content = read_file(path)?;
        let mut terms = HashSet::new();
        for line in content.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            for tok in normalizer.tokenize(line) {
                terms.insert(tok.normalized);
            }
        }
        Ok(StopList { terms })
    }

    pub fn contains(&self, normalized: &str) -> bool {
        self.terms.contains(normalized)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Order-preserving stopword filter. Applied to queries only.
pub fn remove_stopwords(tokens: Vec<Token>, stoplist: &StopList) -> Vec<Token> {
    tokens
        .into_iter()
        .filter(|t| !stoplist.contains(&t.normalized))
        .collect()
}
