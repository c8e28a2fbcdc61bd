//! Pretrained term embeddings and local interaction signals.
//!
//! Vectors are L2-normalized at load so cosine similarity reduces to a dot
//! product. Exact string matches always interact with the sentinel value
//! 1.0; cosines between distinct terms that would round to 1.0 are nudged
//! just below so the exact-match histogram bin counts string identity only.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::textpipe::Normalizer;

/// Largest f64 strictly below 1.0, used to keep similarity-only matches out
/// of the exact-match bin.
pub const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    /// First line `vocab_size dim`, then `term v1 ... vd` per line.
    Text,
    /// word2vec-style: header line `vocab_size dim`, then per entry the
    /// term, a space, `dim` little-endian f32 values, and a newline.
    Binary,
}

/// Immutable store of unit-normalized term vectors, keyed by normalized
/// term string.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    duplicates_dropped: usize,
}

impl EmbeddingStore {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Duplicate keys dropped at load (first occurrence kept).
    pub fn duplicates_dropped(&self) -> usize {
        self.duplicates_dropped
    }

    pub fn get(&self, term: &str) -> Option<&[f64]> {
        self.vectors.get(term).map(|v| v.as_slice())
    }

    pub fn contains(&self, term: &str) -> bool {
        self.vectors.contains_key(term)
    }

    /// In-vocabulary vs out-of-vocabulary split of a term list.
    pub fn coverage<'a, I>(&self, terms: I) -> (usize, Vec<String>)
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut in_vocab = 0;
        let mut oov = Vec::new();
        for t in terms {
            if self.contains(t) {
                in_vocab += 1;
            } else {
                oov.push(t.to_string());
            }
        }
        (in_vocab, oov)
    }

    /// Build from in-memory `(term, vector)` pairs. Keys are normalized
    /// with `normalizer`, vectors L2-normalized; duplicates keep the first
    /// occurrence.
    pub fn from_vectors<I, S>(pairs: I, normalizer: &Normalizer) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut dim = None;
        let mut vectors = HashMap::new();
        let mut duplicates = 0;
        for (term, mut v) in pairs {
            let d = *dim.get_or_insert(v.len());
            if v.len() != d {
                return Err(Error::InvalidConfig(format!(
                    "embedding dimension mismatch: expected {d}, got {} for {:?}",
                    v.len(),
                    term.as_ref()
                )));
            }
            normalize_in_place(&mut v).map_err(|msg| Error::InvalidConfig(msg.to_string()))?;
            let key = normalizer.stem(&term.as_ref().to_lowercase());
            if vectors.contains_key(&key) {
                duplicates += 1;
            } else {
                vectors.insert(key, v);
            }
        }
        Ok(EmbeddingStore {
            dim: dim.unwrap_or(0),
            vectors,
            duplicates_dropped: duplicates,
        })
    }

    pub fn load(path: &Path, format: EmbeddingFormat, normalizer: &Normalizer) -> Result<Self> {
        match format {
            EmbeddingFormat::Text => load_text(path, normalizer),
            EmbeddingFormat::Binary => load_binary(path, normalizer),
        }
    }
}

fn normalize_in_place(v: &mut [f64]) -> std::result::Result<(), &'static str> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err("non-finite component");
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 0.0 || !norm.is_finite() {
        return Err("zero or non-finite vector norm");
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    Ok(())
}

fn load_text(path: &Path, normalizer: &Normalizer) -> Result<EmbeddingStore> {
    let pd = path.display().to_string();
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();

    let header = lines.next().transpose()?.ok_or_else(|| Error::InvalidFormat {
        path: pd.clone(),
        line: 1,
        msg: "missing header".into(),
    })?;
    let mut hp = header.split_whitespace();
    let _vocab: usize = parse_field(hp.next(), &pd, 1, "vocab size")?;
    let dim: usize = parse_field(hp.next(), &pd, 1, "dimension")?;
    if dim == 0 {
        return Err(Error::InvalidFormat {
            path: pd,
            line: 1,
            msg: "dimension must be positive".into(),
        });
    }

    let mut vectors = HashMap::new();
    let mut duplicates = 0;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let term = parts.next().unwrap();
        let mut v = Vec::with_capacity(dim);
        for p in parts {
            let x: f64 = p.parse().map_err(|_| Error::InvalidFormat {
                path: pd.clone(),
                line: lineno,
                msg: format!("bad component {p:?}"),
            })?;
            v.push(x);
        }
        if v.len() != dim {
            return Err(Error::InvalidFormat {
                path: pd,
                line: lineno,
                msg: format!("expected {dim} components, got {}", v.len()),
            });
        }
        normalize_in_place(&mut v).map_err(|msg| Error::InvalidFormat {
            path: pd.clone(),
            line: lineno,
            msg: msg.to_string(),
        })?;
        let key = normalizer.stem(&term.to_lowercase());
        if vectors.contains_key(&key) {
            duplicates += 1;
        } else {
            vectors.insert(key, v);
        }
    }
    Ok(EmbeddingStore {
        dim,
        vectors,
        duplicates_dropped: duplicates,
    })
}

fn load_binary(path: &Path, normalizer: &Normalizer) -> Result<EmbeddingStore> {
    let pd = path.display().to_string();
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut header = Vec::new();
    reader.read_until(b'\n', &mut header)?;
    let header = String::from_utf8_lossy(&header);
    let mut hp = header.split_whitespace();
    let vocab: usize = parse_field(hp.next(), &pd, 1, "vocab size")?;
    let dim: usize = parse_field(hp.next(), &pd, 1, "dimension")?;

    let mut vectors = HashMap::new();
    let mut duplicates = 0;
    for entry in 0..vocab {
        let mut term_bytes = Vec::new();
        reader.read_until(b' ', &mut term_bytes)?;
        if term_bytes.last() == Some(&b' ') {
            term_bytes.pop();
        }
        // Skip a leading newline left over from the previous entry.
        while term_bytes.first() == Some(&b'\n') {
            term_bytes.remove(0);
        }
        let term = String::from_utf8_lossy(&term_bytes).into_owned();
        let mut buf = vec![0u8; dim * 4];
        reader.read_exact(&mut buf).map_err(|_| Error::InvalidFormat {
            path: pd.clone(),
            line: entry + 2,
            msg: format!("truncated vector for {term:?}"),
        })?;
        let mut v = Vec::with_capacity(dim);
        for c in buf.chunks_exact(4) {
            v.push(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        }
        normalize_in_place(&mut v).map_err(|msg| Error::InvalidFormat {
            path: pd.clone(),
            line: entry + 2,
            msg: format!("{msg} for {term:?}"),
        })?;
        let key = normalizer.stem(&term.to_lowercase());
        if vectors.contains_key(&key) {
            duplicates += 1;
        } else {
            vectors.insert(key, v);
        }
    }
    Ok(EmbeddingStore {
        dim,
        vectors,
        duplicates_dropped: duplicates,
    })
}

fn parse_field<T: std::str::FromStr>(
    field: Option<&str>,
    path: &str,
    line: usize,
    what: &str,
) -> Result<T> {
    field
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::InvalidFormat {
            path: path.to_string(),
            line,
            msg: format!("bad or missing {what}"),
        })
}

/// Cosine similarity clipped into [-1, 1]. For unit vectors this is the
/// dot product.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch(format!(
            "cosine of {}-dim and {}-dim vectors",
            u.len(),
            v.len()
        )));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::InvalidConfig("cosine of zero vector".into()));
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Local interactions between one query term and a document's terms.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRow {
    pub query_term: String,
    /// One value per retained document term position, in document order.
    /// Exact string matches contribute exactly 1.0; in-vocabulary pairs
    /// contribute the clipped cosine, nudged below 1.0 for distinct terms;
    /// pairs where either side is OOV and the strings differ are omitted.
    pub values: Vec<f64>,
    /// Document terms string-identical to the query term.
    pub exact_matches: usize,
}

/// Compute the interaction row for `query_term` against `doc_terms`.
pub fn interactions<'a, I>(query_term: &str, doc_terms: I, store: &EmbeddingStore) -> InteractionRow
where
    I: IntoIterator<Item = &'a str>,
{
    let q_vec = store.get(query_term);
    let mut values = Vec::new();
    let mut exact = 0;
    for dt in doc_terms {
        if dt == query_term {
            values.push(1.0);
            exact += 1;
            continue;
        }
        let (Some(qv), Some(dv)) = (q_vec, store.get(dt)) else {
            continue;
        };
        let mut sim: f64 = qv.iter().zip(dv).map(|(a, b)| a * b).sum();
        sim = sim.clamp(-1.0, 1.0);
        if sim >= 1.0 {
            sim = BELOW_ONE;
        }
        values.push(sim);
    }
    InteractionRow {
        query_term: query_term.to_string(),
        values,
        exact_matches: exact,
    }
}
