//! Inverted index with the collection statistics needed by QL, BM25 and
//! IDF-based term gating.
//!
//! Build is single-writer; a built or loaded index is immutable and safe
//! for concurrent readers. Persistence round-trips bit-identically: the
//! on-disk format stores term strings and per-document term-id sequences,
//! and postings plus df/cf are rebuilt deterministically on load.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{read_file, Error, Result};
use crate::textpipe::{Normalizer, StemmerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermEntry {
    pub term_id: u32,
    /// Number of documents containing the term.
    pub df: u32,
    /// Total occurrences across the collection.
    pub cf: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc_id: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentRecord {
    pub doc_id: u32,
    pub external_id: String,
    /// Term occurrences post-tokenization; equals `term_ids.len()`.
    pub length: u32,
    /// Lexicon ids in document order.
    pub term_ids: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CollectionStats {
    pub doc_count: u64,
    pub total_term_count: u64,
}

impl CollectionStats {
    pub fn avg_doc_length(&self) -> f64 {
        if self.doc_count == 0 {
            0.0
        } else {
            self.total_term_count as f64 / self.doc_count as f64
        }
    }
}

pub struct Index {
    lexicon: HashMap<String, TermEntry>,
    /// term_id -> term string.
    terms: Vec<String>,
    /// term_id -> postings sorted by strictly increasing doc_id.
    postings: Vec<Vec<Posting>>,
    docs: Vec<DocumentRecord>,
    by_external: HashMap<String, u32>,
    stats: CollectionStats,
    stemmer: StemmerKind,
}

impl Index {
    pub fn stats(&self) -> CollectionStats {
        self.stats
    }

    pub fn stemmer(&self) -> StemmerKind {
        self.stemmer
    }

    pub fn vocab_size(&self) -> usize {
        self.terms.len()
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn term_entry(&self, term: &str) -> Option<&TermEntry> {
        self.lexicon.get(term)
    }

    pub fn term_string(&self, term_id: u32) -> &str {
        &self.terms[term_id as usize]
    }

    pub fn postings(&self, term: &str) -> Option<&[Posting]> {
        self.lexicon
            .get(term)
            .map(|e| self.postings[e.term_id as usize].as_slice())
    }

    pub fn doc(&self, doc_id: u32) -> &DocumentRecord {
        &self.docs[doc_id as usize]
    }

    pub fn docs(&self) -> &[DocumentRecord] {
        &self.docs
    }

    pub fn doc_by_external(&self, external_id: &str) -> Option<&DocumentRecord> {
        self.by_external.get(external_id).map(|&id| self.doc(id))
    }

    /// Term strings of a document in document order.
    pub fn doc_terms(&self, doc_id: u32) -> Vec<&str> {
        self.doc(doc_id)
            .term_ids
            .iter()
            .map(|&t| self.terms[t as usize].as_str())
            .collect()
    }

    /// Smoothed BM25-style inverse document frequency:
    /// `ln((N - df + 0.5) / (df + 0.5) + 1)`.
    ///
    /// Strictly decreasing in df and positive for any df in [0, N];
    /// absent terms get df = 0, the maximum.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.lexicon.get(term).map_or(0, |e| e.df);
        idf_from_counts(self.stats.doc_count, df)
    }

    /// Persist under `dir` (created if absent). Layout:
    /// `meta.txt` key\tvalue lines, `terms.txt` one term per line in
    /// term-id order, `docs.tsv` one `external_id \t id id ...` per line
    /// in doc-id order.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut meta = String::new();
        meta.push_str("version\t1\n");
        meta.push_str(&format!("stemmer\t{}\n", self.stemmer));
        meta.push_str(&format!("doc_count\t{}\n", self.stats.doc_count));
        meta.push_str(&format!(
            "total_term_count\t{}\n",
            self.stats.total_term_count
        ));
        fs::write(dir.join("meta.txt"), meta)?;

        let mut terms = String::new();
        for t in &self.terms {
            terms.push_str(t);
            terms.push('\n');
        }
        fs::write(dir.join("terms.txt"), terms)?;

        let mut f = std::io::BufWriter::new(fs::File::create(dir.join("docs.tsv"))?);
        for d in &self.docs {
            write!(f, "{}\t", d.external_id)?;
            for (i, t) in d.term_ids.iter().enumerate() {
                if i > 0 {
                    f.write_all(b" ")?;
                }
                write!(f, "{t}")?;
            }
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.txt");
        let meta = read_file(&meta_path)?;
        let mut stemmer = StemmerKind::English;
        let mut doc_count: u64 = 0;
        let mut total: u64 = 0;
        for (lineno, line) in meta.lines().enumerate() {
            let mut it = line.splitn(2, '\t');
            let key = it.next().unwrap_or("");
            let val = it.next().ok_or_else(|| Error::InvalidFormat {
                path: meta_path.display().to_string(),
                line: lineno + 1,
                msg: "expected key\\tvalue".into(),
            })?;
            match key {
                "version" => {}
                "stemmer" => stemmer = val.parse()?,
                "doc_count" => {
                    doc_count = val.parse().map_err(|_| Error::InvalidFormat {
                        path: meta_path.display().to_string(),
                        line: lineno + 1,
                        msg: format!("bad doc_count {val}"),
                    })?
                }
                "total_term_count" => {
                    total = val.parse().map_err(|_| Error::InvalidFormat {
                        path: meta_path.display().to_string(),
                        line: lineno + 1,
                        msg: format!("bad total_term_count {val}"),
                    })?
                }
                _ => {}
            }
        }

        let terms_path = dir.join("terms.txt");
        let terms: Vec<String> = read_file(&terms_path)?
            .lines()
            .map(|s| s.to_string())
            .collect();

        let docs_path = dir.join("docs.tsv");
        let mut builder = RawIndexBuilder::new(stemmer, terms.len());
        for (lineno, line) in read_file(&docs_path)?.lines().enumerate() {
            let mut it = line.splitn(2, '\t');
            let external_id = it.next().unwrap_or("").to_string();
            let ids_part = it.next().ok_or_else(|| Error::InvalidFormat {
                path: docs_path.display().to_string(),
                line: lineno + 1,
                msg: "expected external_id\\tterm ids".into(),
            })?;
            let mut term_ids = Vec::new();
            for tok in ids_part.split(' ').filter(|s| !s.is_empty()) {
                let id: u32 = tok.parse().map_err(|_| Error::InvalidFormat {
                    path: docs_path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("bad term id {tok}"),
                })?;
                if id as usize >= terms.len() {
                    return Err(Error::InvalidFormat {
                        path: docs_path.display().to_string(),
                        line: lineno + 1,
                        msg: format!("term id {id} out of range"),
                    });
                }
                term_ids.push(id);
            }
            builder.push_doc(external_id, term_ids)?;
        }
        let index = builder.finish(terms);
        if index.stats.doc_count != doc_count || index.stats.total_term_count != total {
            return Err(Error::InvalidFormat {
                path: meta_path.display().to_string(),
                line: 0,
                msg: format!(
                    "meta counts ({doc_count}, {total}) disagree with docs.tsv ({}, {})",
                    index.stats.doc_count, index.stats.total_term_count
                ),
            });
        }
        Ok(index)
    }
}

pub fn idf_from_counts(doc_count: u64, df: u32) -> f64 {
    let n = doc_count as f64;
    let df = df as f64;
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

/// Builds an index from raw text documents, tokenizing with the given
/// normalizer. Documents keep stopwords; term ids are assigned in first
/// occurrence order and doc ids in ingestion order starting at 0.
pub struct IndexBuilder {
    normalizer: Normalizer,
    raw: RawIndexBuilder,
    term_ids: HashMap<String, u32>,
    terms: Vec<String>,
}

impl IndexBuilder {
    pub fn new(stemmer: StemmerKind) -> Self {
        IndexBuilder {
            normalizer: Normalizer::new(stemmer),
            raw: RawIndexBuilder::new(stemmer, 0),
            term_ids: HashMap::new(),
            terms: Vec::new(),
        }
    }

    pub fn add_document(&mut self, external_id: &str, text: &str) -> Result<()> {
        let term_ids = self
            .normalizer
            .terms(text)
            .into_iter()
            .map(|t| {
                *self.term_ids.entry(t.clone()).or_insert_with(|| {
                    self.terms.push(t);
                    (self.terms.len() - 1) as u32
                })
            })
            .collect();
        self.raw.push_doc(external_id.to_string(), term_ids)
    }

    pub fn build(self) -> Index {
        self.raw.finish(self.terms)
    }
}

/// Shared assembly for build and load paths: computes postings, df/cf and
/// collection stats from per-document term-id sequences.
struct RawIndexBuilder {
    stemmer: StemmerKind,
    docs: Vec<DocumentRecord>,
    by_external: HashMap<String, u32>,
    postings: Vec<Vec<Posting>>,
    total_terms: u64,
}

impl RawIndexBuilder {
    fn new(stemmer: StemmerKind, vocab_hint: usize) -> Self {
        RawIndexBuilder {
            stemmer,
            docs: Vec::new(),
            by_external: HashMap::new(),
            postings: vec![Vec::new(); vocab_hint],
            total_terms: 0,
        }
    }

    fn push_doc(&mut self, external_id: String, term_ids: Vec<u32>) -> Result<()> {
        if self.by_external.contains_key(&external_id) {
            return Err(Error::DuplicateDocId(external_id));
        }
        let doc_id = self.docs.len() as u32;
        self.by_external.insert(external_id.clone(), doc_id);
        self.total_terms += term_ids.len() as u64;

        // Per-doc tf counts in first-occurrence order keeps postings
        // deterministic; doc ids are appended in increasing order so each
        // postings list stays sorted.
        let mut tf: HashMap<u32, u32> = HashMap::new();
        let mut order: Vec<u32> = Vec::new();
        for &t in &term_ids {
            let e = tf.entry(t).or_insert(0);
            if *e == 0 {
                order.push(t);
            }
            *e += 1;
        }
        for t in order {
            if t as usize >= self.postings.len() {
                self.postings.resize(t as usize + 1, Vec::new());
            }
            self.postings[t as usize].push(Posting {
                doc_id,
                tf: tf[&t],
            });
        }

        self.docs.push(DocumentRecord {
            doc_id,
            external_id,
            length: term_ids.len() as u32,
            term_ids,
        });
        Ok(())
    }

    fn finish(mut self, terms: Vec<String>) -> Index {
        if self.postings.len() < terms.len() {
            self.postings.resize(terms.len(), Vec::new());
        }
        let mut lexicon = HashMap::with_capacity(terms.len());
        for (id, term) in terms.iter().enumerate() {
            let plist = &self.postings[id];
            lexicon.insert(
                term.clone(),
                TermEntry {
                    term_id: id as u32,
                    df: plist.len() as u32,
                    cf: plist.iter().map(|p| p.tf as u64).sum(),
                },
            );
        }
        let stats = CollectionStats {
            doc_count: self.docs.len() as u64,
            total_term_count: self.total_terms,
        };
        Index {
            lexicon,
            terms,
            postings: self.postings,
            docs: self.docs,
            by_external: self.by_external,
            stats,
            stemmer: self.stemmer,
        }
    }
}

/// Convenience: build an index over an in-memory document stream.
pub fn build_index<I, S, T>(documents: I, stemmer: StemmerKind) -> Result<Index>
where
    I: IntoIterator<Item = (S, T)>,
    S: AsRef<str>,
    T: AsRef<str>,
{
    let mut b = IndexBuilder::new(stemmer);
    for (id, text) in documents {
        b.add_document(id.as_ref(), text.as_ref())?;
    }
    Ok(b.build())
}
