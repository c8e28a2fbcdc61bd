//! Ad-hoc retrieval with a deep relevance matching reranker.
//!
//! The pipeline: tokenize and index a corpus ([`index`], [`textpipe`]),
//! retrieve candidates with QL or BM25 ([`firststage`]), turn
//! query-document pairs into matching histograms over embedding
//! interactions ([`embed`], [`histogram`]), score them with a small
//! gated feed-forward network ([`model`], [`rerank`]), train it
//! pairwise ([`train`]) and evaluate with TREC metrics and
//! cross-validation ([`eval`]). [`experiment`] wires the stages into a
//! cross-validated end-to-end run over TREC-format files ([`trec`]),
//! and [`synth`] generates a small self-judged corpus for exercising
//! the whole pipeline without licensed collections.

pub mod embed;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod firststage;
pub mod histogram;
pub mod index;
pub mod model;
pub mod rerank;
pub mod synth;
pub mod textpipe;
pub mod train;
pub mod trec;

pub use error::{Error, Result};
