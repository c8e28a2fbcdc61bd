//! Matching histograms: fixed-length, strength-binned representations of a
//! variable-length interaction row, plus the k-max pooling input used by
//! the ablation variant.
//!
//! A scheme with B bins covers [-1, 1) with B-1 equal-width bins and
//! reserves the last bin for exact matches (interaction value exactly 1.0).

use serde::{Deserialize, Serialize};

use crate::embed::InteractionRow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinScheme {
    bins: usize,
}

impl BinScheme {
    /// `bins` counts the exact-match bin, so it must be at least 2.
    pub fn new(bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::InvalidConfig(format!(
                "bin count must be at least 2, got {bins}"
            )));
        }
        Ok(BinScheme { bins })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Width of each similarity bin over [-1, 1).
    pub fn width(&self) -> f64 {
        2.0 / (self.bins - 1) as f64
    }

    /// Bin index for a value in [-1, 1]. Exactly 1.0 maps to the
    /// exact-match bin B-1; everything else to the left-closed
    /// right-open bin floor((value+1)/width), clamped to B-2.
    pub fn bin_index(&self, value: f64) -> Result<usize> {
        if !(-1.0..=1.0).contains(&value) {
            return Err(Error::ValueOutOfRange(value));
        }
        if value == 1.0 {
            return Ok(self.bins - 1);
        }
        let idx = ((value + 1.0) / self.width()).floor() as usize;
        Ok(idx.min(self.bins - 2))
    }
}

impl Default for BinScheme {
    fn default() -> Self {
        BinScheme { bins: 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistogramMode {
    /// Raw per-bin counts.
    Count,
    /// Counts divided by the total count (all-zero for an empty row).
    Normalized,
    /// ln(1 + count), keeping empty bins at 0.
    LogCount,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingHistogram {
    pub values: Vec<f64>,
    pub mode: HistogramMode,
}

/// Map an interaction row to its fixed-length matching histogram.
///
/// Row values must already be clipped into [-1, 1]; omitted (OOV) pairs
/// simply never reach this function, so they contribute to no bin.
pub fn histogram(
    row: &InteractionRow,
    scheme: BinScheme,
    mode: HistogramMode,
) -> Result<MatchingHistogram> {
    let mut counts = vec![0u64; scheme.bins()];
    for &v in &row.values {
        counts[scheme.bin_index(v)?] += 1;
    }
    let values = match mode {
        HistogramMode::Count => counts.iter().map(|&c| c as f64).collect(),
        HistogramMode::Normalized => {
            let total: u64 = counts.iter().sum();
            if total == 0 {
                vec![0.0; scheme.bins()]
            } else {
                counts.iter().map(|&c| c as f64 / total as f64).collect()
            }
        }
        HistogramMode::LogCount => counts.iter().map(|&c| (1.0 + c as f64).ln()).collect(),
    };
    Ok(MatchingHistogram { values, mode })
}

/// The k largest interaction values in descending order, zero-padded when
/// the row has fewer than k values.
pub fn kmax_input(row: &InteractionRow, k: usize) -> Vec<f64> {
    let mut sorted = row.values.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sorted.truncate(k);
    sorted.resize(k, 0.0);
    sorted
}

/// One-line debug dump of a histogram: `term \t v0 v1 ...`.
pub fn dump_line(query_term: &str, hist: &MatchingHistogram) -> String {
    let vals: Vec<String> = hist.values.iter().map(|v| format!("{v}")).collect();
    format!("{query_term}\t{}", vals.join(" "))
}
