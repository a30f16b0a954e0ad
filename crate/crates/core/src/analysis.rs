//! Length and lexical statistics for a corpus or a selected subset.
//!
//! Lengths are whitespace-token counts. Word frequencies always come from the
//! full corpus, even when describing a subset, so a report says which words a
//! selector preferred rather than how often they recur inside the subset.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Side};
use crate::error::{Error, Result};
use crate::scoring::{render_f64, ScoreMatrix};

pub const DEFAULT_RARE_THRESHOLD: u64 = 2;
pub const DEFAULT_BIN_WIDTH: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub stddev: f64,
    pub min: usize,
    pub max: usize,
    pub bin_width: usize,
    /// `histogram[b]` counts lengths in `[b·w, (b+1)·w)`.
    pub histogram: Vec<usize>,
}

pub fn length_stats(lengths: &[usize], bin_width: usize) -> Result<LengthStats> {
    if lengths.is_empty() {
        return Err(Error::EmptySelection);
    }
    if bin_width == 0 {
        return Err(Error::invalid("histogram bin width must be >= 1"));
    }
    let n = lengths.len() as f64;
    let total: u64 = lengths.iter().map(|&l| l as u64).sum();
    let mean = total as f64 / n;
    let var = lengths.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid] as f64
    } else {
        (sorted[mid - 1] + sorted[mid]) as f64 / 2.0
    };
    let max = *sorted.last().unwrap();
    let mut histogram = vec![0usize; max / bin_width + 1];
    for &l in lengths {
        histogram[l / bin_width] += 1;
    }
    Ok(LengthStats {
        mean,
        median,
        stddev: var.sqrt(),
        min: sorted[0],
        max,
        bin_width,
        histogram,
    })
}

/// Token frequencies of one side of the full corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: HashMap<String, u64>,
}

impl FrequencyTable {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> FrequencyTable {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for t in texts {
            for tok in t.split_whitespace() {
                *counts.entry(tok.to_string()).or_default() += 1;
            }
        }
        FrequencyTable { counts }
    }

    pub fn from_corpus(corpus: &Corpus, side: Side) -> FrequencyTable {
        Self::from_texts(corpus.pairs.iter().map(|p| p.side(side)))
    }

    pub fn get(&self, token: &str) -> Option<u64> {
        self.counts.get(token).copied()
    }

    pub fn type_count(&self) -> usize {
        self.counts.len()
    }

    pub fn total_tokens(&self) -> u64 {
        self.counts.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalStats {
    pub total_tokens: u64,
    /// Distinct tokens in the subset.
    pub type_count: usize,
    /// Distinct subset tokens whose full-corpus frequency is ≤ the threshold.
    pub rare_word_count: usize,
    pub rare_threshold: u64,
    /// Mean, over token occurrences in the subset, of full-corpus frequency.
    pub mean_word_frequency: f64,
}

pub fn lexical_stats<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    table: &FrequencyTable,
    rare_threshold: u64,
) -> Result<LexicalStats> {
    let mut types: HashSet<&str> = HashSet::new();
    let mut rare: HashSet<&str> = HashSet::new();
    let mut total = 0u64;
    let mut freq_sum = 0u128;
    for text in texts {
        for tok in text.split_whitespace() {
            let f = table
                .get(tok)
                .ok_or_else(|| Error::invalid(format!("token {tok:?} missing from the frequency table")))?;
            total += 1;
            freq_sum += f as u128;
            types.insert(tok);
            if f <= rare_threshold {
                rare.insert(tok);
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptySelection);
    }
    Ok(LexicalStats {
        total_tokens: total,
        type_count: types.len(),
        rare_word_count: rare.len(),
        rare_threshold,
        mean_word_frequency: freq_sum as f64 / total as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideReport {
    pub length: LengthStats,
    pub lexical: LexicalStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub n_pairs: usize,
    pub source: SideReport,
    pub target: SideReport,
    pub tokenization: String,
    pub frequency_basis: String,
    /// Per-pair language labels, when supplied by the user.
    pub lid: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalysisConfig {
    pub rare_threshold: u64,
    pub bin_width: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            rare_threshold: DEFAULT_RARE_THRESHOLD,
            bin_width: DEFAULT_BIN_WIDTH,
        }
    }
}

pub fn token_len(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Report over the pairs at `subset` (ascending ids) or the whole corpus.
pub fn corpus_report(corpus: &Corpus, subset: Option<&[usize]>, config: AnalysisConfig) -> Result<CorpusReport> {
    let ids: Vec<usize> = match subset {
        Some(ids) => {
            crate::corpus::check_indices(ids, corpus.len())?;
            ids.to_vec()
        }
        None => (0..corpus.len()).collect(),
    };
    if ids.is_empty() {
        return Err(Error::EmptySelection);
    }
    let side_report = |side: Side| -> Result<SideReport> {
        let table = FrequencyTable::from_corpus(corpus, side);
        let texts = || ids.iter().map(|&i| corpus.pairs[i].side(side));
        let lengths: Vec<usize> = texts().map(token_len).collect();
        Ok(SideReport {
            length: length_stats(&lengths, config.bin_width)?,
            lexical: lexical_stats(texts(), &table, config.rare_threshold)?,
        })
    };
    Ok(CorpusReport {
        n_pairs: ids.len(),
        source: side_report(Side::Source)?,
        target: side_report(Side::Target)?,
        tokenization: "whitespace".into(),
        frequency_basis: "full corpus".into(),
        lid: None,
    })
}

/// Named per-id columns to join against sentence lengths.
pub fn matrix_columns(matrix: &ScoreMatrix) -> Vec<(String, Vec<f64>)> {
    let mut cols = Vec::new();
    for (j, l) in matrix.labels().iter().enumerate() {
        cols.push((
            format!("nll_ck{l}"),
            (0..matrix.n()).map(|i| matrix.cell(i, j).mean_nll).collect(),
        ));
        cols.push((
            format!("ppl_ck{l}"),
            (0..matrix.n()).map(|i| matrix.cell(i, j).ppl).collect(),
        ));
    }
    cols
}

/// TSV of `id, source_len, target_len, <columns>` with one row per pair.
pub fn score_length_join(corpus: &Corpus, columns: &[(String, Vec<f64>)]) -> Result<String> {
    for (name, col) in columns {
        if col.len() != corpus.len() {
            return Err(Error::invalid(format!(
                "column {name} has {} ids, corpus has {} pairs",
                col.len(),
                corpus.len()
            )));
        }
    }
    let mut out = String::from("id\tsource_len\ttarget_len");
    for (name, _) in columns {
        out.push('\t');
        out.push_str(name);
    }
    out.push('\n');
    for (i, pair) in corpus.pairs.iter().enumerate() {
        out.push_str(&format!(
            "{i}\t{}\t{}",
            token_len(&pair.source),
            token_len(&pair.target)
        ));
        for (_, col) in columns {
            out.push('\t');
            out.push_str(&render_f64(col[i]));
        }
        out.push('\n');
    }
    Ok(out)
}
