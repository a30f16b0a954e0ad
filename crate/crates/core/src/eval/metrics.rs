//! Corpus BLEU (exponential smoothing) and chrF++.
//!
//! Both metrics reduce each segment to a vector of integer sufficient
//! statistics; a corpus score is a function of the summed vectors. Bootstrap
//! resampling relies on that to avoid re-tokenizing.
//!
//! BLEU follows sacreBLEU's `smooth:exp|eff:no` arithmetic with whitespace
//! tokenization. chrF++ follows sacreBLEU's default chrF with six character
//! orders, two word orders and β = 2.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BLEU_ORDER: usize = 4;
pub const CHAR_ORDER: usize = 6;
pub const WORD_ORDER: usize = 2;
pub const CHRF_BETA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Bleu,
    #[serde(rename = "chrfpp")]
    ChrfPP,
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bleu" => Ok(MetricKind::Bleu),
            "chrfpp" | "chrf++" => Ok(MetricKind::ChrfPP),
            _ => Err(Error::invalid(format!("unknown metric {s:?} (bleu|chrfpp)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Breakdown {
    Bleu {
        /// n-gram precisions in percent, orders 1..4 (0 when an order is absent).
        precisions: Vec<f64>,
        brevity_penalty: f64,
        hyp_len: u64,
        ref_len: u64,
        /// Orders that entered the geometric mean.
        orders_used: usize,
    },
    #[serde(rename = "chrfpp")]
    Chrf {
        /// Mean precision over orders present on both sides.
        avg_precision: f64,
        avg_recall: f64,
        effective_order: usize,
        beta: f64,
        /// F-score using only the character orders, in percent.
        char_f: f64,
        /// F-score using only the word orders, in percent.
        word_f: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub metric: MetricKind,
    /// In [0, 100].
    pub value: f64,
    pub breakdown: Breakdown,
}

impl MetricScore {
    /// Recomputes the value from the breakdown alone.
    pub fn recombine(&self) -> f64 {
        match &self.breakdown {
            Breakdown::Bleu {
                precisions,
                brevity_penalty,
                orders_used,
                hyp_len,
                ref_len,
            } => {
                if *hyp_len == 0 {
                    return if *ref_len == 0 { 100.0 } else { 0.0 };
                }
                let used: Vec<f64> = precisions.iter().copied().filter(|&p| p > 0.0).collect();
                if used.len() < *orders_used || *orders_used == 0 {
                    return 0.0;
                }
                let mean_log = used.iter().map(|p| (p / 100.0).ln()).sum::<f64>() / *orders_used as f64;
                100.0 * brevity_penalty * mean_log.exp()
            }
            Breakdown::Chrf {
                avg_precision,
                avg_recall,
                beta,
                ..
            } => 100.0 * f_beta(*avg_precision, *avg_recall, *beta),
        }
    }
}

fn f_beta(p: f64, r: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    if p + r > 0.0 {
        (1.0 + b2) * p * r / (b2 * p + r)
    } else {
        0.0
    }
}

fn count_ngrams<T: Hash + Eq + Clone>(items: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut m = HashMap::new();
    if items.len() >= n {
        for w in items.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// (hyp total, ref total, clipped matches).
fn match_counts<T: Hash + Eq + Clone>(hyp: &[T], reference: &[T], n: usize) -> (u64, u64, u64) {
    let h = count_ngrams(hyp, n);
    let r = count_ngrams(reference, n);
    let matched = h.iter().map(|(g, &c)| r.get(g).map_or(0, |&rc| c.min(rc))).sum();
    (h.values().sum(), r.values().sum(), matched)
}

impl MetricKind {
    pub fn stats_len(self) -> usize {
        match self {
            // hyp_len, ref_len, correct×4, total×4, ref_total×4
            MetricKind::Bleu => 2 + 3 * BLEU_ORDER,
            // (hyp, ref, match) per order
            MetricKind::ChrfPP => 3 * (CHAR_ORDER + WORD_ORDER),
        }
    }

    pub fn segment_stats(self, hyp: &str, reference: &str) -> Vec<u64> {
        match self {
            MetricKind::Bleu => bleu_segment_stats(hyp, reference),
            MetricKind::ChrfPP => chrf_segment_stats(hyp, reference),
        }
    }

    pub fn score_stats(self, stats: &[u64]) -> MetricScore {
        match self {
            MetricKind::Bleu => bleu_from_stats(stats),
            MetricKind::ChrfPP => chrf_from_stats(stats),
        }
    }

    pub fn corpus_stats(self, hyps: &[String], refs: &[String]) -> Result<Vec<Vec<u64>>> {
        if hyps.len() != refs.len() {
            return Err(Error::invalid(format!(
                "{} hypotheses but {} references",
                hyps.len(),
                refs.len()
            )));
        }
        if hyps.is_empty() {
            return Err(Error::invalid("no segments to score"));
        }
        Ok(hyps.iter().zip(refs).map(|(h, r)| self.segment_stats(h, r)).collect())
    }

    pub fn corpus_score(self, hyps: &[String], refs: &[String]) -> Result<MetricScore> {
        let per_segment = self.corpus_stats(hyps, refs)?;
        Ok(self.score_stats(&sum_stats(&per_segment, self.stats_len())))
    }
}

pub(crate) fn sum_stats(per_segment: &[Vec<u64>], len: usize) -> Vec<u64> {
    let mut total = vec![0u64; len];
    for s in per_segment {
        for (t, v) in total.iter_mut().zip(s) {
            *t += v;
        }
    }
    total
}

fn bleu_segment_stats(hyp: &str, reference: &str) -> Vec<u64> {
    let h: Vec<&str> = hyp.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    let mut stats = vec![0u64; 2 + 3 * BLEU_ORDER];
    stats[0] = h.len() as u64;
    stats[1] = r.len() as u64;
    for n in 1..=BLEU_ORDER {
        let (ht, rt, m) = match_counts(&h, &r, n);
        stats[1 + n] = m;
        stats[1 + BLEU_ORDER + n] = ht;
        stats[1 + 2 * BLEU_ORDER + n] = rt;
    }
    stats
}

fn bleu_from_stats(stats: &[u64]) -> MetricScore {
    let (hyp_len, ref_len) = (stats[0], stats[1]);
    let correct = &stats[2..2 + BLEU_ORDER];
    let total = &stats[2 + BLEU_ORDER..2 + 2 * BLEU_ORDER];
    let ref_total = &stats[2 + 2 * BLEU_ORDER..2 + 3 * BLEU_ORDER];

    let brevity_penalty = if hyp_len < ref_len {
        if hyp_len > 0 {
            (1.0 - ref_len as f64 / hyp_len as f64).exp()
        } else {
            0.0
        }
    } else {
        1.0
    };

    let mut precisions = vec![0.0; BLEU_ORDER];
    let mut log_sum = 0.0;
    let mut orders_used = 0;
    let mut zero = false;
    let mut smooth = 1.0;
    for n in 0..BLEU_ORDER {
        if total[n] == 0 {
            // An order neither side has (all segments shorter than n+1)
            // is left out; one only the reference has zeroes the score.
            if ref_total[n] > 0 {
                orders_used += 1;
                zero = true;
            }
            continue;
        }
        orders_used += 1;
        let p = if correct[n] == 0 {
            smooth *= 2.0;
            1.0 / (smooth * total[n] as f64)
        } else {
            correct[n] as f64 / total[n] as f64
        };
        precisions[n] = 100.0 * p;
        log_sum += p.ln();
    }

    let value = if hyp_len == 0 {
        if ref_len == 0 {
            100.0
        } else {
            0.0
        }
    } else if zero || orders_used == 0 {
        0.0
    } else {
        100.0 * brevity_penalty * (log_sum / orders_used as f64).exp()
    };
    MetricScore {
        metric: MetricKind::Bleu,
        value,
        breakdown: Breakdown::Bleu {
            precisions,
            brevity_penalty,
            hyp_len,
            ref_len,
            orders_used,
        },
    }
}

const PUNCTUATION: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

/// Whitespace split with one leading or trailing punctuation mark peeled off
/// each multi-character word.
fn chrf_words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for w in text.split_whitespace() {
        let mut chars = w.chars();
        let first = chars.next().unwrap();
        if chars.next().is_none() {
            out.push(w);
            continue;
        }
        let last = w.chars().next_back().unwrap();
        if PUNCTUATION.contains(last) {
            let cut = w.len() - last.len_utf8();
            out.push(&w[..cut]);
            out.push(&w[cut..]);
        } else if PUNCTUATION.contains(first) {
            let cut = first.len_utf8();
            out.push(&w[..cut]);
            out.push(&w[cut..]);
        } else {
            out.push(w);
        }
    }
    out
}

fn chrf_segment_stats(hyp: &str, reference: &str) -> Vec<u64> {
    let hc: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    let rc: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let hw = chrf_words(hyp);
    let rw = chrf_words(reference);
    let mut stats = Vec::with_capacity(3 * (CHAR_ORDER + WORD_ORDER));
    let mut push = |(h, r, m): (u64, u64, u64)| {
        stats.push(if r > 0 { h } else { 0 });
        stats.push(r);
        stats.push(m);
    };
    for n in 1..=CHAR_ORDER {
        push(match_counts(&hc, &rc, n));
    }
    for n in 1..=WORD_ORDER {
        push(match_counts(&hw, &rw, n));
    }
    stats
}

/// Averages precision and recall over the orders present on both sides, then
/// takes the F-β of the averages.
fn chrf_orders(stats: &[u64]) -> (f64, f64, usize) {
    let (mut p_sum, mut r_sum, mut eff) = (0.0, 0.0, 0usize);
    for o in stats.chunks(3) {
        let (h, r, m) = (o[0], o[1], o[2]);
        if h > 0 && r > 0 {
            p_sum += m as f64 / h as f64;
            r_sum += m as f64 / r as f64;
            eff += 1;
        }
    }
    if eff == 0 {
        (0.0, 0.0, 0)
    } else {
        (p_sum / eff as f64, r_sum / eff as f64, eff)
    }
}

fn chrf_from_stats(stats: &[u64]) -> MetricScore {
    let (avg_precision, avg_recall, effective_order) = chrf_orders(stats);
    let (cp, cr, _) = chrf_orders(&stats[..3 * CHAR_ORDER]);
    let (wp, wr, _) = chrf_orders(&stats[3 * CHAR_ORDER..]);
    MetricScore {
        metric: MetricKind::ChrfPP,
        value: 100.0 * f_beta(avg_precision, avg_recall, CHRF_BETA),
        breakdown: Breakdown::Chrf {
            avg_precision,
            avg_recall,
            effective_order,
            beta: CHRF_BETA,
            char_f: 100.0 * f_beta(cp, cr, CHRF_BETA),
            word_f: 100.0 * f_beta(wp, wr, CHRF_BETA),
        },
    }
}

pub fn bleu(hyps: &[String], refs: &[String]) -> Result<MetricScore> {
    MetricKind::Bleu.corpus_score(hyps, refs)
}

pub fn chrf_pp(hyps: &[String], refs: &[String]) -> Result<MetricScore> {
    MetricKind::ChrfPP.corpus_score(hyps, refs)
}
