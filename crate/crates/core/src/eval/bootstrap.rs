//! Paired bootstrap resampling between two systems scored on the same references.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{sum_stats, MetricKind};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub metric: MetricKind,
    pub resamples: usize,
    pub seed: u64,
    /// Fraction of resamples where A ≤ B.
    pub p_value: f64,
    /// Fraction of resamples where A > B.
    pub win_rate_a: f64,
    /// Fraction of resamples where A = B.
    pub tie_rate: f64,
    pub score_a: f64,
    pub score_b: f64,
}

/// One-sided test of "A beats B". Resample `r` draws its segment indices from
/// its own stream of `seed`, so the result does not depend on thread count.
pub fn paired_bootstrap(
    metric: MetricKind,
    hyp_a: &[String],
    hyp_b: &[String],
    refs: &[String],
    resamples: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if resamples < 1 {
        return Err(Error::invalid("bootstrap needs at least one resample"));
    }
    if hyp_a.len() != hyp_b.len() {
        return Err(Error::invalid(format!(
            "system A has {} segments, system B has {}",
            hyp_a.len(),
            hyp_b.len()
        )));
    }
    let stats_a = metric.corpus_stats(hyp_a, refs)?;
    let stats_b = metric.corpus_stats(hyp_b, refs)?;
    let len = metric.stats_len();
    let n = refs.len();

    let outcomes: Vec<std::cmp::Ordering> = (0..resamples as u64)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(seed, r);
            let mut sa = vec![0u64; len];
            let mut sb = vec![0u64; len];
            for _ in 0..n {
                let i = rng::below(&mut g, n as u64) as usize;
                for (t, v) in sa.iter_mut().zip(&stats_a[i]) {
                    *t += v;
                }
                for (t, v) in sb.iter_mut().zip(&stats_b[i]) {
                    *t += v;
                }
            }
            let a = metric.score_stats(&sa).value;
            let b = metric.score_stats(&sb).value;
            a.total_cmp(&b)
        })
        .collect();

    let wins = outcomes.iter().filter(|o| o.is_gt()).count();
    let ties = outcomes.iter().filter(|o| o.is_eq()).count();
    let total = resamples as f64;
    Ok(BootstrapResult {
        metric,
        resamples,
        seed,
        p_value: (resamples - wins) as f64 / total,
        win_rate_a: wins as f64 / total,
        tie_rate: ties as f64 / total,
        score_a: metric.score_stats(&sum_stats(&stats_a, len)).value,
        score_b: metric.score_stats(&sum_stats(&stats_b, len)).value,
    })
}
