//! Turning per-example keys into kept-index sets.
//!
//! Every selector keeps exactly `k = max(1, round_half_up(p·N))` examples and
//! breaks ties by ascending example id, so a selection is a pure function of
//! its inputs.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scoring::{render_f64, write_text, CheckpointLabel, Direction, ExternalScores, ScoreMatrix};

/// Checkpoint pair used by CAT-DIFF unless told otherwise.
pub const DEFAULT_DIFF_CHECKPOINTS: (u32, u32) = (1, 5);
/// Checkpoints used by CAT-VAR unless told otherwise.
pub const DEFAULT_VAR_CHECKPOINTS: [u32; 3] = [1, 3, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    /// Keep the largest perplexity drops between two checkpoints.
    CatDiff {
        early: u32,
        late: u32,
    },
    /// Keep a centred band of cross-checkpoint perplexity variance.
    CatVar {
        checkpoints: Vec<u32>,
    },
    Random {
        seed: u64,
    },
    /// Keep the best external scores.
    ExtTop,
    /// Keep a centred band of external scores.
    ExtBand,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::CatDiff { .. } => "cat-diff",
            Method::CatVar { .. } => "cat-var",
            Method::Random { .. } => "random",
            Method::ExtTop => "ext-top",
            Method::ExtBand => "ext-band",
        }
    }

    pub fn needs_matrix(&self) -> bool {
        matches!(self, Method::CatDiff { .. } | Method::CatVar { .. })
    }

    pub fn needs_external(&self) -> bool {
        matches!(self, Method::ExtTop | Method::ExtBand)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSpec {
    #[serde(flatten)]
    pub method: Method,
    /// Fraction of the corpus to keep, in (0, 1]. Keep = 1 − prune level.
    pub keep: f64,
}

impl SelectionSpec {
    pub fn new(method: Method, keep: f64) -> Result<SelectionSpec> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::invalid(format!("keep fraction must be in (0, 1], got {keep}")));
        }
        match &method {
            Method::CatDiff { early, late } if early >= late || *early == 0 => {
                return Err(Error::invalid(format!(
                    "cat-diff needs 1 <= early < late checkpoints, got ({early}, {late})"
                )))
            }
            Method::CatVar { checkpoints } if checkpoints.len() < 2 => {
                return Err(Error::invalid("cat-var needs at least two checkpoints"))
            }
            _ => {}
        }
        Ok(SelectionSpec { method, keep })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub spec: SelectionSpec,
    pub n: usize,
    /// Ascending.
    pub kept: Vec<usize>,
    /// The per-id key the selector ranked on (absent for random).
    pub keys: Option<Vec<f64>>,
}

impl SelectionResult {
    pub fn k(&self) -> usize {
        self.kept.len()
    }
}

/// `max(1, round_half_up(p·N))`, capped at N. The product gets a 1e-9 nudge
/// so that decimal fractions like 0.15·10 land on the intended half.
pub fn keep_count(keep: f64, n: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::invalid("cannot select from an empty corpus"));
    }
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::invalid(format!("keep fraction must be in (0, 1], got {keep}")));
    }
    let k = (keep * n as f64 + 0.5 + 1e-9).floor() as usize;
    Ok(k.clamp(1, n))
}

fn cmp_f64(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

/// Ids ordered by key (descending if `descending`), ties by ascending id.
fn ranked(keys: &[f64], descending: bool) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..keys.len()).collect();
    ids.sort_by(|&a, &b| {
        let by_key = cmp_f64(keys[a], keys[b]);
        let by_key = if descending { by_key.reverse() } else { by_key };
        by_key.then(a.cmp(&b))
    });
    ids
}

fn top_k(keys: &[f64], k: usize, descending: bool) -> Vec<usize> {
    let mut kept: Vec<usize> = ranked(keys, descending).into_iter().take(k).collect();
    kept.sort_unstable();
    kept
}

/// Rank window `[floor((N−k)/2), floor((N−k)/2) + k)` of the ascending order.
fn centered_band(keys: &[f64], k: usize) -> Vec<usize> {
    let start = (keys.len() - k) / 2;
    let mut kept: Vec<usize> = ranked(keys, false).into_iter().skip(start).take(k).collect();
    kept.sort_unstable();
    kept
}

/// `ppl[early] − ppl[late]` per example. Negative when an example got harder.
pub fn delta_ppl(matrix: &ScoreMatrix, early: u32, late: u32) -> Result<Vec<f64>> {
    let a = matrix.ppl_column(CheckpointLabel::Epoch(early))?;
    let b = matrix.ppl_column(CheckpointLabel::Epoch(late))?;
    Ok(a.iter().zip(&b).map(|(x, y)| x - y).collect())
}

/// Population variance of each example's perplexity across `checkpoints`,
/// around that example's own mean.
pub fn ppl_variance(matrix: &ScoreMatrix, checkpoints: &[u32]) -> Result<Vec<f64>> {
    if checkpoints.len() < 2 {
        return Err(Error::invalid("variance needs at least two checkpoints"));
    }
    let cols = checkpoints
        .iter()
        .map(|&e| matrix.column_of(CheckpointLabel::Epoch(e)))
        .collect::<Result<Vec<_>>>()?;
    let c = cols.len() as f64;
    Ok((0..matrix.n())
        .map(|i| {
            let mean = cols.iter().map(|&j| matrix.cell(i, j).ppl).sum::<f64>() / c;
            cols.iter()
                .map(|&j| {
                    let d = matrix.cell(i, j).ppl - mean;
                    d * d
                })
                .sum::<f64>()
                / c
        })
        .collect())
}

pub fn cat_diff_select(matrix: &ScoreMatrix, spec: &SelectionSpec) -> Result<SelectionResult> {
    let Method::CatDiff { early, late } = spec.method else {
        return Err(Error::invalid("cat_diff_select needs a cat-diff spec"));
    };
    let keys = delta_ppl(matrix, early, late)?;
    let k = keep_count(spec.keep, keys.len())?;
    Ok(SelectionResult {
        spec: spec.clone(),
        n: keys.len(),
        kept: top_k(&keys, k, true),
        keys: Some(keys),
    })
}

pub fn cat_var_select(matrix: &ScoreMatrix, spec: &SelectionSpec) -> Result<SelectionResult> {
    let Method::CatVar { checkpoints } = &spec.method else {
        return Err(Error::invalid("cat_var_select needs a cat-var spec"));
    };
    let keys = ppl_variance(matrix, checkpoints)?;
    let k = keep_count(spec.keep, keys.len())?;
    Ok(SelectionResult {
        spec: spec.clone(),
        n: keys.len(),
        kept: centered_band(&keys, k),
        keys: Some(keys),
    })
}

/// Fisher–Yates shuffle of `0..n` on ChaCha8 stream 0 of the seed, keep the
/// first k, return them sorted.
pub fn random_select(n: usize, spec: &SelectionSpec) -> Result<SelectionResult> {
    let Method::Random { seed } = spec.method else {
        return Err(Error::invalid("random_select needs a random spec"));
    };
    let k = keep_count(spec.keep, n)?;
    let mut ids: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut ids, &mut rng::seeded(seed));
    ids.truncate(k);
    ids.sort_unstable();
    Ok(SelectionResult {
        spec: spec.clone(),
        n,
        kept: ids,
        keys: None,
    })
}

pub fn ext_select(scores: &ExternalScores, spec: &SelectionSpec) -> Result<SelectionResult> {
    let keys = &scores.scores;
    let k = keep_count(spec.keep, keys.len())?;
    let kept = match (&spec.method, scores.direction) {
        (Method::ExtTop, Direction::HigherIsBetter) => top_k(keys, k, true),
        (Method::ExtTop, Direction::LowerIsBetter) => top_k(keys, k, false),
        (Method::ExtTop, Direction::Band) => return Err(Error::invalid("ext-top needs a higher or lower direction")),
        (Method::ExtBand, _) => centered_band(keys, k),
        _ => return Err(Error::invalid("ext_select needs an ext-top or ext-band spec")),
    };
    Ok(SelectionResult {
        spec: spec.clone(),
        n: keys.len(),
        kept,
        keys: Some(keys.clone()),
    })
}

/// Dispatches a matrix-based spec (cat-diff, cat-var, or random sized by the matrix).
pub fn select_from_matrix(matrix: &ScoreMatrix, spec: &SelectionSpec) -> Result<SelectionResult> {
    match spec.method {
        Method::CatDiff { .. } => cat_diff_select(matrix, spec),
        Method::CatVar { .. } => cat_var_select(matrix, spec),
        Method::Random { .. } => random_select(matrix.n(), spec),
        Method::ExtTop | Method::ExtBand => Err(Error::invalid(format!(
            "{} needs an external score file, not a score matrix",
            spec.method.name()
        ))),
    }
}

/// One id per line, ascending.
pub fn write_indices(path: &Path, kept: &[usize]) -> Result<()> {
    let mut text = String::with_capacity(kept.len() * 8);
    for id in kept {
        text.push_str(&id.to_string());
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn read_indices(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let id: usize = t
            .parse()
            .map_err(|_| Error::malformed(path, line_no, format!("bad index {t:?}")))?;
        if out.last().is_some_and(|&prev| prev >= id) {
            return Err(Error::malformed(path, line_no, "indices must be strictly ascending"));
        }
        out.push(id);
    }
    Ok(out)
}

/// `id<TAB>key` for every example.
pub fn write_keys(path: &Path, keys: &[f64]) -> Result<()> {
    let mut text = String::from("id\tkey\n");
    for (i, k) in keys.iter().enumerate() {
        text.push_str(&format!("{i}\t{}\n", render_f64(*k)));
    }
    write_text(path, &text)
}

/// Reads an `id<TAB>key` file written by [`write_keys`]; ids must be `0..n`.
pub fn read_keys(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut keys = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if line_no == 1 && fields[0] == "id" {
            continue;
        }
        if fields.len() != 2 {
            return Err(Error::malformed(path, line_no, "expected id<TAB>key"));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| Error::malformed(path, line_no, format!("bad id {:?}", fields[0])))?;
        if id != keys.len() {
            return Err(Error::malformed(
                path,
                line_no,
                format!("expected id {}, found {id}", keys.len()),
            ));
        }
        let key: f64 = fields[1]
            .parse()
            .ok()
            .filter(|k: &f64| k.is_finite())
            .ok_or_else(|| Error::malformed(path, line_no, format!("bad key {:?}", fields[1])))?;
        keys.push(key);
    }
    Ok(keys)
}
