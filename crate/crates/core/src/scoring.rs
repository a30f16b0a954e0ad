//! Per-example perplexity under each checkpoint, and external score files.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedPair;
use crate::error::{Error, Result};
use crate::model::ModelSnapshot;

/// Mean NLL above which perplexity is clamped (ppl ≈ 1.07e13).
pub const NLL_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perplexity {
    pub mean_nll: f64,
    pub ppl: f64,
}

impl Perplexity {
    pub fn from_mean_nll(mean_nll: f64) -> Perplexity {
        Perplexity {
            mean_nll,
            ppl: mean_nll.min(NLL_CLAMP).exp(),
        }
    }
}

/// `mean_nll = −Σ log p / T`, `ppl = exp(min(mean_nll, 30))`.
pub fn perplexity(log_probs: &[f64]) -> Result<Perplexity> {
    if log_probs.is_empty() {
        return Err(Error::invalid("perplexity of an empty sequence"));
    }
    if let Some(pos) = log_probs.iter().position(|&lp| lp.is_nan() || lp > 0.0) {
        return Err(Error::invalid(format!(
            "log-probability at position {pos} is {} (must be <= 0)",
            log_probs[pos]
        )));
    }
    let sum: f64 = log_probs.iter().sum();
    let mean_nll = if sum == 0.0 { 0.0 } else { -sum / log_probs.len() as f64 };
    Ok(Perplexity::from_mean_nll(mean_nll))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CheckpointLabel {
    Epoch(u32),
    Ext,
}

impl fmt::Display for CheckpointLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointLabel::Epoch(e) => write!(f, "{e}"),
            CheckpointLabel::Ext => f.write_str("ext"),
        }
    }
}

impl FromStr for CheckpointLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "ext" {
            return Ok(CheckpointLabel::Ext);
        }
        s.parse::<u32>()
            .ok()
            .filter(|&e| e >= 1)
            .map(CheckpointLabel::Epoch)
            .ok_or_else(|| Error::invalid(format!("bad checkpoint label {s:?}")))
    }
}

/// N examples × C checkpoints of (mean NLL, perplexity).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    labels: Vec<CheckpointLabel>,
    /// Row-major, `n × labels.len()`.
    cells: Vec<Perplexity>,
}

impl ScoreMatrix {
    /// Builds a matrix from per-checkpoint mean-NLL columns.
    pub fn from_nll_columns(columns: Vec<(CheckpointLabel, Vec<f64>)>) -> Result<ScoreMatrix> {
        let mut columns = columns;
        columns.sort_by_key(|(l, _)| *l);
        if columns.is_empty() {
            return Err(Error::invalid("score matrix needs at least one checkpoint"));
        }
        if columns.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("duplicate checkpoint label"));
        }
        if columns.len() > 1 && columns.iter().any(|(l, _)| *l == CheckpointLabel::Ext) {
            return Err(Error::invalid("the ext label stands alone"));
        }
        let n = columns[0].1.len();
        if columns.iter().any(|(_, c)| c.len() != n) {
            return Err(Error::invalid("score matrix columns differ in length"));
        }
        let mut cells = Vec::with_capacity(n * columns.len());
        for i in 0..n {
            for (label, col) in &columns {
                let v = col[i];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::invalid(format!("mean NLL {v} for id {i}, checkpoint {label}")));
                }
                cells.push(Perplexity::from_mean_nll(v));
            }
        }
        Ok(ScoreMatrix {
            labels: columns.into_iter().map(|(l, _)| l).collect(),
            cells,
        })
    }

    fn from_rows(labels: Vec<CheckpointLabel>, cells: Vec<Perplexity>) -> ScoreMatrix {
        ScoreMatrix { labels, cells }
    }

    pub fn n(&self) -> usize {
        self.cells.len() / self.labels.len()
    }

    pub fn labels(&self) -> &[CheckpointLabel] {
        &self.labels
    }

    pub fn epochs(&self) -> Vec<u32> {
        self.labels
            .iter()
            .filter_map(|l| match l {
                CheckpointLabel::Epoch(e) => Some(*e),
                CheckpointLabel::Ext => None,
            })
            .collect()
    }

    pub fn cell(&self, id: usize, column: usize) -> Perplexity {
        self.cells[id * self.labels.len() + column]
    }

    pub fn row(&self, id: usize) -> &[Perplexity] {
        let c = self.labels.len();
        &self.cells[id * c..(id + 1) * c]
    }

    pub fn column_of(&self, label: CheckpointLabel) -> Result<usize> {
        self.labels
            .iter()
            .position(|&l| l == label)
            .ok_or_else(|| Error::invalid(format!("checkpoint {label} not in score matrix")))
    }

    pub fn ppl_column(&self, label: CheckpointLabel) -> Result<Vec<f64>> {
        let c = self.column_of(label)?;
        Ok((0..self.n()).map(|i| self.cell(i, c).ppl).collect())
    }

    /// Multiplies every perplexity by `factor` (> 0), leaving NLLs alone.
    /// Useful for checking that selections depend only on ranks.
    pub fn scale_ppl(&self, factor: f64) -> ScoreMatrix {
        let cells = self
            .cells
            .iter()
            .map(|c| Perplexity {
                mean_nll: c.mean_nll,
                ppl: c.ppl * factor,
            })
            .collect();
        ScoreMatrix::from_rows(self.labels.clone(), cells)
    }

    pub fn header(&self) -> String {
        let mut h = String::from("id");
        for l in &self.labels {
            h.push_str(&format!("\tnll_ck{l}\tppl_ck{l}"));
        }
        h
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for i in 0..self.n() {
            out.push_str(&i.to_string());
            for c in self.row(i) {
                out.push('\t');
                out.push_str(&render_f64(c.mean_nll));
                out.push('\t');
                out.push_str(&render_f64(c.ppl));
            }
            out.push('\n');
        }
        out
    }
}

/// 17 significant digits, enough for an exact `f64` round trip.
pub fn render_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Scores every pair under every snapshot. Rows come back in id order no
/// matter how the work was split across threads.
pub fn score_corpus(pairs: &[TokenizedPair], snapshots: &BTreeMap<u32, ModelSnapshot>) -> Result<ScoreMatrix> {
    if snapshots.is_empty() {
        return Err(Error::invalid("no snapshots to score with"));
    }
    if let Some((pos, p)) = pairs.iter().enumerate().find(|(i, p)| p.id != *i) {
        return Err(Error::invalid(format!(
            "pair at position {pos} has id {}, ids must be contiguous",
            p.id
        )));
    }
    let labels: Vec<CheckpointLabel> = snapshots.keys().map(|&e| CheckpointLabel::Epoch(e)).collect();
    let rows: Vec<Vec<Perplexity>> = pairs
        .par_iter()
        .map(|pair| {
            snapshots
                .values()
                .map(|s| s.log_prob(pair).and_then(|lp| perplexity(&lp)))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Example {
                    id: pair.id,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    Ok(ScoreMatrix::from_rows(labels, rows.into_iter().flatten().collect()))
}

pub fn write_matrix(matrix: &ScoreMatrix, path: &Path) -> Result<()> {
    write_text(path, &matrix.to_tsv())
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn parse_header(header: &str, path: &Path) -> Result<Vec<CheckpointLabel>> {
    let bad = || Error::malformed(path, 1, format!("bad header {header:?}"));
    let fields: Vec<&str> = header.split('\t').collect();
    if fields.first() != Some(&"id") || fields.len() < 3 || fields.len().is_multiple_of(2) {
        return Err(bad());
    }
    let mut labels = Vec::new();
    for pair in fields[1..].chunks(2) {
        let nll = pair[0].strip_prefix("nll_ck").ok_or_else(bad)?;
        let ppl = pair[1].strip_prefix("ppl_ck").ok_or_else(bad)?;
        if nll != ppl {
            return Err(bad());
        }
        labels.push(nll.parse::<CheckpointLabel>().map_err(|_| bad())?);
    }
    if labels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::malformed(
            path,
            1,
            "checkpoint labels must be ascending and unique",
        ));
    }
    Ok(labels)
}

fn parse_f64(s: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::malformed(path, line, format!("not a number: {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::malformed(path, line, format!("non-finite value {s:?}")));
    }
    Ok(v)
}

fn parse_id(s: &str, path: &Path, line: usize) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::malformed(path, line, format!("bad id {s:?}")))
}

pub fn read_matrix(path: &Path) -> Result<ScoreMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::malformed(path, 1, "empty file"))?;
    let labels = parse_header(header, path)?;
    let mut rows: HashMap<usize, Vec<Perplexity>> = HashMap::new();
    for (i, raw) in lines.enumerate() {
        let line = i + 2;
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 1 + 2 * labels.len() {
            return Err(Error::malformed(
                path,
                line,
                format!("expected {} fields, found {}", 1 + 2 * labels.len(), fields.len()),
            ));
        }
        let id = parse_id(fields[0], path, line)?;
        let mut row = Vec::with_capacity(labels.len());
        for pair in fields[1..].chunks(2) {
            let nll = parse_f64(pair[0], path, line)?;
            let ppl = parse_f64(pair[1], path, line)?;
            if nll < 0.0 {
                return Err(Error::malformed(path, line, "negative mean NLL"));
            }
            let expected = Perplexity::from_mean_nll(nll).ppl;
            if ((ppl - expected) / expected).abs() > 1e-12 {
                return Err(Error::malformed(
                    path,
                    line,
                    format!("ppl {ppl} inconsistent with nll {nll}"),
                ));
            }
            row.push(Perplexity { mean_nll: nll, ppl });
        }
        if rows.insert(id, row).is_some() {
            return Err(Error::malformed(path, line, format!("duplicate row for id {id}")));
        }
    }
    if rows.is_empty() {
        return Err(Error::malformed(path, 2, "no rows"));
    }
    let n = rows.keys().max().unwrap() + 1;
    let mut cells = Vec::with_capacity(n * labels.len());
    for id in 0..n {
        let row = rows.remove(&id).ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            message: format!("row for id {id} absent"),
        })?;
        cells.extend(row);
    }
    Ok(ScoreMatrix::from_rows(labels, cells))
}

/// Reads a matrix and checks it covers exactly `n` examples.
pub fn read_matrix_for(path: &Path, n: usize) -> Result<ScoreMatrix> {
    let m = read_matrix(path)?;
    if m.n() < n {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: format!("row for id {} absent", m.n()),
        });
    }
    if m.n() > n {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: format!("matrix has {} rows, corpus has {n} pairs", m.n()),
        });
    }
    Ok(m)
}

/// How an external per-example score should be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
    /// Informative examples sit away from both tails.
    Band,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "higher" | "higher-is-better" => Ok(Direction::HigherIsBetter),
            "lower" | "lower-is-better" => Ok(Direction::LowerIsBetter),
            "band" => Ok(Direction::Band),
            _ => Err(Error::invalid(format!("unknown direction {s:?} (higher|lower|band)"))),
        }
    }
}

/// Precomputed per-example scores from an outside model (similarity,
/// quality estimate or LM perplexity).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScores {
    pub scores: Vec<f64>,
    pub direction: Direction,
}

/// Reads `id<TAB>score` rows (an `id<TAB>...` header line is skipped) and
/// checks they cover ids `0..n` exactly once.
pub fn load_external_scores(path: &Path, direction: Direction, n: usize) -> Result<ExternalScores> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut scores: Vec<Option<f64>> = vec![None; n];
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if line == 1 && fields[0] == "id" {
            continue;
        }
        if fields.len() != 2 {
            return Err(Error::malformed(path, line, "expected id<TAB>score"));
        }
        let id = parse_id(fields[0], path, line)?;
        let score = parse_f64(fields[1].trim(), path, line)?;
        if id >= n {
            return Err(Error::malformed(
                path,
                line,
                format!("id {id} beyond corpus of {n} pairs"),
            ));
        }
        if scores[id].replace(score).is_some() {
            return Err(Error::malformed(path, line, format!("duplicate score for id {id}")));
        }
    }
    let scores = scores
        .into_iter()
        .enumerate()
        .map(|(id, s)| {
            s.ok_or_else(|| Error::Format {
                path: path.display().to_string(),
                message: format!("missing score for id {id}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExternalScores { scores, direction })
}
