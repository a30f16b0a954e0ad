//! Training-plus-scoring and the full noise → score → select → retrain → decode
//! loop used for desk-scale comparisons of selectors.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocab, Corpus, Side, TokenizedPair, Tokenizer, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::eval::{inject_noise, retention_metrics, MetricKind, NoiseFractions, NoiseManifest};
use crate::model::{train, ModelConfig, OptimizerKind, TrainOutcome};
use crate::scoring::{score_corpus, write_text, ScoreMatrix};
use crate::selection::{
    keep_count, select_from_matrix, Method, SelectionSpec, DEFAULT_DIFF_CHECKPOINTS, DEFAULT_VAR_CHECKPOINTS,
};

pub const DEFAULT_VOCAB_SIZE: usize = 10_000;
pub const DEFAULT_SNAPSHOT_EPOCHS: [u32; 3] = [1, 3, 5];
pub const DEFAULT_HELDOUT_FRACTION: f64 = 0.1;

/// Everything needed to build vocabularies and train the scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub context: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Falls back to the optimizer's default.
    pub learning_rate: Option<f64>,
    pub epochs: u32,
    pub batch_size: usize,
    pub label_smoothing: f64,
    pub vocab_size: usize,
    pub min_freq: usize,
    pub max_len: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let m = ModelConfig::new(1, 1);
        TrainSettings {
            embed_dim: m.embed_dim,
            hidden_dim: m.hidden_dim,
            context: m.context,
            seed: m.seed,
            optimizer: m.optimizer,
            learning_rate: None,
            epochs: m.epochs,
            batch_size: m.batch_size,
            label_smoothing: m.label_smoothing,
            vocab_size: DEFAULT_VOCAB_SIZE,
            min_freq: 1,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl TrainSettings {
    pub fn model_config(&self, src_vocab_size: usize, tgt_vocab_size: usize) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            context: self.context,
            src_vocab_size,
            tgt_vocab_size,
            seed: self.seed,
            optimizer: self.optimizer,
            learning_rate: self.learning_rate.unwrap_or(self.optimizer.default_learning_rate()),
            epochs: self.epochs,
            batch_size: self.batch_size,
            label_smoothing: self.label_smoothing,
        }
    }

    pub fn tokenizer(&self, corpus: &Corpus) -> Result<Tokenizer> {
        let src = build_vocab(corpus, Side::Source, self.vocab_size, self.min_freq)?;
        let tgt = build_vocab(corpus, Side::Target, self.vocab_size, self.min_freq)?;
        Ok(Tokenizer::new(src, tgt, self.max_len))
    }
}

pub struct Scored {
    pub tokenizer: Tokenizer,
    pub pairs: Vec<TokenizedPair>,
    pub outcome: TrainOutcome,
    pub matrix: ScoreMatrix,
}

/// Builds vocabularies from `corpus`, trains the scorer on all of it and
/// scores every pair under each requested snapshot.
pub fn train_and_score(corpus: &Corpus, settings: &TrainSettings, snapshot_epochs: &BTreeSet<u32>) -> Result<Scored> {
    if snapshot_epochs.is_empty() {
        return Err(Error::invalid("at least one snapshot epoch is needed"));
    }
    let tokenizer = settings.tokenizer(corpus)?;
    let pairs = tokenizer.tokenize_corpus(corpus);
    let config = settings.model_config(tokenizer.source_vocab.len(), tokenizer.target_vocab.len());
    let outcome = train(&pairs, &config, snapshot_epochs)?;
    let matrix = score_corpus(&pairs, &outcome.snapshots)?;
    Ok(Scored {
        tokenizer,
        pairs,
        outcome,
        matrix,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum E2eMethod {
    CatDiff,
    CatVar,
    Random,
}

impl std::str::FromStr for E2eMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cat-diff" => Ok(E2eMethod::CatDiff),
            "cat-var" => Ok(E2eMethod::CatVar),
            "random" => Ok(E2eMethod::Random),
            _ => Err(Error::invalid(format!(
                "unknown e2e method {s:?} (cat-diff|cat-var|random)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct E2eConfig {
    pub methods: Vec<E2eMethod>,
    pub keeps: Vec<f64>,
    pub noise: NoiseFractions,
    /// Drives noise injection and random selection.
    pub seed: u64,
    pub train: TrainSettings,
    pub snapshot_epochs: Vec<u32>,
    pub diff_checkpoints: (u32, u32),
    pub var_checkpoints: Vec<u32>,
    /// Trailing share of the clean input held out for decoding.
    pub heldout_fraction: f64,
}

impl Default for E2eConfig {
    fn default() -> Self {
        E2eConfig {
            methods: vec![E2eMethod::CatDiff, E2eMethod::CatVar, E2eMethod::Random],
            keeps: vec![0.1, 0.3, 0.5],
            noise: NoiseFractions::default(),
            seed: 0,
            train: TrainSettings::default(),
            snapshot_epochs: DEFAULT_SNAPSHOT_EPOCHS.to_vec(),
            diff_checkpoints: DEFAULT_DIFF_CHECKPOINTS,
            var_checkpoints: DEFAULT_VAR_CHECKPOINTS.to_vec(),
            heldout_fraction: DEFAULT_HELDOUT_FRACTION,
        }
    }
}

impl E2eConfig {
    fn spec(&self, method: E2eMethod, keep: f64) -> Result<SelectionSpec> {
        let m = match method {
            E2eMethod::CatDiff => Method::CatDiff {
                early: self.diff_checkpoints.0,
                late: self.diff_checkpoints.1,
            },
            E2eMethod::CatVar => Method::CatVar {
                checkpoints: self.var_checkpoints.clone(),
            },
            E2eMethod::Random => Method::Random { seed: self.seed },
        };
        SelectionSpec::new(m, keep)
    }

    fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.keeps.is_empty() {
            return Err(Error::invalid("e2e needs at least one method and one keep fraction"));
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0) {
            return Err(Error::invalid("held-out fraction must be in (0, 1)"));
        }
        self.noise.validate()?;
        for &m in &self.methods {
            for &k in &self.keeps {
                self.spec(m, k)?;
            }
        }
        let snaps: BTreeSet<u32> = self.snapshot_epochs.iter().copied().collect();
        let needed: Vec<u32> = self
            .methods
            .iter()
            .flat_map(|m| match m {
                E2eMethod::CatDiff => vec![self.diff_checkpoints.0, self.diff_checkpoints.1],
                E2eMethod::CatVar => self.var_checkpoints.clone(),
                E2eMethod::Random => vec![],
            })
            .collect();
        if let Some(e) = needed.iter().find(|e| !snaps.contains(e)) {
            return Err(Error::invalid(format!(
                "checkpoint {e} is not among the snapshot epochs"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eRow {
    /// A selector name, or "full" for training on the whole noisy pool.
    pub method: String,
    pub keep: f64,
    pub k: usize,
    pub clean_precision: f64,
    pub noise_recall: Option<f64>,
    pub bleu: f64,
    pub chrfpp: f64,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eReport {
    pub config: E2eConfig,
    pub pool_size: usize,
    pub heldout_size: usize,
    pub rows: Vec<E2eRow>,
}

impl E2eReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("method\tkeep\tk\tclean_precision\tnoise_recall\tbleu\tchrfpp\n");
        for r in &self.rows {
            let recall = r.noise_recall.map_or("NA".to_string(), |v| format!("{v:.4}"));
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.4}\t{}\t{:.4}\t{:.4}\n",
                r.method, r.keep, r.k, r.clean_precision, recall, r.bleu, r.chrfpp
            ));
        }
        out
    }
}

/// Files of one stage, written as `<name>.partial` and renamed only once the
/// whole stage has succeeded.
struct Stage<'a> {
    name: &'static str,
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl<'a> Stage<'a> {
    fn new(name: &'static str, dir: &'a Path) -> Self {
        Stage {
            name,
            dir,
            written: Vec::new(),
        }
    }

    fn wrap<T>(&self, r: Result<T>) -> Result<T> {
        r.map_err(|e| Error::Stage {
            stage: self.name.to_string(),
            source: Box::new(e),
        })
    }

    fn write(&mut self, rel: &str, text: &str) -> Result<()> {
        let path = self.dir.join(format!("{rel}.partial"));
        let r = write_text(&path, text);
        self.wrap(r)?;
        self.written.push(path);
        Ok(())
    }

    fn commit(self) -> Result<()> {
        for p in &self.written {
            let done = p.with_extension("");
            std::fs::rename(p, &done).map_err(|e| Error::Stage {
                stage: self.name.to_string(),
                source: Box::new(Error::io(&done, e)),
            })?;
        }
        Ok(())
    }
}

fn tsv_text(corpus: &Corpus) -> String {
    let mut s = String::new();
    for p in &corpus.pairs {
        s.push_str(&p.source);
        s.push('\t');
        s.push_str(&p.target);
        s.push('\n');
    }
    s
}

fn lines_text(lines: &[String]) -> String {
    lines.iter().map(|l| format!("{l}\n")).collect()
}

struct Cell {
    row: E2eRow,
    hyps: Vec<String>,
}

fn retrain_and_decode(
    train_pairs: &[TokenizedPair],
    tokenizer: &Tokenizer,
    settings: &TrainSettings,
    heldout: &Corpus,
) -> Result<(f64, Vec<String>, f64, f64)> {
    let config = settings.model_config(tokenizer.source_vocab.len(), tokenizer.target_vocab.len());
    let outcome = train(train_pairs, &config, &BTreeSet::new())?;
    let model = outcome.final_snapshot;
    let hyps: Vec<String> = heldout
        .pairs
        .iter()
        .map(|p| {
            let src = tokenizer.encode_source(&p.source);
            tokenizer
                .target_vocab
                .detokenize(&model.greedy_decode(&src, tokenizer.max_len))
        })
        .collect();
    let refs: Vec<String> = heldout.pairs.iter().map(|p| p.target.clone()).collect();
    let bleu = MetricKind::Bleu.corpus_score(&hyps, &refs)?.value;
    let chrf = MetricKind::ChrfPP.corpus_score(&hyps, &refs)?.value;
    let loss = *outcome.report.epoch_losses.last().unwrap();
    Ok((loss, hyps, bleu, chrf))
}

fn renumber(pairs: &[TokenizedPair], ids: &[usize]) -> Vec<TokenizedPair> {
    ids.iter()
        .enumerate()
        .map(|(new_id, &i)| TokenizedPair {
            id: new_id,
            ..pairs[i].clone()
        })
        .collect()
}

/// Runs the whole comparison and writes its artifacts under `out_dir`.
/// A failing stage leaves its own files with a `.partial` suffix and the
/// error names the stage.
pub fn run_e2e(corpus: &Corpus, config: &E2eConfig, out_dir: &Path) -> Result<E2eReport> {
    config.validate()?;
    let n = corpus.len();
    let n_held = keep_count(config.heldout_fraction, n).map_err(|_| Error::invalid("corpus is empty"))?;
    if n - n_held < 2 {
        return Err(Error::invalid(format!(
            "corpus of {n} pairs is too small to hold out {n_held}"
        )));
    }
    let pool_ids: Vec<usize> = (0..n - n_held).collect();
    let held_ids: Vec<usize> = (n - n_held..n).collect();

    let mut stage = Stage::new("noise", out_dir);
    let heldout = stage.wrap(corpus.restrict(&held_ids))?;
    let clean_pool = stage.wrap(corpus.restrict(&pool_ids))?;
    let (pool, manifest): (Corpus, NoiseManifest) = stage.wrap(inject_noise(&clean_pool, config.noise, config.seed))?;
    stage.write("heldout.tsv", &tsv_text(&heldout))?;
    stage.write("noisy_pool.tsv", &tsv_text(&pool))?;
    stage.write("noise_manifest.json", &serde_json::to_string_pretty(&manifest)?)?;
    stage.commit()?;

    let mut stage = Stage::new("score", out_dir);
    let snaps: BTreeSet<u32> = config.snapshot_epochs.iter().copied().collect();
    let scored = stage.wrap(train_and_score(&pool, &config.train, &snaps))?;
    stage.write("scores.tsv", &scored.matrix.to_tsv())?;
    stage.commit()?;

    let mut stage = Stage::new("select", out_dir);
    let mut cells = Vec::new();
    for &m in &config.methods {
        for &keep in &config.keeps {
            let spec = stage.wrap(config.spec(m, keep))?;
            let sel = stage.wrap(select_from_matrix(&scored.matrix, &spec))?;
            let text: String = sel.kept.iter().map(|i| format!("{i}\n")).collect();
            stage.write(&format!("selections/{}_keep{keep}.txt", spec.method.name()), &text)?;
            cells.push((spec, sel.kept));
        }
    }
    stage.commit()?;
    let all_ids: Vec<usize> = (0..pool.len()).collect();
    cells.push((SelectionSpec::new(Method::Random { seed: 0 }, 1.0)?, all_ids));

    let mut stage = Stage::new("retrain", out_dir);
    let results: Vec<Result<Cell>> = cells
        .par_iter()
        .enumerate()
        .map(|(c, (spec, kept))| {
            let full = c == cells.len() - 1;
            let retention = retention_metrics(kept, &manifest)?;
            let (loss, hyps, bleu, chrfpp) = retrain_and_decode(
                &renumber(&scored.pairs, kept),
                &scored.tokenizer,
                &config.train,
                &heldout,
            )?;
            Ok(Cell {
                row: E2eRow {
                    method: if full { "full".into() } else { spec.method.name().into() },
                    keep: spec.keep,
                    k: kept.len(),
                    clean_precision: retention.clean_precision,
                    noise_recall: retention.noise_recall,
                    bleu,
                    chrfpp,
                    final_train_loss: loss,
                },
                hyps,
            })
        })
        .collect();
    let mut rows = Vec::new();
    for cell in results {
        let cell = stage.wrap(cell)?;
        let name = format!("hyps/{}_keep{}.txt", cell.row.method, cell.row.keep);
        stage.write(&name, &lines_text(&cell.hyps))?;
        rows.push(cell.row);
    }
    stage.commit()?;

    let report = E2eReport {
        config: config.clone(),
        pool_size: pool.len(),
        heldout_size: heldout.len(),
        rows,
    };
    let mut stage = Stage::new("report", out_dir);
    stage.write("table.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
    stage.write("table.tsv", &report.to_tsv())?;
    stage.commit()?;
    Ok(report)
}
