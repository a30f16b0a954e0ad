//! A small conditional language model trained with hand-written backprop.
//!
//! For target position `t` the network sees
//!
//! ```text
//! x = [ mean(src_embed[s] for s in source) | tgt_embed[y(t-k)] | ... | tgt_embed[y(t-1)] ]
//! h = tanh(hidden_w · x + hidden_b)
//! p = softmax(out_w · h + out_b)
//! ```
//!
//! where `y(j)` for `j < 0` is BOS. Everything is `f64` and every loop runs in
//! a fixed order, so training is bit-reproducible for a given seed.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{TokenizedPair, BOS, EOS};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn default_learning_rate(self) -> f64 {
        match self {
            OptimizerKind::Sgd => 0.1,
            OptimizerKind::Adam => 5e-4,
        }
    }
}

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.98);
pub const ADAM_EPSILON: f64 = 1e-8;
/// Half-width of the uniform initialisation interval.
pub const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Number of previous target tokens the model conditions on.
    pub context: usize,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: u32,
    pub batch_size: usize,
    pub label_smoothing: f64,
}

impl ModelConfig {
    pub fn new(src_vocab_size: usize, tgt_vocab_size: usize) -> Self {
        ModelConfig {
            embed_dim: 32,
            hidden_dim: 64,
            context: 2,
            src_vocab_size,
            tgt_vocab_size,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            learning_rate: OptimizerKind::Sgd.default_learning_rate(),
            epochs: 5,
            batch_size: 64,
            label_smoothing: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("src_vocab_size", self.src_vocab_size),
            ("tgt_vocab_size", self.tgt_vocab_size),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::invalid("label_smoothing must be in [0, 1)"));
        }
        Ok(())
    }

    /// First 8 bytes (little-endian) of SHA-256 over the config's JSON form.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("config serialises");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    pub fn input_dim(&self) -> usize {
        self.embed_dim * (1 + self.context)
    }
}

/// All trainable tensors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// `src_vocab × embed`
    pub src_embed: Vec<f64>,
    /// `tgt_vocab × embed`
    pub tgt_embed: Vec<f64>,
    /// `hidden × input_dim`
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
    /// `tgt_vocab × hidden`
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
}

pub const TENSOR_NAMES: [&str; 6] = ["src_embed", "tgt_embed", "hidden_w", "hidden_b", "out_w", "out_b"];

impl Params {
    pub fn zeros(config: &ModelConfig) -> Params {
        let shapes = Self::shapes(config);
        let z = |i: usize| vec![0.0; shapes[i].iter().product()];
        Params {
            src_embed: z(0),
            tgt_embed: z(1),
            hidden_w: z(2),
            hidden_b: z(3),
            out_w: z(4),
            out_b: z(5),
        }
    }

    pub fn shapes(c: &ModelConfig) -> [Vec<usize>; 6] {
        [
            vec![c.src_vocab_size, c.embed_dim],
            vec![c.tgt_vocab_size, c.embed_dim],
            vec![c.hidden_dim, c.input_dim()],
            vec![c.hidden_dim],
            vec![c.tgt_vocab_size, c.hidden_dim],
            vec![c.tgt_vocab_size],
        ]
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            &self.src_embed,
            &self.tgt_embed,
            &self.hidden_w,
            &self.hidden_b,
            &self.out_w,
            &self.out_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.src_embed,
            &mut self.tgt_embed,
            &mut self.hidden_w,
            &mut self.hidden_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    fn fill(&mut self, v: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = v);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Reusable per-position buffers.
struct Scratch {
    src_mean: Vec<f64>,
    x: Vec<f64>,
    h: Vec<f64>,
    logits: Vec<f64>,
    dh: Vec<f64>,
    dx: Vec<f64>,
}

impl Scratch {
    fn new(c: &ModelConfig) -> Self {
        Scratch {
            src_mean: vec![0.0; c.embed_dim],
            x: vec![0.0; c.input_dim()],
            h: vec![0.0; c.hidden_dim],
            logits: vec![0.0; c.tgt_vocab_size],
            dh: vec![0.0; c.hidden_dim],
            dx: vec![0.0; c.input_dim()],
        }
    }
}

/// Numerically stable in-place log-softmax.
fn log_softmax(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = v.iter().map(|&z| (z - max).exp()).sum();
    let log_z = max + sum.ln();
    v.iter_mut().for_each(|z| *z -= log_z);
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
}

impl Model {
    pub fn zeros(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let params = Params::zeros(&config);
        Ok(Model { config, params })
    }

    /// Uniform(−0.1, 0.1) draws from ChaCha8 stream 0 of `config.seed`, tensor
    /// by tensor in [`TENSOR_NAMES`] order.
    pub fn init(config: ModelConfig) -> Result<Model> {
        let mut model = Model::zeros(config)?;
        let mut r = rng::stream(model.config.seed, 0);
        for t in model.params.tensors_mut() {
            for v in t.iter_mut() {
                *v = rng::uniform(&mut r, -INIT_RANGE, INIT_RANGE);
            }
        }
        Ok(model)
    }

    fn check_pair(&self, pair: &TokenizedPair) -> Result<()> {
        let c = &self.config;
        if pair.target.is_empty() {
            return Err(Error::invalid("target sequence is empty"));
        }
        if let Some(&bad) = pair.source.iter().find(|&&s| s as usize >= c.src_vocab_size) {
            return Err(Error::VocabMismatch(format!(
                "source id {bad} >= source vocabulary size {}",
                c.src_vocab_size
            )));
        }
        if let Some(&bad) = pair.target.iter().find(|&&s| s as usize >= c.tgt_vocab_size) {
            return Err(Error::VocabMismatch(format!(
                "target id {bad} >= target vocabulary size {}",
                c.tgt_vocab_size
            )));
        }
        Ok(())
    }

    fn source_mean(&self, source: &[u32], out: &mut [f64]) {
        let e = self.config.embed_dim;
        out.iter_mut().for_each(|v| *v = 0.0);
        if source.is_empty() {
            return;
        }
        for &s in source {
            let row = &self.params.src_embed[s as usize * e..(s as usize + 1) * e];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w;
            }
        }
        let inv = 1.0 / source.len() as f64;
        out.iter_mut().for_each(|v| *v *= inv);
    }

    /// Target token conditioning slot `j` (0 = oldest) at position `t`.
    fn context_token(&self, prefix: &[u32], t: usize, j: usize) -> u32 {
        let k = self.config.context;
        // position t - k + j
        if t + j < k {
            BOS
        } else {
            prefix[t + j - k]
        }
    }

    /// Fills `s.x`, `s.h` and leaves log-probabilities in `s.logits`.
    /// `s.src_mean` must already hold the pooled source embedding.
    fn forward_position(&self, prefix: &[u32], t: usize, s: &mut Scratch) {
        let c = &self.config;
        let e = c.embed_dim;
        let d = c.input_dim();
        s.x[..e].copy_from_slice(&s.src_mean);
        for j in 0..c.context {
            let tok = self.context_token(prefix, t, j) as usize;
            s.x[e * (1 + j)..e * (2 + j)].copy_from_slice(&self.params.tgt_embed[tok * e..(tok + 1) * e]);
        }
        for hi in 0..c.hidden_dim {
            let row = &self.params.hidden_w[hi * d..(hi + 1) * d];
            let z: f64 = self.params.hidden_b[hi] + row.iter().zip(&s.x).map(|(w, x)| w * x).sum::<f64>();
            s.h[hi] = z.tanh();
        }
        let hd = c.hidden_dim;
        for v in 0..c.tgt_vocab_size {
            let row = &self.params.out_w[v * hd..(v + 1) * hd];
            s.logits[v] = self.params.out_b[v] + row.iter().zip(&s.h).map(|(w, h)| w * h).sum::<f64>();
        }
        log_softmax(&mut s.logits);
    }

    /// Natural-log probability of each target token given the source and the
    /// preceding target tokens. Returns exactly `pair.target.len()` values.
    pub fn log_prob(&self, pair: &TokenizedPair) -> Result<Vec<f64>> {
        self.check_pair(pair)?;
        let mut s = Scratch::new(&self.config);
        self.source_mean(&pair.source, &mut s.src_mean);
        Ok((0..pair.target.len())
            .map(|t| {
                self.forward_position(&pair.target, t, &mut s);
                s.logits[pair.target[t] as usize]
            })
            .collect())
    }

    /// Full log-distribution over the target vocabulary at each position.
    pub fn log_prob_distributions(&self, pair: &TokenizedPair) -> Result<Vec<Vec<f64>>> {
        self.check_pair(pair)?;
        let mut s = Scratch::new(&self.config);
        self.source_mean(&pair.source, &mut s.src_mean);
        Ok((0..pair.target.len())
            .map(|t| {
                self.forward_position(&pair.target, t, &mut s);
                s.logits.clone()
            })
            .collect())
    }

    /// Mean per-token cross-entropy over `pairs` (label smoothing per config).
    pub fn loss(&self, pairs: &[&TokenizedPair]) -> Result<f64> {
        let mut sum = 0.0;
        let mut tokens = 0usize;
        let eps = self.config.label_smoothing;
        let v = self.config.tgt_vocab_size as f64;
        for pair in pairs {
            let dists = self.log_prob_distributions(pair)?;
            tokens += dists.len();
            for (t, dist) in dists.iter().enumerate() {
                let y = pair.target[t] as usize;
                let mut l = -(1.0 - eps) * dist[y];
                if eps > 0.0 {
                    l -= eps / v * dist.iter().sum::<f64>();
                }
                sum += l;
            }
        }
        if tokens == 0 {
            return Err(Error::invalid("loss over zero tokens"));
        }
        Ok(sum / tokens as f64)
    }

    /// Mean token loss over `pairs` and its gradient with respect to every
    /// parameter.
    pub fn gradient(&self, pairs: &[&TokenizedPair]) -> Result<(f64, Params)> {
        let mut grad = Params::zeros(&self.config);
        let mut s = Scratch::new(&self.config);
        let (sum, tokens) = self.accumulate_gradient(pairs, &mut grad, &mut s)?;
        if tokens == 0 {
            return Err(Error::invalid("gradient over zero tokens"));
        }
        let inv = 1.0 / tokens as f64;
        for t in grad.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= inv);
        }
        Ok((sum * inv, grad))
    }

    /// Adds the gradient of the summed token loss into `grad`; returns
    /// (summed loss, token count).
    fn accumulate_gradient(
        &self,
        pairs: &[&TokenizedPair],
        grad: &mut Params,
        s: &mut Scratch,
    ) -> Result<(f64, usize)> {
        let c = &self.config;
        let e = c.embed_dim;
        let d = c.input_dim();
        let hd = c.hidden_dim;
        let vt = c.tgt_vocab_size;
        let eps = c.label_smoothing;
        let smooth = eps / vt as f64;
        let mut loss_sum = 0.0;
        let mut tokens = 0usize;
        let mut d_src_mean = vec![0.0; e];

        for pair in pairs {
            self.check_pair(pair)?;
            self.source_mean(&pair.source, &mut s.src_mean);
            d_src_mean.iter_mut().for_each(|v| *v = 0.0);

            for t in 0..pair.target.len() {
                self.forward_position(&pair.target, t, s);
                let y = pair.target[t] as usize;
                tokens += 1;
                loss_sum -= (1.0 - eps) * s.logits[y];
                if eps > 0.0 {
                    loss_sum -= smooth * s.logits.iter().sum::<f64>();
                }

                // d loss / d logits = softmax - smoothed one-hot; reuse logits
                for v in 0..vt {
                    let target = if v == y { 1.0 - eps + smooth } else { smooth };
                    s.logits[v] = s.logits[v].exp() - target;
                }

                s.dh.iter_mut().for_each(|v| *v = 0.0);
                for v in 0..vt {
                    let g = s.logits[v];
                    grad.out_b[v] += g;
                    let w_row = &self.params.out_w[v * hd..(v + 1) * hd];
                    let g_row = &mut grad.out_w[v * hd..(v + 1) * hd];
                    for k in 0..hd {
                        g_row[k] += g * s.h[k];
                        s.dh[k] += g * w_row[k];
                    }
                }

                s.dx.iter_mut().for_each(|v| *v = 0.0);
                for hi in 0..hd {
                    let dz = s.dh[hi] * (1.0 - s.h[hi] * s.h[hi]);
                    grad.hidden_b[hi] += dz;
                    let w_row = &self.params.hidden_w[hi * d..(hi + 1) * d];
                    let g_row = &mut grad.hidden_w[hi * d..(hi + 1) * d];
                    for k in 0..d {
                        g_row[k] += dz * s.x[k];
                        s.dx[k] += dz * w_row[k];
                    }
                }

                for (acc, &g) in d_src_mean.iter_mut().zip(&s.dx[..e]) {
                    *acc += g;
                }
                for j in 0..c.context {
                    let tok = self.context_token(&pair.target, t, j) as usize;
                    let g_row = &mut grad.tgt_embed[tok * e..(tok + 1) * e];
                    for (acc, &g) in g_row.iter_mut().zip(&s.dx[e * (1 + j)..e * (2 + j)]) {
                        *acc += g;
                    }
                }
            }

            if !pair.source.is_empty() {
                let inv = 1.0 / pair.source.len() as f64;
                for &src in &pair.source {
                    let g_row = &mut grad.src_embed[src as usize * e..(src as usize + 1) * e];
                    for (acc, &g) in g_row.iter_mut().zip(&d_src_mean) {
                        *acc += g * inv;
                    }
                }
            }
        }
        Ok((loss_sum, tokens))
    }

    /// Greedy decoding: argmax at every step, ties to the lowest id. Stops
    /// on EOS (not included in the output) or after `max_len` tokens.
    pub fn greedy_decode(&self, source: &[u32], max_len: usize) -> Vec<u32> {
        let mut s = Scratch::new(&self.config);
        self.source_mean(source, &mut s.src_mean);
        let mut out: Vec<u32> = Vec::with_capacity(max_len);
        while out.len() < max_len {
            let t = out.len();
            self.forward_position(&out, t, &mut s);
            let mut best = 0usize;
            for v in 1..s.logits.len() {
                if s.logits[v] > s.logits[best] {
                    best = v;
                }
            }
            if best as u32 == EOS {
                break;
            }
            out.push(best as u32);
        }
        out
    }
}

/// Frozen parameters after a given epoch (epoch 0 = initialisation).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot {
    epoch: u32,
    config_hash: u64,
    model: Model,
}

impl ModelSnapshot {
    pub fn new(epoch: u32, model: Model) -> Result<ModelSnapshot> {
        if !model.params.all_finite() {
            return Err(Error::invalid(format!(
                "snapshot for epoch {epoch} has non-finite parameters"
            )));
        }
        Ok(ModelSnapshot {
            epoch,
            config_hash: model.config.hash(),
            model,
        })
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn config_hash(&self) -> u64 {
        self.config_hash
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn params(&self) -> &Params {
        &self.model.params
    }

    pub fn log_prob(&self, pair: &TokenizedPair) -> Result<Vec<f64>> {
        self.model.log_prob(pair)
    }

    pub fn greedy_decode(&self, source: &[u32], max_len: usize) -> Vec<u32> {
        self.model.greedy_decode(source, max_len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-token training loss of each epoch, in order.
    pub epoch_losses: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    pub snapshot_epochs: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_snapshot: ModelSnapshot,
    pub snapshots: BTreeMap<u32, ModelSnapshot>,
    pub report: TrainReport,
}

struct Adam {
    m: Params,
    v: Params,
    step: i32,
}

/// Trains from a fresh initialisation. Each epoch reshuffles the full pair
/// order (ChaCha8 stream 1 of the seed) and walks it in mini-batches; the
/// loss is the token-averaged cross-entropy of the batch.
pub fn train(pairs: &[TokenizedPair], config: &ModelConfig, snapshot_epochs: &BTreeSet<u32>) -> Result<TrainOutcome> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("cannot train on an empty corpus"));
    }
    if let Some(&bad) = snapshot_epochs.iter().find(|&&e| e == 0 || e > config.epochs) {
        return Err(Error::invalid(format!(
            "snapshot epoch {bad} beyond training (epochs = {})",
            config.epochs
        )));
    }
    let mut model = Model::init(config.clone())?;
    for p in pairs {
        model.check_pair(p).map_err(|e| Error::Example {
            id: p.id,
            source: Box::new(e),
        })?;
    }

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut shuffle_rng = rng::stream(config.seed, 1);
    let mut grad = Params::zeros(config);
    let mut scratch = Scratch::new(config);
    let mut adam = match config.optimizer {
        OptimizerKind::Adam => Some(Adam {
            m: Params::zeros(config),
            v: Params::zeros(config),
            step: 0,
        }),
        OptimizerKind::Sgd => None,
    };

    let mut snapshots = BTreeMap::new();
    let mut report = TrainReport {
        epoch_losses: Vec::new(),
        epoch_seconds: Vec::new(),
        snapshot_epochs: snapshot_epochs.iter().copied().collect(),
    };

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        rng::shuffle(&mut order, &mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TokenizedPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            grad.fill(0.0);
            let (sum, tokens) = model.accumulate_gradient(&batch, &mut grad, &mut scratch)?;
            if !sum.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            epoch_loss += sum;
            epoch_tokens += tokens;
            let scale = 1.0 / tokens as f64;
            apply_update(&mut model.params, &grad, scale, config.learning_rate, adam.as_mut());
            if !model.params.all_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
        }
        report.epoch_losses.push(epoch_loss / epoch_tokens as f64);
        report.epoch_seconds.push(started.elapsed().as_secs_f64());
        log::debug!("epoch {epoch}: loss {:.6}", epoch_loss / epoch_tokens as f64);
        if snapshot_epochs.contains(&epoch) {
            snapshots.insert(epoch, ModelSnapshot::new(epoch, model.clone())?);
        }
    }
    let final_snapshot = ModelSnapshot::new(config.epochs, model)?;
    Ok(TrainOutcome {
        final_snapshot,
        snapshots,
        report,
    })
}

fn apply_update(params: &mut Params, grad: &Params, scale: f64, lr: f64, adam: Option<&mut Adam>) {
    match adam {
        None => {
            for (p, g) in params.tensors_mut().into_iter().zip(grad.tensors()) {
                for (w, &gi) in p.iter_mut().zip(g) {
                    *w -= lr * gi * scale;
                }
            }
        }
        Some(state) => {
            state.step += 1;
            let (b1, b2) = ADAM_BETAS;
            let c1 = 1.0 - b1.powi(state.step);
            let c2 = 1.0 - b2.powi(state.step);
            let tensors = params
                .tensors_mut()
                .into_iter()
                .zip(grad.tensors())
                .zip(state.m.tensors_mut())
                .zip(state.v.tensors_mut());
            for (((p, g), m), v) in tensors {
                for i in 0..p.len() {
                    let gi = g[i] * scale;
                    m[i] = b1 * m[i] + (1.0 - b1) * gi;
                    v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPSILON);
                }
            }
        }
    }
}
