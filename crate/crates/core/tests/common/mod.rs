//! Oracles and fixtures shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::collections::BTreeSet;

use cat_prune::corpus::{TokenizedPair, EOS};
use cat_prune::model::{Model, ModelConfig, OptimizerKind, Params};
use cat_prune::pipeline::TrainSettings;
use cat_prune::rng::{self, ChaCha8Rng};
use cat_prune::scoring::{CheckpointLabel, ScoreMatrix};

/// Training settings used wherever a test needs the scorer to actually learn
/// the synthetic lexicon within five epochs. The SGD defaults barely move in
/// that budget; these were picked by a pilot run.
pub fn desk_settings() -> TrainSettings {
    TrainSettings {
        optimizer: OptimizerKind::Adam,
        learning_rate: Some(0.005),
        batch_size: 32,
        ..TrainSettings::default()
    }
}

/// Parameters for the frozen forward-pass check: the j-th entry of the
/// concatenated tensors is ((7 j) mod 11 − 5) / 8.
pub fn oracle_model() -> Model {
    let mut config = ModelConfig::new(4, 4);
    config.embed_dim = 2;
    config.hidden_dim = 3;
    config.context = 2;
    let mut model = Model::zeros(config).unwrap();
    let mut j = 0i64;
    for t in model.params.tensors_mut() {
        for v in t.iter_mut() {
            *v = ((7 * j) % 11 - 5) as f64 / 8.0;
            j += 1;
        }
    }
    model
}

pub fn oracle_pair() -> TokenizedPair {
    TokenizedPair {
        id: 0,
        source: vec![3, 1, 2],
        target: vec![3, 0, 1, EOS],
    }
}

/// Output of tests/oracles/forward_pass.py.
pub const ORACLE_LOG_PROBS: [f64; 4] = [
    -2.5644075485903848,
    -1.594219709651362,
    -0.8000393327097461,
    -1.5293382399593578,
];

pub fn micro_corpus() -> Vec<TokenizedPair> {
    vec![
        TokenizedPair {
            id: 0,
            source: vec![4, 5],
            target: vec![4, 6, EOS],
        },
        TokenizedPair {
            id: 1,
            source: vec![6],
            target: vec![5, EOS],
        },
        TokenizedPair {
            id: 2,
            source: vec![5, 5, 4],
            target: vec![6, 4, 5, EOS],
        },
    ]
}

/// Largest relative error between analytic and central-difference gradients,
/// with the denominator floored at 1e-6 so entries that are zero on both
/// sides do not divide by zero.
pub fn gradient_check(model: &Model, pairs: &[TokenizedPair], h: f64) -> (f64, usize) {
    let refs: Vec<&TokenizedPair> = pairs.iter().collect();
    let (_, analytic) = model.gradient(&refs).unwrap();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut probe = model.clone();
    for (ti, grad) in analytic.tensors().iter().enumerate() {
        for i in 0..grad.len() {
            let orig = model.params.tensors()[ti][i];
            probe.params.tensors_mut()[ti][i] = orig + h;
            let up = probe.loss(&refs).unwrap();
            probe.params.tensors_mut()[ti][i] = orig - h;
            let down = probe.loss(&refs).unwrap();
            probe.params.tensors_mut()[ti][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (worst, checked)
}

pub fn random_model(config: ModelConfig, seed: u64) -> Model {
    let mut model = Model::zeros(config).unwrap();
    let mut r = rng::seeded(seed);
    for t in model.params.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng::uniform(&mut r, -0.5, 0.5);
        }
    }
    model
}

pub fn params_equal(a: &Params, b: &Params) -> bool {
    a.tensors()
        .iter()
        .zip(b.tensors())
        .all(|(x, y)| x.len() == y.len() && x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()))
}

/// Perplexity straight from the definition, summing in reverse order so the
/// reduction differs from the toolkit's.
pub fn brute_perplexity(log_probs: &[f64]) -> f64 {
    let mut s = 0.0;
    for lp in log_probs.iter().rev() {
        s += -lp;
    }
    (s / log_probs.len() as f64).min(30.0).exp()
}

pub fn brute_keep(p: f64, n: usize) -> usize {
    // half-up on the decimal value of p·N, with the same guard the toolkit uses
    let k = (p * n as f64 + 0.5 + 1e-9).floor() as usize;
    k.max(1).min(n)
}

/// Full sort of (key, id) pairs with the stated tie-break, then the window.
pub fn brute_top(keys: &[f64], k: usize, descending: bool) -> BTreeSet<usize> {
    let mut v: Vec<(f64, usize)> = keys.iter().copied().zip(0..).collect();
    v.sort_by(|a, b| {
        let o = a.0.partial_cmp(&b.0).unwrap();
        let o = if descending { o.reverse() } else { o };
        o.then(a.1.cmp(&b.1))
    });
    v[..k].iter().map(|x| x.1).collect()
}

pub fn brute_band(keys: &[f64], k: usize) -> BTreeSet<usize> {
    let mut v: Vec<(f64, usize)> = keys.iter().copied().zip(0..).collect();
    v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let start = (keys.len() - k) / 2;
    v[start..start + k].iter().map(|x| x.1).collect()
}

pub fn brute_variance(row: &[f64]) -> f64 {
    let mean = row.iter().sum::<f64>() / row.len() as f64;
    row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / row.len() as f64
}

/// Random matrix with `c` epoch columns (1..=c). With `ties`, every cell of
/// a column holds the same value.
pub fn random_matrix(r: &mut ChaCha8Rng, n: usize, c: usize, ties: bool) -> ScoreMatrix {
    let cols = (1..=c as u32)
        .map(|e| {
            let fixed = rng::uniform(r, 0.0, 6.0);
            let col = (0..n)
                .map(|_| {
                    if ties {
                        fixed
                    } else {
                        // coarse grid so that ties also occur naturally
                        (rng::below(r, 40) as f64) * 0.15
                    }
                })
                .collect();
            (CheckpointLabel::Epoch(e), col)
        })
        .collect();
    ScoreMatrix::from_nll_columns(cols).unwrap()
}

pub fn ppl_rows(m: &ScoreMatrix, epochs: &[u32]) -> Vec<Vec<f64>> {
    let cols: Vec<Vec<f64>> = epochs
        .iter()
        .map(|&e| m.ppl_column(CheckpointLabel::Epoch(e)).unwrap())
        .collect();
    (0..m.n()).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}
