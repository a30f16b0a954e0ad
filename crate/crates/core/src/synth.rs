//! Synthetic bitext with a known, learnable translation.
//!
//! Sources are walks over a sparse random successor graph on `vocab_size`
//! words, so local context is informative. Each source word maps to exactly
//! one target word through a fixed random bijection, and targets keep the
//! source word order. The copy task is the same corpus with the identity map.

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconConfig {
    pub pairs: usize,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Successors per word in the source walk.
    pub branching: usize,
    /// Target = source, over one shared word list.
    pub copy: bool,
    pub seed: u64,
}

impl Default for LexiconConfig {
    fn default() -> Self {
        LexiconConfig {
            pairs: 5000,
            vocab_size: 200,
            min_len: 4,
            max_len: 12,
            branching: 4,
            copy: false,
            seed: 0,
        }
    }
}

impl LexiconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairs == 0 || self.vocab_size < 2 || self.branching == 0 {
            return Err(Error::invalid(
                "lexicon corpus needs pairs ≥ 1, vocab_size ≥ 2, branching ≥ 1",
            ));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::invalid("lexicon corpus needs 1 ≤ min_len ≤ max_len"));
        }
        Ok(())
    }
}

/// The generated corpus and its word mapping (`mapping[i]` is the target index of source word i).
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub corpus: Corpus,
    pub mapping: Vec<usize>,
}

fn source_word(i: usize) -> String {
    format!("s{i}")
}

fn target_word(i: usize, copy: bool) -> String {
    if copy {
        source_word(i)
    } else {
        format!("t{i}")
    }
}

pub fn lexicon_corpus(config: &LexiconConfig) -> Result<Lexicon> {
    config.validate()?;
    let v = config.vocab_size;
    let mut r = rng::seeded(config.seed);

    let mut mapping: Vec<usize> = (0..v).collect();
    if !config.copy {
        rng::shuffle(&mut mapping, &mut r);
    }
    let successors: Vec<Vec<usize>> = (0..v)
        .map(|_| {
            (0..config.branching)
                .map(|_| rng::below(&mut r, v as u64) as usize)
                .collect()
        })
        .collect();

    let span = (config.max_len - config.min_len + 1) as u64;
    let mut pairs = Vec::with_capacity(config.pairs);
    for _ in 0..config.pairs {
        let len = config.min_len + rng::below(&mut r, span) as usize;
        let mut w = rng::below(&mut r, v as u64) as usize;
        let mut words = Vec::with_capacity(len);
        for step in 0..len {
            if step > 0 {
                let next = &successors[w];
                w = next[rng::below(&mut r, next.len() as u64) as usize];
            }
            words.push(w);
        }
        let source = words.iter().map(|&w| source_word(w)).collect::<Vec<_>>().join(" ");
        let target = words
            .iter()
            .map(|&w| target_word(mapping[w], config.copy))
            .collect::<Vec<_>>()
            .join(" ");
        pairs.push((source, target));
    }
    Ok(Lexicon {
        corpus: Corpus::from_pairs(pairs),
        mapping,
    })
}
