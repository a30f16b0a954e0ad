//! Synthetic corruption of a clean corpus, and how much of it a selection kept.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::rng;
use crate::scoring::write_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFlag {
    Clean,
    /// Target belongs to another source (targets deranged among the flagged pairs).
    Misaligned,
    /// Target replaced by the source.
    Copied,
    /// Target cut to its first ⌈T/2⌉ tokens.
    Truncated,
}

impl NoiseFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseFlag::Clean => "clean",
            NoiseFlag::Misaligned => "misaligned",
            NoiseFlag::Copied => "copied",
            NoiseFlag::Truncated => "truncated",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseFractions {
    pub misaligned: f64,
    pub copied: f64,
    pub truncated: f64,
}

impl NoiseFractions {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("misaligned", self.misaligned),
            ("copied", self.copied),
            ("truncated", self.truncated),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid(format!("{name} fraction {f} outside [0, 1]")));
            }
        }
        if self.misaligned + self.copied + self.truncated > 1.0 + 1e-12 {
            return Err(Error::invalid("noise fractions sum to more than 1"));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.misaligned == 0.0 && self.copied == 0.0 && self.truncated == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseManifest {
    pub fractions: NoiseFractions,
    pub seed: u64,
    /// One flag per corpus id.
    pub flags: Vec<NoiseFlag>,
}

impl NoiseManifest {
    pub fn count(&self, flag: NoiseFlag) -> usize {
        self.flags.iter().filter(|&&f| f == flag).count()
    }

    /// `id<TAB>flag` rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tflag\n");
        for (i, f) in self.flags.iter().enumerate() {
            out.push_str(&format!("{i}\t{}\n", f.as_str()));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<NoiseManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// ChaCha8 stream for noise draws. Kept apart from stream 0, which random
/// selection uses, so the same seed does not make the two line up.
pub const NOISE_STREAM: u64 = 7;

fn round_half_up(f: f64, n: usize) -> usize {
    (f * n as f64 + 0.5 + 1e-9).floor() as usize
}

/// Corrupts `round_half_up(f·N)` pairs per noise type, chosen by a seeded
/// shuffle on [`NOISE_STREAM`]; ids and the clean pairs are left untouched.
pub fn inject_noise(corpus: &Corpus, fractions: NoiseFractions, seed: u64) -> Result<(Corpus, NoiseManifest)> {
    fractions.validate()?;
    let n = corpus.len();
    let mut remaining = n;
    let mut take = |f: f64| {
        let c = round_half_up(f, n).min(remaining);
        remaining -= c;
        c
    };
    let n_mis = take(fractions.misaligned);
    let n_copy = take(fractions.copied);
    let n_trunc = take(fractions.truncated);
    if n_mis == 1 {
        return Err(Error::invalid(
            "cannot misalign a single pair (no derangement of one element)",
        ));
    }

    let mut r = rng::stream(seed, NOISE_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut order, &mut r);

    let mut flags = vec![NoiseFlag::Clean; n];
    let mut noisy = corpus.clone();

    let mut mis: Vec<usize> = order[..n_mis].to_vec();
    mis.sort_unstable();
    let mut donors = mis.clone();
    rng::sattolo(&mut donors, &mut r);
    for (&id, &donor) in mis.iter().zip(&donors) {
        noisy.pairs[id].target = corpus.pairs[donor].target.clone();
        flags[id] = NoiseFlag::Misaligned;
    }
    for &id in &order[n_mis..n_mis + n_copy] {
        noisy.pairs[id].target = corpus.pairs[id].source.clone();
        flags[id] = NoiseFlag::Copied;
    }
    for &id in &order[n_mis + n_copy..n_mis + n_copy + n_trunc] {
        let toks: Vec<&str> = corpus.pairs[id].target.split_whitespace().collect();
        noisy.pairs[id].target = toks[..toks.len().div_ceil(2)].join(" ");
        flags[id] = NoiseFlag::Truncated;
    }
    Ok((noisy, NoiseManifest { fractions, seed, flags }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeRetention {
    pub total: usize,
    pub removed: usize,
    /// `removed / total`, absent when the type never occurs.
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retention {
    /// |kept ∩ clean| / |kept|
    pub clean_precision: f64,
    /// |removed ∩ noisy| / |noisy|, absent when nothing is noisy.
    pub noise_recall: Option<f64>,
    pub per_type: BTreeMap<NoiseFlag, TypeRetention>,
}

pub fn retention_metrics(kept: &[usize], manifest: &NoiseManifest) -> Result<Retention> {
    if kept.is_empty() {
        return Err(Error::EmptySelection);
    }
    let n = manifest.flags.len();
    crate::corpus::check_indices(kept, n)?;
    let mut is_kept = vec![false; n];
    for &i in kept {
        is_kept[i] = true;
    }
    let clean_kept = kept.iter().filter(|&&i| manifest.flags[i] == NoiseFlag::Clean).count();
    let mut per_type = BTreeMap::new();
    let (mut noisy, mut noisy_removed) = (0, 0);
    for flag in [NoiseFlag::Misaligned, NoiseFlag::Copied, NoiseFlag::Truncated] {
        let ids: Vec<usize> = (0..n).filter(|&i| manifest.flags[i] == flag).collect();
        let removed = ids.iter().filter(|&&i| !is_kept[i]).count();
        noisy += ids.len();
        noisy_removed += removed;
        per_type.insert(
            flag,
            TypeRetention {
                total: ids.len(),
                removed,
                recall: (!ids.is_empty()).then(|| removed as f64 / ids.len() as f64),
            },
        );
    }
    Ok(Retention {
        clean_precision: clean_kept as f64 / kept.len() as f64,
        noise_recall: (noisy > 0).then(|| noisy_removed as f64 / noisy as f64),
        per_type,
    })
}
