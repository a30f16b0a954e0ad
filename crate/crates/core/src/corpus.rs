//! Parallel corpus ingestion, vocabularies, tokenization and subset output.
//!
//! Input is either two line-aligned files (source, target) or a single TSV
//! with `source<TAB>target` per line. Lines may end in LF or CRLF; output
//! always uses LF. Pairs with a blank side are dropped and counted, and the
//! surviving pairs receive contiguous ids in file order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Default cap on source and target tokens per example.
pub const DEFAULT_MAX_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub id: usize,
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

impl SentencePair {
    pub fn side(&self, side: Side) -> &str {
        match side {
            Side::Source => &self.source,
            Side::Target => &self.target,
        }
    }
}

/// Where a corpus lives on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusSource {
    Parallel { source: PathBuf, target: PathBuf },
    Tsv(PathBuf),
}

impl CorpusSource {
    pub fn paths(&self) -> Vec<&Path> {
        match self {
            CorpusSource::Parallel { source, target } => vec![source, target],
            CorpusSource::Tsv(p) => vec![p],
        }
    }

    pub fn open(&self) -> Result<PairReader<BufReader<File>>> {
        let open = |p: &Path| File::open(p).map(BufReader::new).map_err(|e| Error::io(p, e));
        Ok(match self {
            CorpusSource::Parallel { source, target } => PairReader::parallel(
                open(source)?,
                open(target)?,
                source.display().to_string(),
                target.display().to_string(),
            ),
            CorpusSource::Tsv(p) => PairReader::tsv(open(p)?, p.display().to_string()),
        })
    }
}

/// Counts available once a reader is exhausted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadSummary {
    pub total: usize,
    pub dropped: usize,
}

impl LoadSummary {
    pub fn kept(&self) -> usize {
        self.total - self.dropped
    }
}

enum Layout<R> {
    Parallel {
        source: R,
        target: R,
        source_label: String,
        target_label: String,
    },
    Tsv {
        input: R,
        label: String,
    },
}

/// Single-pass streaming reader over a parallel corpus.
///
/// Holds one line per side in memory at a time. After iteration completes,
/// [`PairReader::summary`] reports how many lines were seen and dropped.
pub struct PairReader<R> {
    layout: Layout<R>,
    line: usize,
    next_id: usize,
    dropped: usize,
    last_line: usize,
    done: bool,
    buf_a: Vec<u8>,
    buf_b: Vec<u8>,
}

/// Reads one line into `buf` without its terminator. Returns false at EOF.
fn read_raw_line<R: BufRead>(r: &mut R, buf: &mut Vec<u8>, label: &str) -> Result<bool> {
    buf.clear();
    let n = r.read_until(b'\n', buf).map_err(|e| Error::io(label, e))?;
    if n == 0 {
        return Ok(false);
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
        if buf.last() == Some(&b'\r') {
            buf.pop();
        }
    }
    Ok(true)
}

fn decode(buf: &[u8], label: &str, line: usize) -> Result<String> {
    let text = std::str::from_utf8(buf).map_err(|_| Error::Utf8 {
        path: label.to_string(),
        line,
    })?;
    if text.contains('\r') {
        return Err(Error::malformed(label, line, "embedded carriage return"));
    }
    Ok(text.to_string())
}

fn count_remaining<R: BufRead>(r: &mut R, buf: &mut Vec<u8>, label: &str) -> Result<usize> {
    let mut n = 0;
    while read_raw_line(r, buf, label)? {
        n += 1;
    }
    Ok(n)
}

impl<R: BufRead> PairReader<R> {
    pub fn parallel(source: R, target: R, source_label: String, target_label: String) -> Self {
        Self::new(Layout::Parallel {
            source,
            target,
            source_label,
            target_label,
        })
    }

    pub fn tsv(input: R, label: String) -> Self {
        Self::new(Layout::Tsv { input, label })
    }

    fn new(layout: Layout<R>) -> Self {
        PairReader {
            layout,
            line: 0,
            next_id: 0,
            dropped: 0,
            last_line: 0,
            done: false,
            buf_a: Vec::new(),
            buf_b: Vec::new(),
        }
    }

    /// Valid once the iterator has returned `None`.
    pub fn summary(&self) -> LoadSummary {
        LoadSummary {
            total: self.line,
            dropped: self.dropped,
        }
    }

    /// 1-based input line number of the most recently yielded pair.
    pub fn line_number(&self) -> usize {
        self.last_line
    }

    /// Next raw (source, target) line, or None at end of input.
    fn next_raw(&mut self) -> Result<Option<(String, String)>> {
        let line = self.line + 1;
        match &mut self.layout {
            Layout::Parallel {
                source,
                target,
                source_label,
                target_label,
            } => {
                let has_src = read_raw_line(source, &mut self.buf_a, source_label)?;
                let has_tgt = read_raw_line(target, &mut self.buf_b, target_label)?;
                match (has_src, has_tgt) {
                    (false, false) => Ok(None),
                    (true, false) => {
                        let extra = 1 + count_remaining(source, &mut self.buf_a, source_label)?;
                        Err(Error::LineCountMismatch {
                            source_lines: self.line + extra,
                            target_lines: self.line,
                        })
                    }
                    (false, true) => {
                        let extra = 1 + count_remaining(target, &mut self.buf_b, target_label)?;
                        Err(Error::LineCountMismatch {
                            source_lines: self.line,
                            target_lines: self.line + extra,
                        })
                    }
                    (true, true) => {
                        let s = decode(&self.buf_a, source_label, line)?;
                        let t = decode(&self.buf_b, target_label, line)?;
                        for (text, label) in [(&s, &*source_label), (&t, &*target_label)] {
                            if text.contains('\t') && !text.trim().is_empty() {
                                return Err(Error::malformed(label, line, "TAB inside sentence"));
                            }
                        }
                        self.line = line;
                        Ok(Some((s, t)))
                    }
                }
            }
            Layout::Tsv { input, label } => {
                if !read_raw_line(input, &mut self.buf_a, label)? {
                    return Ok(None);
                }
                let text = decode(&self.buf_a, label, line)?;
                self.line = line;
                if text.trim().is_empty() {
                    return Ok(Some((String::new(), String::new())));
                }
                let mut fields = text.split('\t');
                match (fields.next(), fields.next(), fields.next()) {
                    (Some(s), Some(t), None) => Ok(Some((s.to_string(), t.to_string()))),
                    _ => Err(Error::malformed(label, line, "expected exactly one TAB")),
                }
            }
        }
    }
}

impl<R: BufRead> Iterator for PairReader<R> {
    type Item = Result<SentencePair>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            match self.next_raw() {
                Ok(None) => {
                    self.done = true;
                    return None;
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
                Ok(Some((source, target))) => {
                    if source.trim().is_empty() || target.trim().is_empty() {
                        self.dropped += 1;
                        continue;
                    }
                    self.last_line = self.line;
                    let id = self.next_id;
                    self.next_id += 1;
                    return Some(Ok(SentencePair { id, source, target }));
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Parallel,
    Tsv,
}

/// A fully loaded corpus with the original line number of every pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub pairs: Vec<SentencePair>,
    /// `lines[id]` is the 1-based input line the pair came from.
    pub lines: Vec<usize>,
    pub format: CorpusFormat,
    pub summary: LoadSummary,
}

impl Corpus {
    pub fn load(source: &CorpusSource) -> Result<Corpus> {
        let format = match source {
            CorpusSource::Parallel { .. } => CorpusFormat::Parallel,
            CorpusSource::Tsv(_) => CorpusFormat::Tsv,
        };
        Self::from_reader(source.open()?, format)
    }

    pub fn from_reader<R: BufRead>(mut reader: PairReader<R>, format: CorpusFormat) -> Result<Corpus> {
        let mut pairs = Vec::new();
        let mut lines = Vec::new();
        while let Some(pair) = reader.next() {
            pairs.push(pair?);
            lines.push(reader.line_number());
        }
        let summary = reader.summary();
        if summary.dropped > 0 {
            log::warn!(
                "dropped {} of {} pairs with an empty side",
                summary.dropped,
                summary.total
            );
        }
        Ok(Corpus {
            pairs,
            lines,
            format,
            summary,
        })
    }

    /// Builds an in-memory corpus from (source, target) strings; ids follow order.
    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, S)>) -> Corpus {
        let pairs: Vec<SentencePair> = pairs
            .into_iter()
            .enumerate()
            .map(|(id, (s, t))| SentencePair {
                id,
                source: s.into(),
                target: t.into(),
            })
            .collect();
        let n = pairs.len();
        Corpus {
            pairs,
            lines: (1..=n).collect(),
            format: CorpusFormat::Parallel,
            summary: LoadSummary { total: n, dropped: 0 },
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs with the given ids, renumbered from 0 in the given order.
    pub fn restrict(&self, ids: &[usize]) -> Result<Corpus> {
        check_indices(ids, self.len())?;
        let pairs = ids
            .iter()
            .enumerate()
            .map(|(new_id, &i)| SentencePair {
                id: new_id,
                ..self.pairs[i].clone()
            })
            .collect();
        Ok(Corpus {
            pairs,
            lines: ids.iter().map(|&i| self.lines[i]).collect(),
            format: self.format,
            summary: LoadSummary {
                total: ids.len(),
                dropped: 0,
            },
        })
    }
}

/// Ascending, unique, and in range.
pub fn check_indices(indices: &[usize], n: usize) -> Result<()> {
    for (pos, &i) in indices.iter().enumerate() {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        if pos > 0 && indices[pos - 1] >= i {
            return Err(Error::invalid(format!(
                "indices must be strictly ascending (saw {} then {})",
                indices[pos - 1],
                i
            )));
        }
    }
    Ok(())
}

/// Files produced by [`write_subset`], all derived from one prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetOutput {
    pub prefix: PathBuf,
    pub format: CorpusFormat,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

impl SubsetOutput {
    pub fn data_paths(&self) -> Vec<PathBuf> {
        match self.format {
            CorpusFormat::Parallel => vec![with_suffix(&self.prefix, ".src"), with_suffix(&self.prefix, ".tgt")],
            CorpusFormat::Tsv => vec![with_suffix(&self.prefix, ".tsv")],
        }
    }

    pub fn linemap_path(&self) -> PathBuf {
        with_suffix(&self.prefix, ".linemap.tsv")
    }

    /// Where the written subset can be read back from.
    pub fn as_source(&self) -> CorpusSource {
        let mut paths = self.data_paths();
        match self.format {
            CorpusFormat::Parallel => {
                let target = paths.pop().unwrap();
                let source = paths.pop().unwrap();
                CorpusSource::Parallel { source, target }
            }
            CorpusFormat::Tsv => CorpusSource::Tsv(paths.pop().unwrap()),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Writes the pairs at `indices` (ascending) in the corpus' own format, plus a
/// `<prefix>.linemap.tsv` sidecar of `original_line<TAB>id` rows.
pub fn write_subset(corpus: &Corpus, indices: &[usize], out: &SubsetOutput) -> Result<Vec<PathBuf>> {
    check_indices(indices, corpus.len())?;
    if indices.is_empty() {
        log::warn!("writing an empty subset to {}", out.prefix.display());
    }
    let paths = out.data_paths();
    let mut writers = paths.iter().map(|p| create(p)).collect::<Result<Vec<_>>>()?;
    let linemap_path = out.linemap_path();
    let mut linemap = create(&linemap_path)?;
    for &i in indices {
        let pair = &corpus.pairs[i];
        let res = match out.format {
            CorpusFormat::Parallel => {
                writeln!(writers[0], "{}", pair.source).and_then(|_| writeln!(writers[1], "{}", pair.target))
            }
            CorpusFormat::Tsv => writeln!(writers[0], "{}\t{}", pair.source, pair.target),
        };
        res.map_err(|e| Error::io(&out.prefix, e))?;
        writeln!(linemap, "{}\t{}", corpus.lines[i], pair.id).map_err(|e| Error::io(&linemap_path, e))?;
    }
    for (w, p) in writers.iter_mut().zip(&paths) {
        w.flush().map_err(|e| Error::io(p, e))?;
    }
    linemap.flush().map_err(|e| Error::io(&linemap_path, e))?;
    let mut all = paths;
    all.push(linemap_path);
    Ok(all)
}

/// Token ↔ id map with four reserved ids (PAD, BOS, EOS, UNK).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Counts whitespace tokens, orders them by (frequency desc, token asc),
    /// drops those below `min_freq` and truncates to `max_size` entries
    /// including the reserved ones.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize, min_freq: usize) -> Result<Vocabulary> {
        if max_size < 5 {
            return Err(Error::invalid(format!(
                "vocabulary max_size must be >= 5, got {max_size}"
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut any = false;
        for text in texts {
            any = true;
            for tok in text.split_whitespace() {
                if !RESERVED.contains(&tok) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        if !any {
            return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_freq).collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - RESERVED.len());
        if ranked.is_empty() {
            return Err(Error::invalid(format!("no token reaches min_freq {min_freq}")));
        }
        Ok(Self::from_tokens(
            RESERVED
                .iter()
                .map(|s| s.to_string())
                .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
                .collect(),
        ))
    }

    fn from_tokens(tokens: Vec<String>) -> Vocabulary {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Joins ids back into text. Reserved ids other than UNK are skipped.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&i| i == UNK || i as usize >= RESERVED.len())
            .filter_map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line, in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        for t in &self.tokens {
            writeln!(w, "{t}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < 5 || tokens[..4] != RESERVED {
            return Err(Error::Format {
                path: path.display().to_string(),
                message: "not a vocabulary file".into(),
            });
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::Format {
                path: path.display().to_string(),
                message: "duplicate token".into(),
            });
        }
        Ok(vocab)
    }
}

pub fn build_vocab(corpus: &Corpus, side: Side, max_size: usize, min_freq: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
    }
    Vocabulary::build(corpus.pairs.iter().map(|p| p.side(side)), max_size, min_freq)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedPair {
    pub id: usize,
    pub source: Vec<u32>,
    /// Ends with EOS.
    pub target: Vec<u32>,
}

/// Whitespace tokenizer over a pair of vocabularies.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    pub source_vocab: Vocabulary,
    pub target_vocab: Vocabulary,
    pub max_len: usize,
}

impl Tokenizer {
    pub fn new(source_vocab: Vocabulary, target_vocab: Vocabulary, max_len: usize) -> Self {
        Tokenizer {
            source_vocab,
            target_vocab,
            max_len,
        }
    }

    pub fn encode_source(&self, text: &str) -> Vec<u32> {
        text.split_whitespace()
            .take(self.max_len)
            .map(|t| self.source_vocab.id(t))
            .collect()
    }

    pub fn encode_target(&self, text: &str) -> Vec<u32> {
        let mut ids: Vec<u32> = text
            .split_whitespace()
            .take(self.max_len)
            .map(|t| self.target_vocab.id(t))
            .collect();
        ids.push(EOS);
        ids
    }

    pub fn tokenize(&self, pair: &SentencePair) -> TokenizedPair {
        TokenizedPair {
            id: pair.id,
            source: self.encode_source(&pair.source),
            target: self.encode_target(&pair.target),
        }
    }

    pub fn tokenize_corpus(&self, corpus: &Corpus) -> Vec<TokenizedPair> {
        corpus.pairs.iter().map(|p| self.tokenize(p)).collect()
    }
}
