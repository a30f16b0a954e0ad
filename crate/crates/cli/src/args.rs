use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use cat_prune::corpus::CorpusSource;
use cat_prune::model::OptimizerKind;
use cat_prune::pipeline::TrainSettings;

#[derive(Debug, Parser)]
#[command(
    name = "cat-prune",
    version,
    about = "Prune parallel corpora by perplexity trajectories across early checkpoints"
)]
pub struct Cli {
    /// JSON object of flag values (`{"epochs": 3, "snapshot-epochs": [1, 3]}`).
    /// Flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the scorer for a few epochs and write the per-example perplexity matrix.
    Score(ScoreArgs),
    /// Turn a score matrix or external score file into kept ids.
    Select(SelectArgs),
    /// Write the pairs listed in an index file.
    Subset(SubsetArgs),
    /// Length and lexical statistics for a corpus or subset.
    Analyze(AnalyzeArgs),
    /// Inject misaligned, copied and truncated targets.
    Noise(NoiseArgs),
    /// Corpus BLEU or chrF++, optionally with a paired bootstrap test.
    Eval(EvalArgs),
    /// Noise, score, select, retrain and decode in one go.
    E2e(E2eArgs),
    /// Generate a synthetic lexicon (or copy-task) corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Source side, one sentence per line.
    #[arg(long, requires = "tgt", conflicts_with = "tsv")]
    pub src: Option<PathBuf>,
    /// Target side, one sentence per line.
    #[arg(long, requires = "src")]
    pub tgt: Option<PathBuf>,
    /// Single file of `source<TAB>target` lines.
    #[arg(long)]
    pub tsv: Option<PathBuf>,
}

impl CorpusArgs {
    pub fn source(&self) -> anyhow::Result<CorpusSource> {
        match (&self.src, &self.tgt, &self.tsv) {
            (Some(s), Some(t), None) => Ok(CorpusSource::Parallel {
                source: s.clone(),
                target: t.clone(),
            }),
            (None, None, Some(p)) => Ok(CorpusSource::Tsv(p.clone())),
            _ => Err(cat_prune::Error::invalid("give either --src and --tgt, or --tsv").into()),
        }
    }
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 5)]
    pub epochs: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden_dim: usize,
    /// Previous target tokens the model conditions on.
    #[arg(long, default_value_t = 2)]
    pub context: usize,
    #[arg(long, value_parser = ["sgd", "adam"], default_value = "sgd")]
    pub optimizer: String,
    /// Defaults to 0.1 for sgd and 5e-4 for adam.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.0)]
    pub label_smoothing: f64,
    #[arg(long, default_value_t = cat_prune::pipeline::DEFAULT_VOCAB_SIZE)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 1)]
    pub min_freq: usize,
    /// Tokens kept per sentence before EOS.
    #[arg(long, default_value_t = cat_prune::corpus::DEFAULT_MAX_LEN)]
    pub max_len: usize,
}

impl ModelArgs {
    pub fn settings(&self) -> TrainSettings {
        TrainSettings {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            context: self.context,
            seed: self.seed,
            optimizer: if self.optimizer == "adam" {
                OptimizerKind::Adam
            } else {
                OptimizerKind::Sgd
            },
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            label_smoothing: self.label_smoothing,
            vocab_size: self.vocab_size,
            min_freq: self.min_freq,
            max_len: self.max_len,
        }
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Epochs after which to snapshot and score.
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    pub snapshot_epochs: Vec<u32>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Score matrix written by `score`.
    #[arg(long, conflicts_with = "ext_scores")]
    pub scores: Option<PathBuf>,
    /// External `id<TAB>score` file.
    #[arg(long)]
    pub ext_scores: Option<PathBuf>,
    /// Corpus size the external scores must cover; defaults to the number of rows.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_parser = ["higher", "lower", "band"], default_value = "higher")]
    pub direction: String,
    #[arg(long, value_parser = ["cat-diff", "cat-var", "random", "ext-top", "ext-band"])]
    pub method: String,
    /// Fraction kept, in (0, 1].
    #[arg(long)]
    pub keep: f64,
    /// cat-diff: early,late (default 1,5). cat-var: two or more (default 1,3,5).
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Option<Vec<u32>>,
    /// Required for random.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Index file, one kept id per line.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the ranking keys to `<out>.keys.tsv`.
    #[arg(long)]
    pub emit_keys: bool,
}

#[derive(Debug, Args)]
pub struct SubsetArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub indices: PathBuf,
    /// Output prefix; writes `<out>.src`/`<out>.tgt` (or `<out>.tsv`) and `<out>.linemap.tsv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub indices: Option<PathBuf>,
    /// Score matrix to join against sentence lengths.
    #[arg(long, conflicts_with = "keys")]
    pub scores: Option<PathBuf>,
    /// `id<TAB>key` file (from `select --emit-keys`) to join against lengths.
    #[arg(long)]
    pub keys: Option<PathBuf>,
    /// Per-pair language labels, one per line.
    #[arg(long)]
    pub lid: Option<PathBuf>,
    #[arg(long, default_value_t = cat_prune::analysis::DEFAULT_RARE_THRESHOLD)]
    pub rare_threshold: u64,
    #[arg(long, default_value_t = cat_prune::analysis::DEFAULT_BIN_WIDTH)]
    pub bin_width: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NoiseFlags {
    #[arg(long, default_value_t = 0.0)]
    pub misaligned: f64,
    #[arg(long, default_value_t = 0.0)]
    pub copied: f64,
    #[arg(long, default_value_t = 0.0)]
    pub truncated: f64,
}

impl NoiseFlags {
    pub fn fractions(&self) -> cat_prune::eval::NoiseFractions {
        cat_prune::eval::NoiseFractions {
            misaligned: self.misaligned,
            copied: self.copied,
            truncated: self.truncated,
        }
    }
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub noise: NoiseFlags,
    #[arg(long)]
    pub seed: u64,
    /// Output prefix for the noisy corpus, `<out>.noise.json` and `<out>.flags.tsv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long)]
    pub r#ref: PathBuf,
    #[arg(long, value_parser = ["bleu", "chrfpp"], default_value = "bleu")]
    pub metric: String,
    /// System to compare against with paired bootstrap resampling.
    #[arg(long)]
    pub baseline_hyp: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct E2eArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub noise: NoiseFlags,
    #[arg(long, value_delimiter = ',', default_value = "cat-diff,cat-var,random")]
    pub methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5")]
    pub keeps: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    pub snapshot_epochs: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    pub diff_checkpoints: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    pub var_checkpoints: Vec<u32>,
    /// Trailing fraction of the clean corpus held out for decoding.
    #[arg(long, default_value_t = cat_prune::pipeline::DEFAULT_HELDOUT_FRACTION)]
    pub heldout: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 200)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 4)]
    pub min_len: usize,
    #[arg(long, default_value_t = 12)]
    pub max_len: usize,
    #[arg(long, default_value_t = 4)]
    pub branching: usize,
    /// Target = source.
    #[arg(long)]
    pub copy: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write one TSV file instead of `.src`/`.tgt`.
    #[arg(long)]
    pub tsv: bool,
    /// Output prefix.
    #[arg(long)]
    pub out: PathBuf,
}
