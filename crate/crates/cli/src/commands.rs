use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde_json::json;

use cat_prune::analysis::{corpus_report, matrix_columns, score_length_join, AnalysisConfig};
use cat_prune::checkpoint;
use cat_prune::corpus::{write_subset, Corpus, CorpusFormat, SubsetOutput};
use cat_prune::eval::{inject_noise, paired_bootstrap, MetricKind};
use cat_prune::manifest::{sidecar_path, RunManifest};
use cat_prune::pipeline::{run_e2e, train_and_score, E2eConfig, E2eMethod};
use cat_prune::scoring::{load_external_scores, read_matrix, write_matrix, Direction};
use cat_prune::selection::{
    ext_select, random_select, read_indices, read_keys, select_from_matrix, write_indices, write_keys, Method,
    SelectionSpec, DEFAULT_DIFF_CHECKPOINTS, DEFAULT_VAR_CHECKPOINTS,
};
use cat_prune::synth::{lexicon_corpus, LexiconConfig};
use cat_prune::Error;

use crate::args::*;

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::invalid(msg).into()
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_corpus(args: &CorpusArgs, manifest: &mut RunManifest) -> Result<Corpus> {
    let source = args.source()?;
    for p in source.paths() {
        manifest.input(p)?;
    }
    Ok(Corpus::load(&source)?)
}

fn finish(mut manifest: RunManifest, started: Instant, outputs: &[PathBuf], path: &Path) -> Result<()> {
    manifest.outputs(outputs)?;
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    manifest.save(path)?;
    Ok(())
}

fn linemap_text(corpus: &Corpus) -> String {
    corpus
        .lines
        .iter()
        .enumerate()
        .map(|(id, line)| format!("{line}\t{id}\n"))
        .collect()
}

pub fn score(args: &ScoreArgs) -> Result<()> {
    let started = Instant::now();
    let settings = args.model.settings();
    let snaps: BTreeSet<u32> = args.snapshot_epochs.iter().copied().collect();
    if let Some(&e) = snaps.iter().find(|&&e| e == 0 || e > settings.epochs) {
        return Err(invalid(format!(
            "snapshot epoch {e} beyond training (epochs = {})",
            settings.epochs
        )));
    }
    let mut manifest = RunManifest::new("score", json!({ "train": settings, "snapshot_epochs": snaps }));
    manifest.seed("model", settings.seed);
    let corpus = load_corpus(&args.corpus, &mut manifest)?;
    log::info!("loaded {} pairs ({} dropped)", corpus.len(), corpus.summary.dropped);

    let scored = train_and_score(&corpus, &settings, &snaps)?;
    let out = &args.out;
    let mut outputs = Vec::new();
    let scores = out.join("scores.tsv");
    write_matrix(&scored.matrix, &scores)?;
    outputs.push(scores);
    for (epoch, snap) in &scored.outcome.snapshots {
        let p = out.join("snapshots").join(format!("epoch_{epoch}.catm"));
        checkpoint::save(snap, &p)?;
        outputs.push(p);
    }
    let src_vocab = out.join("src.vocab");
    let tgt_vocab = out.join("tgt.vocab");
    scored.tokenizer.source_vocab.save(&src_vocab)?;
    scored.tokenizer.target_vocab.save(&tgt_vocab)?;
    let linemap = out.join("corpus.linemap.tsv");
    write(&linemap, &linemap_text(&corpus))?;
    let report = out.join("train_report.json");
    write(
        &report,
        &serde_json::to_string_pretty(&scored.outcome.report.epoch_losses)?,
    )?;
    outputs.extend([src_vocab, tgt_vocab, linemap, report]);

    let config = scored.outcome.final_snapshot.config();
    manifest.config["config_hash"] = json!(format!("{:016x}", config.hash()));
    manifest.config["model"] = serde_json::to_value(config)?;
    manifest.config["loaded"] = json!({ "total": corpus.summary.total, "dropped": corpus.summary.dropped });
    finish(manifest, started, &outputs, &out.join("manifest.json"))?;
    println!("{}", out.join("scores.tsv").display());
    Ok(())
}

fn build_method(args: &SelectArgs) -> Result<Method> {
    let cps = args.checkpoints.clone();
    Ok(match args.method.as_str() {
        "cat-diff" => {
            let (early, late) = match cps.as_deref() {
                None => DEFAULT_DIFF_CHECKPOINTS,
                Some([a, b]) => (*a, *b),
                Some(_) => return Err(invalid("cat-diff takes exactly two checkpoints (early,late)")),
            };
            Method::CatDiff { early, late }
        }
        "cat-var" => Method::CatVar {
            checkpoints: cps.unwrap_or_else(|| DEFAULT_VAR_CHECKPOINTS.to_vec()),
        },
        "random" => Method::Random {
            seed: args.seed.ok_or_else(|| invalid("random selection needs --seed"))?,
        },
        "ext-top" => Method::ExtTop,
        "ext-band" => Method::ExtBand,
        other => return Err(invalid(format!("unknown method {other}"))),
    })
}

fn count_rows(path: &Path) -> Result<usize> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(i, l)| !(*i == 0 && l.starts_with("id")) && !l.trim().is_empty())
        .count())
}

pub fn select(args: &SelectArgs) -> Result<()> {
    let started = Instant::now();
    let method = build_method(args)?;
    let spec = SelectionSpec::new(method, args.keep)?;
    let mut manifest = RunManifest::new("select", serde_json::to_value(&spec)?);
    if let Method::Random { seed } = spec.method {
        manifest.seed("selection", seed);
    }
    let result = match (&spec.method, &args.scores, &args.ext_scores) {
        (Method::CatDiff { .. } | Method::CatVar { .. }, Some(scores), None) => {
            manifest.input(scores)?;
            select_from_matrix(&read_matrix(scores)?, &spec)?
        }
        (Method::CatDiff { .. } | Method::CatVar { .. }, _, _) => {
            return Err(invalid(format!(
                "{} needs --scores (a score matrix)",
                spec.method.name()
            )))
        }
        (Method::ExtTop | Method::ExtBand, None, Some(ext)) => {
            manifest.input(ext)?;
            let direction: Direction = args.direction.parse()?;
            let n = match args.n {
                Some(n) => n,
                None => count_rows(ext)?,
            };
            ext_select(&load_external_scores(ext, direction, n)?, &spec)?
        }
        (Method::ExtTop | Method::ExtBand, _, _) => {
            return Err(invalid(format!(
                "{} needs --ext-scores (an external score file)",
                spec.method.name()
            )))
        }
        (Method::Random { .. }, scores, ext) => {
            let n = match (args.n, scores, ext) {
                (Some(n), _, _) => n,
                (None, Some(s), _) => {
                    manifest.input(s)?;
                    read_matrix(s)?.n()
                }
                (None, None, Some(e)) => {
                    manifest.input(e)?;
                    count_rows(e)?
                }
                (None, None, None) => return Err(invalid("random selection needs --n, --scores or --ext-scores")),
            };
            random_select(n, &spec)?
        }
    };
    let mut outputs = vec![args.out.clone()];
    write_indices(&args.out, &result.kept)?;
    if args.emit_keys {
        if let Some(keys) = &result.keys {
            let mut p = args.out.as_os_str().to_owned();
            p.push(".keys.tsv");
            let p = PathBuf::from(p);
            write_keys(&p, keys)?;
            outputs.push(p);
        } else {
            log::warn!("{} has no ranking keys; --emit-keys ignored", spec.method.name());
        }
    }
    manifest.config = json!({ "spec": spec, "k": result.k(), "n": result.n });
    finish(manifest, started, &outputs, &sidecar_path(&args.out))?;
    println!("kept {} of {}", result.k(), result.n);
    Ok(())
}

pub fn subset(args: &SubsetArgs) -> Result<()> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("subset", json!({ "out": args.out }));
    let corpus = load_corpus(&args.corpus, &mut manifest)?;
    manifest.input(&args.indices)?;
    let indices = read_indices(&args.indices)?;
    let out = SubsetOutput {
        prefix: args.out.clone(),
        format: corpus.format,
    };
    let written = write_subset(&corpus, &indices, &out)?;
    finish(manifest, started, &written, &sidecar_path(&args.out))?;
    println!("wrote {} pairs", indices.len());
    Ok(())
}

pub fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = AnalysisConfig {
        rare_threshold: args.rare_threshold,
        bin_width: args.bin_width,
    };
    let mut manifest = RunManifest::new(
        "analyze",
        json!({ "rare_threshold": cfg.rare_threshold, "bin_width": cfg.bin_width }),
    );
    let corpus = load_corpus(&args.corpus, &mut manifest)?;
    let indices = match &args.indices {
        Some(p) => {
            manifest.input(p)?;
            Some(read_indices(p)?)
        }
        None => None,
    };
    let mut report = corpus_report(&corpus, indices.as_deref(), cfg)?;
    if let Some(p) = &args.lid {
        manifest.input(p)?;
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let labels: Vec<String> = text.lines().map(str::to_string).collect();
        if labels.len() != corpus.len() {
            return Err(invalid(format!(
                "{} language labels for {} pairs",
                labels.len(),
                corpus.len()
            )));
        }
        report.lid = Some(match &indices {
            Some(ids) => ids.iter().map(|&i| labels[i].clone()).collect(),
            None => labels,
        });
    }
    let mut outputs = Vec::new();
    let report_path = args.out.join("report.json");
    let doc = json!({ "inputs": manifest.inputs, "report": report });
    write(&report_path, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    outputs.push(report_path);

    let columns = match (&args.scores, &args.keys) {
        (Some(p), _) => {
            manifest.input(p)?;
            Some(matrix_columns(&read_matrix(p)?))
        }
        (None, Some(p)) => {
            manifest.input(p)?;
            Some(vec![("key".to_string(), read_keys(p)?)])
        }
        (None, None) => None,
    };
    if let Some(cols) = columns {
        let join = args.out.join("join.tsv");
        write(&join, &score_length_join(&corpus, &cols)?)?;
        outputs.push(join);
    }
    finish(manifest, started, &outputs, &args.out.join("manifest.json"))?;
    println!("{}", args.out.join("report.json").display());
    Ok(())
}

pub fn noise(args: &NoiseArgs) -> Result<()> {
    let started = Instant::now();
    let fractions = args.noise.fractions();
    fractions.validate()?;
    let mut manifest = RunManifest::new("noise", serde_json::to_value(fractions)?);
    manifest.seed("noise", args.seed);
    let corpus = load_corpus(&args.corpus, &mut manifest)?;
    let (noisy, flags) = inject_noise(&corpus, fractions, args.seed)?;
    let out = SubsetOutput {
        prefix: args.out.clone(),
        format: corpus.format,
    };
    let all: Vec<usize> = (0..noisy.len()).collect();
    let mut outputs = write_subset(&noisy, &all, &out)?;
    let with = |suffix: &str| {
        let mut p = args.out.as_os_str().to_owned();
        p.push(suffix);
        PathBuf::from(p)
    };
    let json_path = with(".noise.json");
    let flags_path = with(".flags.tsv");
    flags.save(&json_path)?;
    write(&flags_path, &flags.to_tsv())?;
    outputs.extend([json_path, flags_path]);
    finish(manifest, started, &outputs, &sidecar_path(&args.out))?;
    println!(
        "misaligned {} copied {} truncated {} of {}",
        flags.count(cat_prune::eval::NoiseFlag::Misaligned),
        flags.count(cat_prune::eval::NoiseFlag::Copied),
        flags.count(cat_prune::eval::NoiseFlag::Truncated),
        noisy.len()
    );
    Ok(())
}

fn read_segments(path: &Path) -> Result<Vec<String>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let text = String::from_utf8(bytes).map_err(|_| invalid(format!("{}: invalid UTF-8", path.display())))?;
    Ok(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let metric: MetricKind = args.metric.parse()?;
    if args.bootstrap < 1 {
        return Err(invalid("--bootstrap must be at least 1"));
    }
    let hyps = read_segments(&args.hyp)?;
    let refs = read_segments(&args.r#ref)?;
    let score = metric.corpus_score(&hyps, &refs)?;
    let mut doc = json!({ "score": score });
    if let Some(base) = &args.baseline_hyp {
        let baseline = read_segments(base)?;
        let boot = paired_bootstrap(metric, &hyps, &baseline, &refs, args.bootstrap, args.seed)?;
        doc["bootstrap"] = serde_json::to_value(boot)?;
    }
    // Reserved for externally computed COMET scores.
    doc["comet"] = serde_json::Value::Null;
    let text = serde_json::to_string_pretty(&doc)?;
    if let Some(out) = &args.out {
        write(out, &(text.clone() + "\n"))?;
    }
    println!("{text}");
    Ok(())
}

pub fn e2e(args: &E2eArgs) -> Result<()> {
    let started = Instant::now();
    let methods = args
        .methods
        .iter()
        .map(|m| m.parse::<E2eMethod>())
        .collect::<cat_prune::Result<Vec<_>>>()?;
    let [early, late] = args.diff_checkpoints[..] else {
        return Err(invalid("--diff-checkpoints takes exactly two epochs"));
    };
    let settings = args.model.settings();
    let config = E2eConfig {
        methods,
        keeps: args.keeps.clone(),
        noise: args.noise.fractions(),
        seed: args.model.seed,
        train: settings,
        snapshot_epochs: args.snapshot_epochs.clone(),
        diff_checkpoints: (early, late),
        var_checkpoints: args.var_checkpoints.clone(),
        heldout_fraction: args.heldout,
    };
    if let Some(&e) = config
        .snapshot_epochs
        .iter()
        .find(|&&e| e == 0 || e > config.train.epochs)
    {
        return Err(invalid(format!(
            "snapshot epoch {e} beyond training (epochs = {})",
            config.train.epochs
        )));
    }
    let mut manifest = RunManifest::new("e2e", serde_json::to_value(&config)?);
    manifest.seed("seed", config.seed);
    let corpus = load_corpus(&args.corpus, &mut manifest)?;
    let report = run_e2e(&corpus, &config, &args.out_dir)?;
    let outputs = vec![args.out_dir.join("table.json"), args.out_dir.join("table.tsv")];
    finish(manifest, started, &outputs, &args.out_dir.join("manifest.json"))?;
    print!("{}", report.to_tsv());
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let config = LexiconConfig {
        pairs: args.pairs,
        vocab_size: args.vocab_size,
        min_len: args.min_len,
        max_len: args.max_len,
        branching: args.branching,
        copy: args.copy,
        seed: args.seed,
    };
    let lex = lexicon_corpus(&config)?;
    let out = SubsetOutput {
        prefix: args.out.clone(),
        format: if args.tsv {
            CorpusFormat::Tsv
        } else {
            CorpusFormat::Parallel
        },
    };
    let all: Vec<usize> = (0..lex.corpus.len()).collect();
    let written = write_subset(&lex.corpus, &all, &out)?;
    // The linemap of a generated corpus is the identity; drop it.
    if let Some(linemap) = written.last() {
        std::fs::remove_file(linemap).with_context(|| format!("removing {}", linemap.display()))?;
    }
    println!("wrote {} pairs", lex.corpus.len());
    Ok(())
}
