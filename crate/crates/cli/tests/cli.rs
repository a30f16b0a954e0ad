use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cat_prune::manifest::sha256_hex;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cat-prune"));
    c.env_remove("CAT_PRUNE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small synthetic corpus as `<dir>/c.tsv`.
fn corpus(dir: &Path, pairs: usize) -> PathBuf {
    let prefix = dir.join("c");
    ok(&[
        "synth",
        "--pairs",
        &pairs.to_string(),
        "--vocab-size",
        "40",
        "--tsv",
        "--out",
        p(&prefix),
    ]);
    dir.join("c.tsv")
}

const FAST: [&str; 8] = [
    "--epochs",
    "3",
    "--optimizer",
    "adam",
    "--lr",
    "0.005",
    "--batch-size",
    "32",
];

fn score(tsv: &Path, out: &Path, threads: &str) {
    let mut args = vec!["score", "--tsv", p(tsv), "--snapshot-epochs", "1,2,3", "--out", p(out)];
    args.extend(FAST);
    let o = bin().args(&args).env("CAT_PRUNE_THREADS", threads).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

/// Hashes of every file under `dir` except run manifests, which record wall-clock time.
fn hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            let name = path.file_name().unwrap().to_str().unwrap().to_string();
            if path.is_dir() {
                stack.push(path);
            } else if !name.ends_with("manifest.json") {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, sha256_hex(&std::fs::read(&path).unwrap()));
            }
        }
    }
    out
}

#[test]
fn score_select_subset_analyze_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tsv = corpus(d, 120);
    let out = d.join("score");
    score(&tsv, &out, "0");
    for f in [
        "scores.tsv",
        "snapshots/epoch_1.catm",
        "snapshots/epoch_3.catm",
        "src.vocab",
        "tgt.vocab",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "score");
    assert!(!manifest["outputs"].as_object().unwrap().is_empty());

    let sel = d.join("kept.txt");
    let scores = out.join("scores.tsv");
    ok(&[
        "select",
        "--scores",
        p(&scores),
        "--method",
        "cat-diff",
        "--checkpoints",
        "1,3",
        "--keep",
        "0.25",
        "--out",
        p(&sel),
        "--emit-keys",
    ]);
    let kept: Vec<usize> = std::fs::read_to_string(&sel)
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(kept.len(), 30);
    assert!(kept.windows(2).all(|w| w[0] < w[1]));
    assert!(d.join("kept.txt.manifest.json").exists());
    assert!(d.join("kept.txt.keys.tsv").exists());

    let sub = d.join("sub");
    ok(&["subset", "--tsv", p(&tsv), "--indices", p(&sel), "--out", p(&sub)]);
    assert_eq!(std::fs::read_to_string(d.join("sub.tsv")).unwrap().lines().count(), 30);
    let linemap = std::fs::read_to_string(d.join("sub.linemap.tsv")).unwrap();
    let first: Vec<&str> = linemap.lines().next().unwrap().split('\t').collect();
    assert_eq!(first[1].parse::<usize>().unwrap(), kept[0]);

    let an = d.join("an");
    ok(&[
        "analyze",
        "--tsv",
        p(&tsv),
        "--indices",
        p(&sel),
        "--scores",
        p(&scores),
        "--out",
        p(&an),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(an.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["n_pairs"], 30);
    assert_eq!(
        std::fs::read_to_string(an.join("join.tsv")).unwrap().lines().count(),
        121
    );
}

#[test]
fn outputs_are_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tsv = corpus(d, 150);
    let runs: Vec<BTreeMap<String, String>> = ["1", "1", "8"]
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let out = d.join(format!("run{i}"));
            score(&tsv, &out.join("score"), t);
            let scores = out.join("score/scores.tsv");
            for m in ["cat-diff", "cat-var"] {
                let ck = if m == "cat-diff" { "1,3" } else { "1,2,3" };
                ok(&[
                    "select",
                    "--scores",
                    p(&scores),
                    "--method",
                    m,
                    "--checkpoints",
                    ck,
                    "--keep",
                    "0.4",
                    "--out",
                    p(&out.join(format!("{m}.txt"))),
                ]);
            }
            ok(&[
                "select",
                "--scores",
                p(&scores),
                "--method",
                "random",
                "--seed",
                "3",
                "--keep",
                "0.4",
                "--out",
                p(&out.join("random.txt")),
            ]);
            ok(&[
                "noise",
                "--tsv",
                p(&tsv),
                "--misaligned",
                "0.2",
                "--copied",
                "0.1",
                "--seed",
                "5",
                "--out",
                p(&out.join("noisy")),
            ]);
            ok(&[
                "subset",
                "--tsv",
                p(&tsv),
                "--indices",
                p(&out.join("cat-diff.txt")),
                "--out",
                p(&out.join("sub")),
            ]);
            ok(&["analyze", "--tsv", p(&tsv), "--out", p(&out.join("an"))]);
            hashes(&out)
        })
        .collect();
    assert!(runs[0].len() > 15, "{:?}", runs[0].keys());
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}

#[test]
fn e2e_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tsv = corpus(d, 200);
    let common = [
        "--snapshot-epochs",
        "1,2,3",
        "--diff-checkpoints",
        "1,3",
        "--var-checkpoints",
        "1,2,3",
        "--misaligned",
        "0.2",
    ];
    for (methods, keeps, rows) in [("cat-diff", "0.5", 2), ("cat-diff,cat-var,random", "0.1,0.3,0.5", 10)] {
        let out = d.join(format!("e2e{rows}"));
        let mut args = vec![
            "e2e",
            "--tsv",
            p(&tsv),
            "--methods",
            methods,
            "--keeps",
            keeps,
            "--out-dir",
            p(&out),
        ];
        args.extend(common);
        args.extend(FAST);
        let stdout = ok(&args);
        assert_eq!(stdout.lines().count(), rows + 1, "{stdout}");
        let table = std::fs::read_to_string(out.join("table.tsv")).unwrap();
        assert_eq!(table.lines().count(), rows + 1);
        assert!(table.lines().last().unwrap().starts_with("full"), "{table}");
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("table.json")).unwrap()).unwrap();
        assert_eq!(json["rows"].as_array().unwrap().len(), rows);
        assert!(out.join("manifest.json").exists());
        assert!(!out.join("table.json.partial").exists());
    }
}

#[test]
fn eval_reports_scores_and_bootstrap() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let r = d.join("ref.txt");
    let h = d.join("hyp.txt");
    std::fs::write(&r, "the cat sat on the mat\nhello world\n").unwrap();
    std::fs::write(&h, "the cat sat on a mat\nhello there\n").unwrap();
    let out: serde_json::Value = serde_json::from_str(&ok(&["eval", "--hyp", p(&r), "--ref", p(&r)])).unwrap();
    assert_eq!(out["score"]["value"], 100.0);
    assert!(out["comet"].is_null());
    let out: serde_json::Value = serde_json::from_str(&ok(&[
        "eval",
        "--hyp",
        p(&r),
        "--ref",
        p(&r),
        "--metric",
        "chrfpp",
        "--baseline-hyp",
        p(&h),
        "--bootstrap",
        "50",
    ]))
    .unwrap();
    assert_eq!(out["bootstrap"]["p_value"], 0.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tsv = corpus(d, 60);
    let missing = d.join("nope.tsv");
    let s = d.join("short.txt");
    let l = d.join("long.txt");
    std::fs::write(&s, "a\n").unwrap();
    std::fs::write(&l, "a\nb\n").unwrap();
    let src = d.join("x.src");
    std::fs::write(&src, "a\nb\nc\n").unwrap();

    // usage errors
    assert_eq!(code(&run(&["select", "--keep", "0.5"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    // validation errors
    assert_eq!(
        code(&run(&[
            "score",
            "--tsv",
            p(&tsv),
            "--epochs",
            "2",
            "--snapshot-epochs",
            "1,5",
            "--out",
            p(&d.join("o"))
        ])),
        2
    );
    assert_eq!(
        code(&run(&[
            "score",
            "--src",
            p(&src),
            "--tgt",
            p(&l),
            "--out",
            p(&d.join("o"))
        ])),
        2
    );
    assert_eq!(
        code(&run(&[
            "noise",
            "--tsv",
            p(&tsv),
            "--misaligned",
            "0.7",
            "--copied",
            "0.5",
            "--seed",
            "1",
            "--out",
            p(&d.join("n"))
        ])),
        2
    );
    assert_eq!(code(&run(&["eval", "--hyp", p(&s), "--ref", p(&l)])), 2);
    assert_eq!(
        code(&run(&[
            "eval",
            "--hyp",
            p(&s),
            "--ref",
            p(&s),
            "--baseline-hyp",
            p(&s),
            "--bootstrap",
            "0"
        ])),
        2
    );
    let ext = d.join("ext.tsv");
    std::fs::write(&ext, "0\t0.5\n1\t0.2\n").unwrap();
    assert_eq!(
        code(&run(&[
            "select",
            "--ext-scores",
            p(&ext),
            "--method",
            "random",
            "--keep",
            "0.5",
            "--out",
            p(&d.join("k"))
        ])),
        2
    );
    assert_eq!(
        code(&run(&[
            "select",
            "--ext-scores",
            p(&ext),
            "--method",
            "cat-diff",
            "--keep",
            "0.5",
            "--out",
            p(&d.join("k"))
        ])),
        2
    );
    assert_eq!(
        code(&run(&[
            "select",
            "--ext-scores",
            p(&ext),
            "--n",
            "3",
            "--method",
            "ext-top",
            "--keep",
            "0.5",
            "--out",
            p(&d.join("k"))
        ])),
        2
    );
    let bad_idx = d.join("bad.txt");
    std::fs::write(&bad_idx, "0\n999\n").unwrap();
    assert_eq!(
        code(&run(&[
            "subset",
            "--tsv",
            p(&tsv),
            "--indices",
            p(&bad_idx),
            "--out",
            p(&d.join("s"))
        ])),
        2
    );
    // runtime error: unreadable input
    assert_eq!(
        code(&run(&["analyze", "--tsv", p(&missing), "--out", p(&d.join("a"))])),
        1
    );

    ok(&[
        "select",
        "--ext-scores",
        p(&ext),
        "--method",
        "ext-top",
        "--keep",
        "0.5",
        "--out",
        p(&d.join("k")),
    ]);
    assert_eq!(std::fs::read_to_string(d.join("k")).unwrap(), "0\n");
}

#[test]
fn config_file_fills_absent_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tsv = corpus(d, 50);
    let cfg = d.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"epochs": 2, "snapshot_epochs": [1, 2], "optimizer": "adam", "seed": 4}"#,
    )
    .unwrap();
    let out = d.join("o");
    ok(&["--config", p(&cfg), "score", "--tsv", p(&tsv), "--out", p(&out)]);
    assert!(out.join("snapshots/epoch_2.catm").exists());
    assert!(!out.join("snapshots/epoch_3.catm").exists());
    // the command line wins over the file
    let out2 = d.join("o2");
    ok(&[
        "--config",
        p(&cfg),
        "score",
        "--tsv",
        p(&tsv),
        "--snapshot-epochs",
        "1",
        "--out",
        p(&out2),
    ]);
    assert!(!out2.join("snapshots/epoch_2.catm").exists());
    std::fs::write(&cfg, "[1, 2]").unwrap();
    assert_eq!(
        code(&run(&[
            "--config",
            p(&cfg),
            "score",
            "--tsv",
            p(&tsv),
            "--out",
            p(&out)
        ])),
        2
    );
}
