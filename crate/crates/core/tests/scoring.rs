mod common;

use std::collections::BTreeMap;
use std::io::Write;

use cat_prune::corpus::{TokenizedPair, EOS};
use cat_prune::model::{Model, ModelConfig, ModelSnapshot};
use cat_prune::scoring::{
    load_external_scores, perplexity, read_matrix, read_matrix_for, score_corpus, write_matrix, CheckpointLabel,
    Direction, ScoreMatrix,
};
use cat_prune::Error;
use proptest::prelude::*;

use common::*;

fn lp_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-40.0f64..0.0, 1..60)
}

proptest! {
    #[test]
    fn perplexity_matches_brute_force(lp in lp_strategy()) {
        let got = perplexity(&lp).unwrap().ppl;
        let want = brute_perplexity(&lp);
        prop_assert!(((got - want) / want).abs() <= 1e-12, "{} vs {}", got, want);
    }

    #[test]
    fn perplexity_grows_as_log_probs_fall(lp in lp_strategy(), i in any::<prop::sample::Index>(), d in 0.01f64..5.0) {
        let mut worse = lp.clone();
        let j = i.index(lp.len());
        worse[j] -= d;
        let (a, b) = (perplexity(&worse).unwrap(), perplexity(&lp).unwrap());
        if a.mean_nll < 30.0 {
            prop_assert!(a.ppl > b.ppl);
        } else {
            prop_assert!(a.ppl >= b.ppl);
        }
    }

    #[test]
    fn matrix_tsv_round_trips(n in 1usize..40, c in 1usize..5, seed in any::<u64>()) {
        let m = random_matrix(&mut cat_prune::rng::seeded(seed), n, c, false);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.tsv");
        write_matrix(&m, &path).unwrap();
        let back = read_matrix_for(&path, n).unwrap();
        prop_assert_eq!(back, m);
    }
}

#[test]
fn perplexity_edge_cases() {
    assert!(perplexity(&[]).is_err());
    assert!(perplexity(&[0.1]).is_err());
    assert!(perplexity(&[f64::NAN]).is_err());
    // clamped at exp(30)
    assert_eq!(perplexity(&[-1000.0]).unwrap().ppl, 30f64.exp());
    assert_eq!(perplexity(&[0.0, 0.0]).unwrap().ppl, 1.0);
}

#[test]
fn zero_snapshots_score_vocab_size() {
    let vt = 17;
    let mut snaps = BTreeMap::new();
    for e in [1, 5] {
        snaps.insert(
            e,
            ModelSnapshot::new(e, Model::zeros(ModelConfig::new(9, vt)).unwrap()).unwrap(),
        );
    }
    let pairs: Vec<TokenizedPair> = (0..20)
        .map(|i| TokenizedPair {
            id: i,
            source: vec![4 + (i % 5) as u32; 1 + i % 4],
            target: [vec![5 + (i % 7) as u32; i % 6], vec![EOS]].concat(),
        })
        .collect();
    let m = score_corpus(&pairs, &snaps).unwrap();
    for i in 0..m.n() {
        for c in m.row(i) {
            assert!((c.ppl - vt as f64).abs() <= 1e-9);
        }
    }
    let d = cat_prune::selection::delta_ppl(&m, 1, 5).unwrap();
    assert!(d.iter().all(|&x| x == 0.0));
}

#[test]
fn score_corpus_rejects_non_contiguous_ids() {
    let mut snaps = BTreeMap::new();
    snaps.insert(
        1,
        ModelSnapshot::new(1, Model::zeros(ModelConfig::new(6, 6)).unwrap()).unwrap(),
    );
    let pairs = vec![TokenizedPair {
        id: 1,
        source: vec![4],
        target: vec![EOS],
    }];
    assert!(score_corpus(&pairs, &snaps).is_err());
}

#[test]
fn missing_row_is_reported_by_id() {
    let m = ScoreMatrix::from_nll_columns(vec![(CheckpointLabel::Epoch(1), vec![1.0; 10])]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.tsv");
    let text: String = m
        .to_tsv()
        .lines()
        .filter(|l| !l.starts_with("7\t"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&path, text).unwrap();
    let err = read_matrix(&path).unwrap_err();
    assert!(err.to_string().contains("row for id 7 absent"), "{err}");
    assert!(err.is_validation());

    // a trailing row missing only shows up against the corpus size
    write_matrix(&m, &path).unwrap();
    let err = read_matrix_for(&path, 11).unwrap_err();
    assert!(err.to_string().contains("row for id 10 absent"), "{err}");
}

#[test]
fn duplicate_and_inconsistent_rows_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.tsv");
    let row = format!("0\t{:.16e}\t{:.16e}\n", 1.0, 1f64.exp());
    std::fs::write(&path, format!("id\tnll_ck1\tppl_ck1\n{row}{row}")).unwrap();
    assert!(read_matrix(&path).unwrap_err().to_string().contains("duplicate"));
    std::fs::write(&path, "id\tnll_ck1\tppl_ck1\n0\t1.0\t5.0\n").unwrap();
    assert!(read_matrix(&path).is_err());
    std::fs::write(&path, "id\tnll_ck3\tppl_ck1\n0\t1.0\t5.0\n").unwrap();
    assert!(read_matrix(&path).is_err());
}

#[test]
fn external_scores_cover_every_id_once() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ext.tsv");
    let write = |s: &str| {
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(s.as_bytes()).unwrap();
    };
    write("id\tscore\n2\t0.5\n0\t0.1\n1\t0.9\n");
    let ext = load_external_scores(&path, Direction::HigherIsBetter, 3).unwrap();
    assert_eq!(ext.scores, vec![0.1, 0.9, 0.5]);

    write("0\t0.1\n0\t0.2\n1\t0.3\n");
    assert!(load_external_scores(&path, Direction::Band, 2)
        .unwrap_err()
        .to_string()
        .contains("duplicate"));
    write("0\t0.1\n");
    let err = load_external_scores(&path, Direction::Band, 2).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");
    write("0\t0.1\n5\t0.2\n");
    assert!(load_external_scores(&path, Direction::Band, 2).is_err());
    write("0\tnan\n1\t0.2\n");
    assert!(load_external_scores(&path, Direction::Band, 2).is_err());
}
