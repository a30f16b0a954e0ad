use std::time::Instant;

use cat_prune::eval::{bleu, chrf_pp, paired_bootstrap, MetricKind};
use cat_prune::rng;
use proptest::prelude::*;
use serde_json::Value;

fn goldens() -> Value {
    let text = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/metric_goldens.json"
    ))
    .unwrap();
    serde_json::from_str(&text).unwrap()
}

fn strings(v: &Value) -> Vec<String> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_str().unwrap().to_string())
        .collect()
}

fn words(r: &mut rng::ChaCha8Rng, n: usize, vocab: u64) -> String {
    (0..n)
        .map(|_| format!("w{}", rng::below(r, vocab)))
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn sacrebleu_goldens() {
    let g = goldens();
    for case in g["cases"].as_array().unwrap() {
        let hyps = strings(&case["hyps"]);
        let refs = strings(&case["refs"]);
        let b = bleu(&hyps, &refs).unwrap().value;
        let c = chrf_pp(&hyps, &refs).unwrap().value;
        assert!((b - case["bleu"].as_f64().unwrap()).abs() < 0.01, "{hyps:?}: bleu {b}");
        assert!(
            (c - case["chrfpp"].as_f64().unwrap()).abs() < 0.01,
            "{hyps:?}: chrf++ {c}"
        );
    }
}

#[test]
fn zero_overlap_bleu_is_small_but_positive() {
    let g = goldens();
    let z = &g["zero_overlap"];
    let b = bleu(&strings(&z["hyps"]), &strings(&z["refs"])).unwrap().value;
    assert!(b > 0.0 && b < 1.0, "{b}");
    assert!((b - z["bleu"].as_f64().unwrap()).abs() < 1e-9);
}

#[test]
fn identity_scores_one_hundred() {
    let refs = vec![
        "the cat sat on the mat".to_string(),
        "a b c d e f".to_string(),
        "x".to_string(),
    ];
    assert_eq!(format!("{:.2}", bleu(&refs, &refs).unwrap().value), "100.00");
    assert_eq!(format!("{:.2}", chrf_pp(&refs, &refs).unwrap().value), "100.00");
}

#[test]
fn mismatched_or_empty_input_is_rejected() {
    let a = vec!["a".to_string()];
    assert!(bleu(&a, &[]).unwrap_err().is_validation());
    assert!(bleu(&[], &[]).is_err());
    assert!(chrf_pp(&a, &["a".into(), "b".into()]).is_err());
}

#[test]
fn recombining_the_breakdown_gives_the_score() {
    let hyps = vec!["the quick brown fox".to_string(), "jumps over".to_string()];
    let refs = vec!["the quick red fox".to_string(), "jumped over it".to_string()];
    for s in [bleu(&hyps, &refs).unwrap(), chrf_pp(&hyps, &refs).unwrap()] {
        assert!((s.recombine() - s.value).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn corpus_scores_ignore_segment_order(seed in any::<u64>(), n in 1usize..20) {
        let mut r = rng::seeded(seed);
        let mut hyps = Vec::new();
        let mut refs = Vec::new();
        for _ in 0..n {
            let len = 1 + rng::below(&mut r, 10) as usize;
            hyps.push(words(&mut r, len, 8));
            refs.push(words(&mut r, len, 8));
        }
        let mut order: Vec<usize> = (0..n).collect();
        rng::shuffle(&mut order, &mut r);
        let ph: Vec<String> = order.iter().map(|&i| hyps[i].clone()).collect();
        let pr: Vec<String> = order.iter().map(|&i| refs[i].clone()).collect();
        prop_assert_eq!(bleu(&hyps, &refs).unwrap().value, bleu(&ph, &pr).unwrap().value);
        prop_assert_eq!(chrf_pp(&hyps, &refs).unwrap().value, chrf_pp(&ph, &pr).unwrap().value);
    }

    #[test]
    fn scores_stay_in_range(seed in any::<u64>(), n in 1usize..10) {
        let mut r = rng::seeded(seed);
        let hyps: Vec<String> = (0..n).map(|_| { let l = rng::below(&mut r, 8) as usize; words(&mut r, l, 6) }).collect();
        let refs: Vec<String> = (0..n).map(|_| { let l = 1 + rng::below(&mut r, 8) as usize; words(&mut r, l, 6) }).collect();
        for kind in [MetricKind::Bleu, MetricKind::ChrfPP] {
            let v = kind.corpus_score(&hyps, &refs).unwrap().value;
            prop_assert!((0.0..=100.0 + 1e-9).contains(&v), "{}", v);
        }
    }
}

fn system_pair(n: usize) -> (Vec<String>, Vec<String>, Vec<String>) {
    let mut r = rng::seeded(9);
    let refs: Vec<String> = (0..n).map(|_| words(&mut r, 12, 50)).collect();
    let good: Vec<String> = refs
        .iter()
        .map(|s| {
            let mut w: Vec<&str> = s.split(' ').collect();
            w[0] = "zz";
            w.join(" ")
        })
        .collect();
    let bad: Vec<String> = (0..n).map(|_| words(&mut r, 12, 50)).collect();
    (good, bad, refs)
}

#[test]
fn bootstrap_identical_systems_tie() {
    let (good, _, refs) = system_pair(50);
    let b = paired_bootstrap(MetricKind::Bleu, &good, &good, &refs, 200, 3).unwrap();
    assert_eq!(b.p_value, 1.0);
    assert_eq!(b.win_rate_a, 0.0);
    assert_eq!(b.tie_rate, 1.0);
}

#[test]
fn bootstrap_dominant_system_wins_everywhere() {
    let (good, bad, refs) = system_pair(50);
    for kind in [MetricKind::Bleu, MetricKind::ChrfPP] {
        let b = paired_bootstrap(kind, &good, &bad, &refs, 200, 3).unwrap();
        assert_eq!(b.p_value, 0.0);
        assert_eq!(b.win_rate_a, 1.0);
        let rev = paired_bootstrap(kind, &bad, &good, &refs, 200, 3).unwrap();
        assert_eq!(rev.p_value, 1.0);
    }
}

#[test]
fn bootstrap_is_reproducible_and_rejects_bad_input() {
    let (good, bad, refs) = system_pair(40);
    let mixed: Vec<String> = good
        .iter()
        .zip(&bad)
        .enumerate()
        .map(|(i, (g, b))| if i % 2 == 0 { g.clone() } else { b.clone() })
        .collect();
    let a = paired_bootstrap(MetricKind::ChrfPP, &mixed, &good, &refs, 300, 17).unwrap();
    let b = paired_bootstrap(MetricKind::ChrfPP, &mixed, &good, &refs, 300, 17).unwrap();
    assert_eq!(a.p_value.to_bits(), b.p_value.to_bits());
    assert_eq!(a, b);
    assert!(paired_bootstrap(MetricKind::Bleu, &good, &bad, &refs, 0, 1).is_err());
    assert!(paired_bootstrap(MetricKind::Bleu, &good[1..], &bad, &refs, 10, 1).is_err());
}

#[test]
fn bootstrap_budget() {
    let (good, bad, refs) = system_pair(500);
    let t = Instant::now();
    paired_bootstrap(MetricKind::Bleu, &good, &bad, &refs, 1000, 0).unwrap();
    assert!(t.elapsed().as_secs_f64() < 10.0, "{:?}", t.elapsed());
}
