mod common;

use std::collections::BTreeSet;

use cat_prune::rng;
use cat_prune::scoring::{CheckpointLabel, Direction, ExternalScores, ScoreMatrix};
use cat_prune::selection::{
    cat_diff_select, cat_var_select, ext_select, keep_count, random_select, Method, SelectionSpec,
};
use proptest::prelude::*;

use common::*;

fn set(v: &[usize]) -> BTreeSet<usize> {
    v.iter().copied().collect()
}

fn assert_rank_invariant(m: &ScoreMatrix, scaled: &ScoreMatrix, p: f64) -> Result<(), TestCaseError> {
    let diff = SelectionSpec::new(Method::CatDiff { early: 1, late: 3 }, p).unwrap();
    let var = SelectionSpec::new(
        Method::CatVar {
            checkpoints: vec![1, 2, 3],
        },
        p,
    )
    .unwrap();
    prop_assert_eq!(
        cat_diff_select(m, &diff).unwrap().kept,
        cat_diff_select(scaled, &diff).unwrap().kept
    );
    prop_assert_eq!(
        cat_var_select(m, &var).unwrap().kept,
        cat_var_select(scaled, &var).unwrap().kept
    );
    Ok(())
}

fn keep_strategy() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.1), Just(0.3), Just(0.5), Just(1.0), 0.001f64..=1.0]
}

proptest! {
    #[test]
    fn keep_count_is_exact(n in 1usize..100_000, p in 0.0001f64..=1.0) {
        let k = keep_count(p, n).unwrap();
        prop_assert_eq!(k, brute_keep(p, n));
        prop_assert!(k >= 1 && k <= n);
    }

    #[test]
    fn cat_diff_matches_oracle(seed in any::<u64>(), n in 1usize..300, c in 2usize..6, p in keep_strategy(), ties in any::<bool>()) {
        let m = random_matrix(&mut rng::seeded(seed), n, c, ties);
        let late = c as u32;
        let spec = SelectionSpec::new(Method::CatDiff { early: 1, late }, p).unwrap();
        let got = cat_diff_select(&m, &spec).unwrap();
        let rows = ppl_rows(&m, &[1, late]);
        let keys: Vec<f64> = rows.iter().map(|r| r[0] - r[1]).collect();
        let k = brute_keep(p, n);
        prop_assert_eq!(got.k(), k);
        prop_assert_eq!(set(&got.kept), brute_top(&keys, k, true));
    }

    #[test]
    fn cat_var_matches_oracle(seed in any::<u64>(), n in 1usize..300, c in 2usize..6, p in keep_strategy(), ties in any::<bool>()) {
        let m = random_matrix(&mut rng::seeded(seed), n, c, ties);
        let cks: Vec<u32> = (1..=c as u32).collect();
        let spec = SelectionSpec::new(Method::CatVar { checkpoints: cks.clone() }, p).unwrap();
        let got = cat_var_select(&m, &spec).unwrap();
        let keys: Vec<f64> = ppl_rows(&m, &cks).iter().map(|r| brute_variance(r)).collect();
        // both sides compute the same arithmetic, so the keys should agree to rounding
        for (a, b) in got.keys.as_ref().unwrap().iter().zip(&keys) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        let k = brute_keep(p, n);
        prop_assert_eq!(set(&got.kept), brute_band(got.keys.as_ref().unwrap(), k));
    }

    #[test]
    fn ext_matches_oracle(keys in prop::collection::vec(0u8..20, 1..300), p in keep_strategy()) {
        let keys: Vec<f64> = keys.into_iter().map(|x| x as f64 / 4.0).collect();
        let n = keys.len();
        let k = brute_keep(p, n);
        let top = SelectionSpec::new(Method::ExtTop, p).unwrap();
        let band = SelectionSpec::new(Method::ExtBand, p).unwrap();
        let hi = ExternalScores { scores: keys.clone(), direction: Direction::HigherIsBetter };
        let lo = ExternalScores { scores: keys.clone(), direction: Direction::LowerIsBetter };
        let mid = ExternalScores { scores: keys.clone(), direction: Direction::Band };
        prop_assert_eq!(set(&ext_select(&hi, &top).unwrap().kept), brute_top(&keys, k, true));
        prop_assert_eq!(set(&ext_select(&lo, &top).unwrap().kept), brute_top(&keys, k, false));
        prop_assert_eq!(set(&ext_select(&mid, &band).unwrap().kept), brute_band(&keys, k));
        prop_assert!(ext_select(&mid, &top).is_err());
    }

    #[test]
    fn selections_survive_exact_scaling(seed in any::<u64>(), n in 1usize..200, p in keep_strategy(), e in -10i32..=10, ties in any::<bool>()) {
        // a power-of-two factor scales every ppl exactly, so even exact ties survive
        let m = random_matrix(&mut rng::seeded(seed), n, 3, ties);
        assert_rank_invariant(&m, &m.scale_ppl(2f64.powi(e)), p)?;
    }

    #[test]
    fn selections_survive_any_positive_scaling(seed in any::<u64>(), n in 1usize..200, p in keep_strategy(), f in 0.01f64..100.0) {
        // continuous values: no ties for rounding to reorder
        let mut r = rng::seeded(seed);
        let cols = (1..=3)
            .map(|e| (CheckpointLabel::Epoch(e), (0..n).map(|_| rng::uniform(&mut r, 0.0, 6.0)).collect()))
            .collect();
        let m = ScoreMatrix::from_nll_columns(cols).unwrap();
        assert_rank_invariant(&m, &m.scale_ppl(f), p)?;
    }

    #[test]
    fn top_selections_nest(seed in any::<u64>(), n in 1usize..200, a in 0.01f64..=1.0, b in 0.01f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let m = random_matrix(&mut rng::seeded(seed), n, 2, false);
        let small = cat_diff_select(&m, &SelectionSpec::new(Method::CatDiff { early: 1, late: 2 }, lo).unwrap()).unwrap();
        let large = cat_diff_select(&m, &SelectionSpec::new(Method::CatDiff { early: 1, late: 2 }, hi).unwrap()).unwrap();
        prop_assert!(set(&small.kept).is_subset(&set(&large.kept)));
    }

    #[test]
    fn random_is_seeded_and_exact(n in 1usize..500, p in keep_strategy(), seed in any::<u64>()) {
        let spec = SelectionSpec::new(Method::Random { seed }, p).unwrap();
        let a = random_select(n, &spec).unwrap();
        prop_assert_eq!(a.k(), brute_keep(p, n));
        prop_assert_eq!(&a.kept, &random_select(n, &spec).unwrap().kept);
        prop_assert!(a.kept.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn half_up_rounding() {
    assert_eq!(keep_count(0.15, 10).unwrap(), 2);
    assert_eq!(keep_count(0.25, 10).unwrap(), 3);
    assert_eq!(keep_count(0.001, 10).unwrap(), 1);
    assert_eq!(keep_count(1.0, 7).unwrap(), 7);
    assert!(keep_count(0.0, 10).is_err());
    assert!(keep_count(1.5, 10).is_err());
    assert!(keep_count(0.5, 0).is_err());
}

#[test]
fn all_ties_fall_back_to_id_order() {
    let m = random_matrix(&mut rng::seeded(1), 10, 3, true);
    let diff = cat_diff_select(
        &m,
        &SelectionSpec::new(Method::CatDiff { early: 1, late: 3 }, 0.3).unwrap(),
    )
    .unwrap();
    assert_eq!(diff.kept, vec![0, 1, 2]);
    let var = cat_var_select(
        &m,
        &SelectionSpec::new(
            Method::CatVar {
                checkpoints: vec![1, 2, 3],
            },
            0.3,
        )
        .unwrap(),
    )
    .unwrap();
    // band starts at floor((10 − 3) / 2) = 3
    assert_eq!(var.kept, vec![3, 4, 5]);
}

#[test]
fn bad_specs_are_rejected() {
    assert!(SelectionSpec::new(Method::CatDiff { early: 5, late: 1 }, 0.5).is_err());
    assert!(SelectionSpec::new(Method::CatDiff { early: 0, late: 1 }, 0.5).is_err());
    assert!(SelectionSpec::new(Method::CatVar { checkpoints: vec![1] }, 0.5).is_err());
    let m = random_matrix(&mut rng::seeded(1), 10, 3, false);
    let missing = SelectionSpec::new(Method::CatDiff { early: 1, late: 9 }, 0.5).unwrap();
    assert!(cat_diff_select(&m, &missing).unwrap_err().is_validation());
}
