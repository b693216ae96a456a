mod common;

use proptest::prelude::*;
use seqgen::data::ItemId;
use seqgen::metrics::{hitrate_by_position, map_at_k, ndcg_at_k, paired_ttest, recall_at_k, EvalReport, StrategyReport, UserMetrics};

/// DCG of a 0/1 gain vector.
fn dcg(gains: &[f64]) -> f64 {
    gains.iter().enumerate().map(|(i, g)| g / (i as f64 + 2.0).log2()).sum()
}

fn ndcg_oracle(recs: &[ItemId], gt: &[ItemId], k: usize) -> f64 {
    let gains: Vec<f64> = recs.iter().take(k).map(|r| gt.contains(r) as u8 as f64).collect();
    let ideal = vec![1.0; gt.len().min(k)];
    dcg(&gains) / dcg(&ideal)
}

fn distinct(max: u32, len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<ItemId>> {
    proptest::sample::subsequence((1..=max).collect::<Vec<_>>(), len).prop_shuffle()
}

proptest! {
    #[test]
    fn ndcg_matches_the_gain_vector_definition(recs in distinct(30, 0..15), gt in distinct(30, 1..12), k in 1usize..15) {
        let got = ndcg_at_k(&recs, &gt, k);
        prop_assert!((got - ndcg_oracle(&recs, &gt, k)).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&got));
    }

    #[test]
    fn metrics_are_bounded_and_recall_grows_with_k(recs in distinct(30, 0..15), gt in distinct(30, 1..12), k in 1usize..14) {
        prop_assert!(recall_at_k(&recs, &gt, k) <= recall_at_k(&recs, &gt, k + 1));
        let m = map_at_k(&recs, &gt, k);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&m));
        let hits = hitrate_by_position(&recs, &gt, k);
        let recall = recall_at_k(&recs, &gt, k);
        prop_assert!((hits.iter().sum::<f64>() / gt.len() as f64 - recall).abs() < 1e-12);
    }

    #[test]
    fn ranking_the_ground_truth_first_is_perfect(gt in distinct(30, 1..12), k in 1usize..15) {
        let mut recs = gt.clone();
        recs.extend((31..50).filter(|i| !gt.contains(i)));
        prop_assert!((ndcg_at_k(&recs, &gt, k) - 1.0).abs() < 1e-12);
        prop_assert!((map_at_k(&recs, &gt, k) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn map_hand_fixture() {
    // hits at ranks 1 and 3 of two relevant items: (1/1 + 2/3) / 2
    assert!((map_at_k(&[5, 9, 7], &[7, 5], 3) - 5.0 / 6.0).abs() < 1e-12);
    // denominator is capped by K
    assert!((map_at_k(&[1, 2], &[1, 2, 3, 4], 2) - 1.0).abs() < 1e-12);
}

#[test]
fn ttest_statistic_and_pvalue() {
    let a = [0.31, 0.22, 0.45, 0.18, 0.40, 0.27, 0.35, 0.29];
    let b = [0.25, 0.20, 0.41, 0.19, 0.33, 0.21, 0.30, 0.28];
    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = mean / (sd / n.sqrt());
    let r = paired_ttest(&a, &b).unwrap();
    assert!((r.t - t).abs() < 1e-12);
    assert!((r.p - common::t_pvalue_by_integration(t, n - 1.0)).abs() < 1e-6, "{} vs oracle", r.p);
    let flipped = paired_ttest(&b, &a).unwrap();
    assert!((flipped.t + r.t).abs() < 1e-12 && (flipped.p - r.p).abs() < 1e-12);
}

#[test]
fn ttest_degenerate_cases() {
    let same = paired_ttest(&[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3]).unwrap();
    assert!(same.degenerate && same.p == 1.0);
    assert!(paired_ttest(&[0.1], &[0.2]).is_err());
    assert!(paired_ttest(&[0.1, 0.2], &[0.2]).is_err());
}

#[test]
fn report_roundtrips_and_tests_against_the_first_strategy() {
    let gt = [[1, 2, 3], [4, 5, 6], [7, 8, 9], [1, 5, 9]];
    let lists: [[[ItemId; 3]; 4]; 2] =
        [[[1, 9, 8], [6, 1, 2], [3, 4, 5], [2, 3, 4]], [[1, 2, 8], [4, 5, 2], [9, 7, 1], [9, 1, 2]]];
    let strategies = lists
        .iter()
        .enumerate()
        .map(|(s, ls)| {
            let users: Vec<UserMetrics> = ls.iter().zip(&gt).map(|(r, g)| UserMetrics::compute(r, g, 3)).collect();
            StrategyReport::build(format!("s{s}"), serde_json::json!({ "strategy": s }), &users, 0)
        })
        .collect();
    let mut report = EvalReport {
        version: 1,
        split: "test".into(),
        k: 3,
        n_holdout: 3,
        seed: 0,
        users: vec![0, 1, 2, 3],
        strategies,
    };
    report.add_significance().unwrap();
    assert!(report.strategies[0].vs_baseline.is_none());
    let vs = report.strategies[1].vs_baseline.as_ref().unwrap();
    assert_eq!(vs.baseline, "s0");
    let direct = paired_ttest(&report.strategies[1].per_user.ndcg, &report.strategies[0].per_user.ndcg).unwrap();
    assert_eq!(vs.ndcg, direct);
    let json = report.to_json().unwrap();
    assert_eq!(EvalReport::from_json(&json).unwrap(), report);
    assert_eq!(EvalReport::from_json(&json).unwrap().to_json().unwrap(), json);
    let table = report.metrics_table().unwrap();
    assert!(table.starts_with("strategy,metric,value,t_vs_baseline,p_vs_baseline"));
    assert_eq!(table.lines().count(), 1 + 2 * 3);
}

#[test]
fn random_lists_recall_about_k_over_the_catalog() {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
    let items: Vec<ItemId> = (1..=100).collect();
    let mut total = 0.0;
    for _ in 0..4000 {
        let mut perm = items.clone();
        perm.shuffle(&mut rng);
        let gt = [perm[50], perm[70], perm[90]];
        perm.shuffle(&mut rng);
        total += recall_at_k(&perm, &gt, 10);
    }
    assert!((total / 4000.0 - 0.1).abs() < 0.01);
}
