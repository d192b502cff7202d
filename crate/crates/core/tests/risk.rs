use figpriv_core::risk::{
    build_graph, news_story_records, risk_scores, spearman, spearman_slices, toy_ecosystem_records, Algorithm, Channel,
    EdgeRecord, ScoreConfig,
};
use figpriv_core::taxonomy::{default_threshold, high_risk_for_category, CategoryTable, UnscoredPolicy};
use proptest::prelude::*;

fn edges() -> impl Strategy<Value = Vec<EdgeRecord>> {
    prop::collection::vec((0usize..8, 0usize..8, 0.01f64..10.0, 0.01f64..10.0), 1..30).prop_map(|raw| {
        raw.into_iter()
            .filter(|(s, t, _, _)| s != t)
            .map(|(s, t, f, l)| EdgeRecord::new(&format!("v{s}"), &format!("v{t}"), f, l))
            .collect()
    })
}

proptest! {
    #[test]
    fn standard_pagerank_is_a_distribution(records in edges()) {
        prop_assume!(!records.is_empty());
        let g = build_graph(&records).unwrap();
        for channel in [Channel::Frequency, Channel::Loss] {
            let v = risk_scores(&g, &ScoreConfig::default().with_channel(channel)).unwrap();
            prop_assert!((v.total() - 1.0).abs() < 1e-8);
            prop_assert!(v.scores.values().all(|s| *s > 0.0));
        }
    }

    #[test]
    fn ehits_halves_each_sum_to_one(records in edges()) {
        prop_assume!(!records.is_empty());
        let g = build_graph(&records).unwrap();
        let v = risk_scores(&g, &ScoreConfig::default().with_algorithm(Algorithm::Ehits)).unwrap();
        prop_assert!((v.total() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn spearman_is_symmetric_and_bounded(a in prop::collection::vec(0u8..6, 3..25), seed in 0u64..1000) {
        let xs: Vec<f64> = a.iter().map(|&x| x as f64).collect();
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| ((i as u64 * 31 + seed) % 7) as f64 - x).collect();
        if let (Ok(r1), Ok(r2)) = (spearman_slices(&xs, &ys), spearman_slices(&ys, &xs)) {
            prop_assert!((r1 - r2).abs() < 1e-12);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r1));
        }
    }

    #[test]
    fn raising_tau_never_grows_the_high_risk_set(t1 in 0.0f64..0.05, t2 in 0.0f64..0.05) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let g = build_graph(&toy_ecosystem_records()).unwrap();
        let scores = risk_scores(&g, &ScoreConfig::default()).unwrap();
        let table = CategoryTable::bundled();
        for cat in table.iter() {
            let a = high_risk_for_category(&table, &scores, &cat.name, lo, UnscoredPolicy::Exclude).unwrap();
            let b = high_risk_for_category(&table, &scores, &cat.name, hi, UnscoredPolicy::Exclude).unwrap();
            prop_assert!(b.members.is_subset(&a.members));
        }
    }
}

#[test]
fn fixture_threshold_separates_card_number_from_expiry() {
    let g = build_graph(&toy_ecosystem_records()).unwrap();
    let scores = risk_scores(&g, &ScoreConfig::default()).unwrap();
    let set = high_risk_for_category(
        &CategoryTable::bundled(),
        &scores,
        "credit or debit card",
        figpriv_core::fixtures::FIXTURE_TAU,
        UnscoredPolicy::Exclude,
    )
    .unwrap();
    assert!(set.contains("credit card number"));
    assert!(!set.contains("bank card expiration date"));
    assert!(default_threshold(&scores) > 0.0);
}

#[test]
fn news_graph_scorers_agree_in_sign() {
    let g = build_graph(&news_story_records()).unwrap();
    let pr = risk_scores(&g, &ScoreConfig::default()).unwrap();
    let eh = risk_scores(&g, &ScoreConfig::default().with_algorithm(Algorithm::Ehits)).unwrap();
    let rho = spearman(&pr, &eh).unwrap();
    assert!(rho > 0.0 && rho <= 1.0);
}
