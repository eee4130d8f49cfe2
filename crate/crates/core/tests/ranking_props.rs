mod common;

use common::*;
use kge::eval::{evaluate, rank_among, rank_query, Metrics, TiePolicy};
use kge::graph::{Direction, Query, Triple, TripleStore};
use kge::models::{EmbeddingTable, Family, Model, ModelSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn rank_query_matches_the_sort_oracle() {
    let out = ranking_suite(60, 3);
    assert!(out.ok, "{}", out.detail);
}

#[test]
fn hand_metrics() {
    let m = Metrics::from_ranks(&[1.0, 2.0, 4.0]);
    assert!((m.mrr - 7.0 / 12.0).abs() < 1e-15);
    assert!((m.hits_at_3 - 2.0 / 3.0).abs() < 1e-15);
    let perfect = Metrics::from_ranks(&[1.0; 5]);
    assert_eq!((perfect.mrr, perfect.hits_at_1, perfect.mr), (1.0, 1.0, 1.0));
}

#[test]
fn worked_tie_examples() {
    let scores = [0.9, 0.5, 0.9, 0.1];
    let all = [0, 1, 2, 3];
    assert_eq!(rank_among(&scores, &all, 0, TiePolicy::Optimistic).unwrap(), 1.0);
    assert_eq!(rank_among(&scores, &all, 0, TiePolicy::Pessimistic).unwrap(), 2.0);
    assert_eq!(rank_among(&scores, &all, 0, TiePolicy::Mean).unwrap(), 1.5);
    assert_eq!(rank_among(&scores, &[0, 1, 3], 0, TiePolicy::Pessimistic).unwrap(), 1.0);
}

/// DistMult with one-dimensional embeddings, so every score is `h·r·t` and
/// the expected ranks are easy to state.
fn scalar_model(values: &[f64]) -> (Model, EmbeddingTable<f64>) {
    let spec = ModelSpec::new(Family::DistMult, 1);
    let mut t = EmbeddingTable::<f64>::zeros(values.len(), 1, 1, 1, 0);
    for (i, &v) in values.iter().enumerate() {
        t.entity_mut(i)[0] = v;
    }
    t.relation_mut(0)[0] = 1.0;
    (Model::new(spec).unwrap(), t)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rank_among_agrees_with_sorting(scores in prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), -5.0..5.0f64], 1..20),
                                      pick in any::<prop::sample::Index>()) {
        let all: Vec<usize> = (0..scores.len()).collect();
        let target = pick.index(scores.len());
        for policy in TiePolicy::ALL {
            prop_assert_eq!(rank_among(&scores, &all, target, policy).unwrap(), sort_rank(&scores, &all, target, policy));
        }
    }

    #[test]
    fn strictly_increasing_maps_keep_every_rank(values in prop::collection::vec(prop_oneof![Just(0.5), 0.1..3.0f64], 3..15),
                                                seed in any::<u64>()) {
        let n = values.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = random_store(&mut rng, n, 1, 3 * n);
        let (model, table) = scalar_model(&values);
        // x ↦ exp(x) + x³ is strictly increasing; with positive entries the
        // candidate scores h·r·c are reordered by it exactly as c is
        let mapped: Vec<f64> = values.iter().map(|v| v.exp() + v.powi(3)).collect();
        let (_, table2) = scalar_model(&mapped);
        for &t in store.train() {
            for dir in [Direction::Tail, Direction::Head] {
                let q = Query::from_triple(t, dir);
                let target = if dir == Direction::Tail { t.tail } else { t.head };
                for policy in TiePolicy::ALL {
                    let a = rank_query(&model, &table, &store, &q, target, policy).unwrap();
                    let b = rank_query(&model, &table2, &store, &q, target, policy).unwrap();
                    prop_assert_eq!(a.raw_rank, b.raw_rank);
                    prop_assert_eq!(a.filtered_rank, b.filtered_rank);
                }
            }
        }
    }

    #[test]
    fn metric_bounds_and_filtering(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ne = rng.gen_range(2..20);
        let store = random_store(&mut rng, ne, 2, 40);
        let specs = ranking_specs();
        let spec = specs[rng.gen_range(0..specs.len())].clone();
        let table = tied_table(&spec, ne, 2, &mut rng);
        let model = Model::new(spec).unwrap();
        for policy in TiePolicy::ALL {
            let (report, ranks) = evaluate(&model, &table, &store, store.train(), policy).unwrap();
            prop_assert_eq!(report.queries, 2 * store.train().len());
            for r in &ranks {
                prop_assert!(r.filtered_rank >= 1.0 && r.filtered_rank <= r.raw_rank);
            }
            for m in [report.raw, report.filtered] {
                prop_assert!(m.hits_at_1 >= 0.0 && m.hits_at_10 <= 1.0);
                prop_assert!(m.hits_at_1 <= m.hits_at_3 && m.hits_at_3 <= m.hits_at_10);
                prop_assert!(m.mrr > 0.0 && m.mrr <= 1.0);
                prop_assert!(m.mr >= 1.0);
            }
            prop_assert!(report.filtered.mrr >= report.raw.mrr);
        }
    }
}

#[test]
fn constant_scores_separate_the_tie_policies() {
    let (model, table) = scalar_model(&[1.0; 6]);
    let store = TripleStore::new(6, 1, vec![Triple::new(0, 0, 1)], vec![], vec![]).unwrap();
    let q = Query::from_triple(Triple::new(0, 0, 1), Direction::Tail);
    let got: Vec<f64> = TiePolicy::ALL
        .iter()
        .map(|&p| rank_query(&model, &table, &store, &q, 1, p).unwrap().raw_rank)
        .collect();
    assert_eq!(got, vec![3.5, 6.0, 1.0]);
}
