mod common;

use std::collections::HashSet;
use std::num::NonZeroUsize;

use common::{
    oracle_phrase, oracle_rank_of, oracle_ranking, random_entities, random_query, random_scope,
    seeded, toy_instance,
};
use proptest::prelude::*;
use propsearch::{
    build_gold, entity_simulation, evaluate, rank_of_target, CandidateScope, EvalScope,
    GoldInstance, GoldOptions, MatchTier, Metrics, PropertyId, Searcher, Stopwords,
};

fn no_stopwords() -> &'static Stopwords {
    static NONE: std::sync::OnceLock<Stopwords> = std::sync::OnceLock::new();
    NONE.get_or_init(Stopwords::none)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn semantic_ranking_matches_oracle(seed in any::<u64>(), grid in any::<bool>()) {
        let mut rng = seeded(seed);
        let toy = toy_instance(&mut rng, 50, 20, grid);
        let s = Searcher::new(&toy.index, &toy.model, no_stopwords()).unwrap();
        let query = random_query(&mut rng, &toy.vocab);
        let tokens: Vec<String> = query.split(' ').map(str::to_owned).collect();
        let ranked = s.rank_semantic(&query, CandidateScope::All).unwrap();
        match oracle_phrase(&toy.model, &tokens) {
            Some(q) => prop_assert_eq!(ranked, oracle_ranking(&toy.index, &q, None)),
            None => prop_assert!(ranked.is_empty()),
        }
    }

    #[test]
    fn scope_restriction_preserves_relative_order(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let toy = toy_instance(&mut rng, 50, 20, true);
        let s = Searcher::new(&toy.index, &toy.model, no_stopwords()).unwrap();
        let query = random_query(&mut rng, &toy.vocab);
        let scope = random_scope(&mut rng, &toy.index);
        let full = s.rank_semantic(&query, CandidateScope::All).unwrap();
        let scoped = s.rank_semantic(&query, CandidateScope::Only(&scope)).unwrap();
        let filtered: Vec<_> = full.into_iter().filter(|(id, _)| scope.contains(id)).collect();
        prop_assert_eq!(scoped, filtered);
    }

    #[test]
    fn positive_scaling_keeps_order(seed in any::<u64>(), scale in 0.01f32..100.0) {
        let mut rng = seeded(seed);
        let toy = toy_instance(&mut rng, 50, 20, false);
        let s = Searcher::new(&toy.index, &toy.model, no_stopwords()).unwrap();
        let query = random_query(&mut rng, &toy.vocab);
        let Some(q) = s.query_vector(&query) else { return Ok(()); };
        let scaled: Vec<f32> = q.as_slice().iter().map(|c| c * scale).collect();
        let base = s.rank_vector(q.as_slice(), CandidateScope::All).unwrap();
        let moved = s.rank_vector(&scaled, CandidateScope::All).unwrap();
        prop_assert_eq!(base.len(), moved.len());
        for (i, ((a, sa), (b, sb))) in base.iter().zip(&moved).enumerate() {
            prop_assert!((sa - sb).abs() < 1e-6);
            if a != b {
                // only rounding-level near-ties may swap
                let (_, other) = base.iter().find(|(id, _)| id == b).unwrap();
                prop_assert!((sa - other).abs() < 1e-6, "position {} swapped {} and {}", i, a, b);
            }
        }
    }

    #[test]
    fn search_matches_tiered_oracle(seed in any::<u64>(), limit in 1usize..60) {
        let mut rng = seeded(seed);
        let toy = toy_instance(&mut rng, 50, 20, true);
        let s = Searcher::new(&toy.index, &toy.model, no_stopwords()).unwrap();
        // sometimes query an existing label or alias verbatim
        let query = match seed % 3 {
            0 => toy.records[0].label.clone(),
            1 => toy.records.iter().flat_map(|r| r.aliases.clone()).next().unwrap_or_else(|| "w0".into()),
            _ => random_query(&mut rng, &toy.vocab),
        };
        let results = s.search(&query, CandidateScope::All, NonZeroUsize::new(limit).unwrap()).unwrap();

        let needle = query.trim().to_lowercase();
        let mut expected: Vec<(PropertyId, MatchTier)> = Vec::new();
        let entries = toy.index.entries();
        expected.extend(entries.iter().filter(|e| e.label.to_lowercase() == needle).map(|e| (e.id, MatchTier::LabelExact)));
        let taken: HashSet<PropertyId> = expected.iter().map(|(id, _)| *id).collect();
        expected.extend(
            entries.iter()
                .filter(|e| !taken.contains(&e.id) && e.aliases.iter().any(|a| a.to_lowercase() == needle))
                .map(|e| (e.id, MatchTier::AliasExact)),
        );
        let taken: HashSet<PropertyId> = expected.iter().map(|(id, _)| *id).collect();
        let tokens: Vec<String> = query.split_whitespace().map(str::to_owned).collect();
        if let Some(q) = oracle_phrase(&toy.model, &tokens) {
            expected.extend(
                oracle_ranking(&toy.index, &q, None)
                    .into_iter()
                    .filter(|(id, _)| !taken.contains(id))
                    .map(|(id, _)| (id, MatchTier::Semantic)),
            );
        }
        expected.truncate(limit);

        let got: Vec<(PropertyId, MatchTier)> = results.iter().map(|m| (m.property_id, m.tier)).collect();
        prop_assert_eq!(got, expected);
        let ids: HashSet<_> = results.iter().map(|m| m.property_id).collect();
        prop_assert_eq!(ids.len(), results.len());
        for (i, m) in results.iter().enumerate() {
            prop_assert_eq!(m.rank, i + 1);
        }
        for pair in results.windows(2) {
            prop_assert!(pair[0].tier <= pair[1].tier);
            if pair[0].tier == MatchTier::Semantic {
                prop_assert!(pair[0].score >= pair[1].score);
            }
        }
    }

    #[test]
    fn unique_label_query_ranks_first(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let toy = toy_instance(&mut rng, 50, 20, true);
        let s = Searcher::new(&toy.index, &toy.model, no_stopwords()).unwrap();
        for record in &toy.records {
            let label = record.label.to_lowercase();
            if toy.records.iter().filter(|r| r.label.to_lowercase() == label).count() == 1 {
                let results = s.search(&record.label, CandidateScope::All, NonZeroUsize::new(3).unwrap()).unwrap();
                prop_assert_eq!(results[0].property_id, record.id);
                prop_assert_eq!(results[0].rank, 1);
            }
        }
    }

    #[test]
    fn rank_of_target_matches_oracle_and_scope_never_hurts(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let toy = toy_instance(&mut rng, 50, 20, seed % 2 == 0);
        let s = Searcher::new(&toy.index, &toy.model, no_stopwords()).unwrap();
        let scope = random_scope(&mut rng, &toy.index);
        for record in &toy.records {
            let alias = random_query(&mut rng, &toy.vocab);
            let inst = GoldInstance { alias: alias.clone(), target: record.id, entity: None };
            let tokens: Vec<String> = alias.split(' ').map(str::to_owned).collect();
            let q = oracle_phrase(&toy.model, &tokens);

            let full = rank_of_target(&s, &inst, CandidateScope::All).unwrap();
            let expected = q.as_ref().and_then(|q| oracle_rank_of(&toy.index, q, None, record.id));
            prop_assert_eq!(full, expected);

            if scope.contains(&record.id) {
                let scoped = rank_of_target(&s, &inst, CandidateScope::Only(&scope)).unwrap();
                let expected = q.as_ref().and_then(|q| oracle_rank_of(&toy.index, q, Some(&scope), record.id));
                prop_assert_eq!(scoped, expected);
                prop_assert_eq!(scoped.is_some(), full.is_some());
                if let (Some(a), Some(b)) = (scoped, full) {
                    prop_assert!(a <= b);
                }
            }
        }
    }

    #[test]
    fn metric_bounds(ranks in prop::collection::vec(prop::option::of(1usize..40), 1..60)) {
        let m = Metrics::from_ranks(&ranks);
        prop_assert!(m.top1 <= m.top3 && m.top3 <= m.top10 && m.top10 <= 1.0);
        prop_assert!(m.mrr >= m.top1 && m.mrr <= 1.0);
        prop_assert_eq!(m.unresolved, ranks.iter().filter(|r| r.is_none()).count());
    }

    #[test]
    fn single_instance_mrr(rank in 1usize..10_000) {
        prop_assert_eq!(Metrics::from_ranks(&[Some(rank)]).mrr, 1.0 / rank as f64);
    }

    #[test]
    fn entity_simulation_is_pure(seed in any::<u64>(), sample_seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let toy = toy_instance(&mut rng, 30, 8, true);
        let s = Searcher::new(&toy.index, &toy.model, no_stopwords()).unwrap();
        let map = random_entities(&mut rng, &toy.index, 20);
        let run = || entity_simulation(&s, &map, &toy.records, 10, sample_seed, GoldOptions::default());
        match (run(), run()) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.to_text(), b.to_text()),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "runs disagree"),
        }
    }
}

#[test]
fn aggregation_ignores_thread_count() {
    let mut rng = seeded(99);
    let toy = toy_instance(&mut rng, 50, 20, false);
    let s = Searcher::new(&toy.index, &toy.model, no_stopwords()).unwrap();
    let mut gold = build_gold(&toy.records, GoldOptions::default());
    gold.extend((0..500).map(|i| GoldInstance {
        alias: random_query(&mut rng, &toy.vocab),
        target: toy.records[i % toy.records.len()].id,
        entity: None,
    }));
    let reports: Vec<String> = [1, 2, 4]
        .into_iter()
        .map(|threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| evaluate(&s, &gold, EvalScope::Full).unwrap().to_text())
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
}

#[test]
fn per_entity_evaluation_requires_entities() {
    let mut rng = seeded(3);
    let toy = toy_instance(&mut rng, 10, 4, true);
    let s = Searcher::new(&toy.index, &toy.model, no_stopwords()).unwrap();
    let map = random_entities(&mut rng, &toy.index, 3);
    let gold = vec![GoldInstance {
        alias: "w0".into(),
        target: toy.records[0].id,
        entity: None,
    }];
    assert!(evaluate(&s, &gold, EvalScope::PerEntity(&map)).is_err());
}
