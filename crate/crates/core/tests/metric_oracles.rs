//! Caption metrics and ranking checked against naive reimplementations.

mod common;

use std::collections::BTreeMap;

use common::oracles::{corpus, oracle_bleu, oracle_cider};
use esper_core::corpus::World;
use esper_core::eval::{bleu4_text, cider, rank_scores, retrieval_baseline};
use esper_core::scorer::{extract_features, AttributeEncoder, FeatureScorer};

#[test]
fn bleu4_matches_brute_force_per_instance() {
    let (cands, refs) = corpus();
    for (id, c) in &cands {
        let got = bleu4_text(c, &refs[id]);
        let want = oracle_bleu(c, &refs[id]);
        assert!((got - want).abs() < 1e-6, "id {id}: {got} vs {want}");
    }
}

#[test]
fn cider_matches_brute_force_per_instance() {
    let (cands, refs) = corpus();
    let map: BTreeMap<u64, String> = cands.iter().map(|(i, c)| (*i, c.to_string())).collect();
    let got = cider(&map, &refs).unwrap();
    let want = oracle_cider(&cands, &refs);
    for (id, w) in &want {
        assert!(
            (got.per_id[id] - w).abs() < 1e-6,
            "id {id}: {} vs {w}",
            got.per_id[id]
        );
    }
    let mean = want.values().sum::<f64>() / want.len() as f64;
    assert!((got.mean - mean).abs() < 1e-9);
}

#[test]
fn mrr_and_recall_hand_cases() {
    let r = rank_scores(&[0.9, 0.1, 0.2, 0.3], Some(0));
    assert_eq!(r.reciprocal_rank(), Some(1.0));
    assert_eq!(r.recall_at_1(), Some(1.0));
    let r = rank_scores(&[0.0, 0.4, 0.3, 0.2], Some(0));
    assert_eq!(r.gold_rank, Some(4));
    assert_eq!(r.reciprocal_rank(), Some(0.25));
    assert_eq!(r.recall_at_1(), Some(0.0));
}

#[test]
fn retrieval_baseline_matches_exhaustive_search() {
    let world = World::shapeworld();
    let scenes = world.generate_scenes(12, 3, 0).unwrap();
    let enc = AttributeEncoder::new(&world, 32, 4).unwrap();
    let features = extract_features(&enc, &scenes).unwrap();
    let pool: Vec<String> = scenes.iter().map(|s| world.describe(s)).collect();
    let scorer = FeatureScorer {
        encoder: enc.clone(),
        features: features.clone(),
    };
    for s in &scenes {
        let (idx, cos) = retrieval_baseline(&scorer, s.scene_id, &pool).unwrap();
        let mut best = (0, f64::MIN);
        for (i, text) in pool.iter().enumerate() {
            let c = esper_core::scorer::cosine(
                &features.get(s.scene_id).unwrap().0,
                &enc.encode_words(text.split_whitespace()).0,
            )
            .unwrap();
            if c > best.1 {
                best = (i, c);
            }
        }
        assert_eq!(idx, best.0);
        assert!((cos - best.1).abs() < 1e-12);
    }
}
