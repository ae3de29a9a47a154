mod common;

use proptest::prelude::*;
use vau_core::answers::{AnswerList, AnswerRecord, TaskId};
use vau_core::embed::{cosine, hash_embed, EmbeddingProvider};
use vau_core::metrics::{hierarchy_score, temporal_iou, GtRecord, Interval, MetricConfig};
use vau_core::rewards::{group_advantages, hierarchy_reward, RewardConfig};
use vau_core::taxonomy::{Hierarchy, TaxonomyNode, EVENT_LEVEL};

fn bu_record(leaf: &TaxonomyNode) -> AnswerRecord {
    let t = leaf.triplet.as_ref().unwrap();
    AnswerRecord::new()
        .text("event", &t.event)
        .text("scene", &t.scene)
        .text("attribute", &t.attribute)
        .number("anomaly", if t.anomaly { 1.0 } else { 0.0 })
}

fn eval_cfg(tau: f64) -> MetricConfig {
    MetricConfig {
        tau,
        ..MetricConfig::default()
    }
}

#[test]
fn leaf_pairs_on_random_trees_follow_the_distance_oracle() {
    let provider = EmbeddingProvider::hash(256).unwrap();
    let spec = TaskId::AnomalyBu.spec();
    for seed in 0..8 {
        let doc = common::random_doc(seed);
        let h = Hierarchy::from_document(doc.clone()).unwrap();
        let leaves: Vec<&TaxonomyNode> = h.leaves().collect();
        for a in &leaves {
            for b in leaves.iter().step_by(3) {
                let out = AnswerList::from_records(vec![bu_record(a)]);
                let gt = vec![GtRecord::at(bu_record(b), b.id.clone())];
                let d = common::oracle_distance(&doc, &a.id, &b.id);
                let want = 1.0 - f64::from(d) / 5.0;
                let smooth = hierarchy_score(&out, &gt, &spec, &h, &provider, &eval_cfg(1.0)).unwrap();
                let reward = hierarchy_reward(&out, &gt, &spec, &h, &provider, &RewardConfig::default()).unwrap();
                let strict = hierarchy_score(&out, &gt, &spec, &h, &provider, &eval_cfg(0.5)).unwrap();
                assert!(
                    (smooth - want).abs() < 1e-12,
                    "{} vs {}: {smooth} != {want}",
                    a.id,
                    b.id
                );
                assert!((smooth - reward).abs() < 1e-12);
                assert!((0.0..=1.0).contains(&strict));
                assert_eq!(strict, if d <= 2 { want } else { 0.0 });
                if a.id == b.id {
                    assert_eq!(smooth, 1.0);
                }
                if h.state_of(&a.id).unwrap() != h.state_of(&b.id).unwrap() {
                    assert_eq!(smooth, 0.0);
                }
            }
        }
    }
}

#[test]
fn event_level_scores_use_four_levels() {
    let provider = EmbeddingProvider::hash(256).unwrap();
    let spec = TaskId::EventRec.spec();
    let doc = common::random_doc(99);
    let h = Hierarchy::from_document(doc.clone()).unwrap();
    let events: Vec<&TaxonomyNode> = h.nodes().filter(|n| n.level == EVENT_LEVEL).collect();
    for b in &events {
        // The gold label itself always retrieves a node at distance 0 or a
        // same-label sibling; the score is 1 - d/4 in both cases.
        let out = AnswerList::from_records(vec![AnswerRecord::new().text("event", &b.label)]);
        let gt = vec![GtRecord::at(AnswerRecord::new().text("event", &b.label), b.id.clone())];
        let s = hierarchy_score(&out, &gt, &spec, &h, &provider, &eval_cfg(1.0)).unwrap();
        let proxy = h
            .find_by_text(&b.label, EVENT_LEVEL)
            .into_iter()
            .find(|n| h.state_of(&n.id).unwrap() == h.state_of(&b.id).unwrap())
            .unwrap();
        let d = common::oracle_distance(&doc, &proxy.id, &b.id);
        assert!((s - (1.0 - f64::from(d) / 4.0)).abs() < 1e-12);
    }
}

fn interval() -> impl Strategy<Value = Interval> {
    (0.0f64..50.0, 0.0f64..20.0).prop_map(|(s, l)| Interval { start: s, end: s + l })
}

proptest! {
    #[test]
    fn cosine_is_symmetric_and_bounded(a in "[a-z ]{0,24}", b in "[a-z ]{0,24}") {
        let (u, v) = (hash_embed(&a, 64), hash_embed(&b, 64));
        let c = cosine(&u, &v).unwrap();
        prop_assert_eq!(c, cosine(&v, &u).unwrap());
        prop_assert!((-1.0..=1.0).contains(&c));
    }

    #[test]
    fn tiou_is_symmetric_and_bounded(p in prop::collection::vec(interval(), 0..5), g in prop::collection::vec(interval(), 0..5)) {
        let x = temporal_iou(&p, &g).unwrap();
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert!((x - temporal_iou(&g, &p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn advantages_are_standardized(r in prop::collection::vec(-3.0f64..3.0, 4), shift in -10.0f64..10.0, scale in 0.1f64..10.0) {
        let a = group_advantages(&r);
        let spread = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - r.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-6);
        let mean = a.iter().sum::<f64>() / 4.0;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        prop_assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9);
        // Affine maps with positive scale leave advantages unchanged.
        let moved: Vec<f64> = r.iter().map(|x| x * scale + shift).collect();
        for (x, y) in a.iter().zip(group_advantages(&moved)) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}
