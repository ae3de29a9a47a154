#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vau_core::taxonomy::{DocumentNode, DocumentTriplet, TaxonomyDocument};

const DOMAINS: [&str; 3] = ["Safety", "Laws & Rules", "Life & Health"];
const EFFECTS: [&str; 5] = ["Traffic", "Crime", "Fire Risk", "Health Harm", "Leisure"];
const EVENTS: [&str; 7] = [
    "crossing road",
    "theft",
    "smoking",
    "fishing",
    "fighting",
    "running",
    "motorcycling",
];
const SCENES: [&str; 5] = ["road", "shop", "park", "highway", "station"];
const ATTRS: [&str; 5] = ["masked man", "green light", "crowd", "child", "without helmet"];

fn node(id: String, label: &str, level: u8, parent: &str) -> DocumentNode {
    DocumentNode {
        id,
        label: label.into(),
        level,
        parent: Some(parent.into()),
        triplet: None,
    }
}

/// Random five-level tree with 1..=3 children per inner node and unique
/// triplet text per leaf.
pub fn random_doc(seed: u64) -> TaxonomyDocument {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = vec![DocumentNode {
        id: "root".into(),
        label: "root".into(),
        level: 0,
        parent: None,
        triplet: None,
    }];
    let mut leaf_no = 0usize;
    for (state, anomaly) in [("Anomaly", true), ("Normality", false)] {
        let s_id = state[..1].to_string();
        nodes.push(node(s_id.clone(), state, 1, "root"));
        for d in 0..rng.gen_range(1..=3) {
            let d_id = format!("{s_id}.{d}");
            nodes.push(node(d_id.clone(), DOMAINS[rng.gen_range(0..DOMAINS.len())], 2, &s_id));
            for e in 0..rng.gen_range(1..=3) {
                let e_id = format!("{d_id}.{e}");
                nodes.push(node(e_id.clone(), EFFECTS[rng.gen_range(0..EFFECTS.len())], 3, &d_id));
                for v in 0..rng.gen_range(1..=3) {
                    let v_id = format!("{e_id}.{v}");
                    let event = EVENTS[rng.gen_range(0..EVENTS.len())];
                    nodes.push(node(v_id.clone(), event, 4, &e_id));
                    for l in 0..rng.gen_range(1..=3) {
                        leaf_no += 1;
                        let mut leaf = node(format!("{v_id}.{l}"), event, 5, &v_id);
                        leaf.triplet = Some(DocumentTriplet {
                            event: event.into(),
                            scene: SCENES[rng.gen_range(0..SCENES.len())].into(),
                            attribute: format!("{} {leaf_no}", ATTRS[rng.gen_range(0..ATTRS.len())]),
                            anomaly,
                        });
                        nodes.push(leaf);
                    }
                }
            }
        }
    }
    TaxonomyDocument { nodes }
}

/// Levels climbed from `a` to the lowest common ancestor with `b`, by
/// walking parent links in the raw document.
pub fn oracle_distance(doc: &TaxonomyDocument, a: &str, b: &str) -> u8 {
    let parent = |id: &str| doc.nodes.iter().find(|n| n.id == id).and_then(|n| n.parent.clone());
    let chain = |mut id: String| {
        let mut out = vec![id.clone()];
        while let Some(p) = parent(&id) {
            out.push(p.clone());
            id = p;
        }
        out
    };
    let ca = chain(a.to_string());
    let cb = chain(b.to_string());
    ca.iter().position(|x| cb.contains(x)).unwrap() as u8
}
