//! The five-level event-centric hierarchy.
//!
//! Level 0 is a virtual root above the two states (`Anomaly`, `Normality`),
//! followed by domains (1 → 2), effects (3), events (4) and context-triplet
//! leaves (5). Tree distance between two equal-level nodes is the number of
//! levels climbed to reach their lowest common ancestor.

use std::collections::HashSet;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{cosine, normalize_text, EmbedError, EmbeddingProvider, EmbeddingVector};

pub type NodeId = String;

/// Depth at which every context-triplet leaf sits.
pub const LEAF_LEVEL: u8 = 5;
pub const EVENT_LEVEL: u8 = 4;

pub const ANOMALY_LABEL: &str = "Anomaly";
pub const NORMALITY_LABEL: &str = "Normality";

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("duplicate node id {0:?}")]
    DuplicateId(NodeId),
    #[error("no level-0 root node")]
    MissingRoot,
    #[error("more than one root: {0:?} and {1:?}")]
    MultipleRoots(NodeId, NodeId),
    #[error("node {0:?} has no parent but is not at level 0")]
    Orphan(NodeId),
    #[error("node {id:?} references unknown parent {parent:?}")]
    UnknownParent { id: NodeId, parent: NodeId },
    #[error("cycle through node {0:?}")]
    Cycle(NodeId),
    #[error("level skip at node {id:?}: level {level} under parent at level {parent_level}")]
    LevelSkip { id: NodeId, level: u8, parent_level: u8 },
    #[error("node {id:?} has level {level} outside 0..=5")]
    LevelOutOfRange { id: NodeId, level: u8 },
    #[error("leaf {0:?} has no triplet payload")]
    MissingTriplet(NodeId),
    #[error("node {0:?} carries a triplet but has children")]
    UnexpectedTriplet(NodeId),
    #[error("level-1 states must be exactly \"Anomaly\" and \"Normality\", found {0:?}")]
    BadStates(Vec<String>),
    #[error("leaf {0:?}: anomaly flag disagrees with its state branch")]
    AnomalyFlagMismatch(NodeId),
    #[error("leaf {0:?}: empty event")]
    EmptyEvent(NodeId),
    #[error("leaf {leaf:?} duplicates triplet of {other:?} in the same state branch")]
    DuplicateTriplet { leaf: NodeId, other: NodeId },
    #[error("unknown node id {0:?}")]
    UnknownNode(NodeId),
    #[error("nodes {a:?} (level {level_a}) and {b:?} (level {level_b}) are not on the same level")]
    LevelMismatch {
        a: NodeId,
        level_a: u8,
        b: NodeId,
        level_b: u8,
    },
    #[error("no nodes at level {level} in branch {branch:?}")]
    NoCandidates { level: u8, branch: BranchFilter },
    #[error("malformed taxonomy document at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("cannot read taxonomy {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum State {
    Anomaly,
    Normality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchFilter {
    AnomalyOnly,
    NormalityOnly,
    Both,
}

impl BranchFilter {
    pub fn admits(self, state: State) -> bool {
        match self {
            BranchFilter::AnomalyOnly => state == State::Anomaly,
            BranchFilter::NormalityOnly => state == State::Normality,
            BranchFilter::Both => true,
        }
    }

    pub fn only(state: State) -> Self {
        match state {
            State::Anomaly => BranchFilter::AnomalyOnly,
            State::Normality => BranchFilter::NormalityOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextTriplet {
    pub event: String,
    pub scene: String,
    pub attribute: String,
    pub anomaly: bool,
    pub leaf_id: NodeId,
}

impl ContextTriplet {
    pub fn text(&self) -> String {
        render_triplet_text(&self.event, &self.scene, &self.attribute)
    }
}

/// Canonical text used for embedding a triplet.
pub fn render_triplet_text(event: &str, scene: &str, attribute: &str) -> String {
    format!(
        "event: {}; scene: {}; attribute: {}",
        normalize_text(event),
        normalize_text(scene),
        normalize_text(attribute)
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaxonomyNode {
    pub id: NodeId,
    pub label: String,
    pub level: u8,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub triplet: Option<ContextTriplet>,
}

impl TaxonomyNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Text embedded for this node during proxy retrieval.
    pub fn embedding_text(&self) -> String {
        match &self.triplet {
            Some(t) => t.text(),
            None => normalize_text(&self.label),
        }
    }
}

// ---------------------------------------------------------------------------
// Document format

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyDocument {
    pub nodes: Vec<DocumentNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentNode {
    pub id: String,
    pub label: String,
    pub level: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triplet: Option<DocumentTriplet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentTriplet {
    pub event: String,
    pub scene: String,
    pub attribute: String,
    pub anomaly: bool,
}

// ---------------------------------------------------------------------------

/// Validated, immutable hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    nodes: IndexMap<NodeId, TaxonomyNode>,
    root: NodeId,
    max_leaf_depth: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaxonomyStats {
    /// Node count per level, index 0 being the root.
    pub level_counts: Vec<usize>,
    pub anomaly_leaves: usize,
    pub normality_leaves: usize,
}

impl Hierarchy {
    pub fn from_json_str(s: &str) -> Result<Self, TaxonomyError> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let doc: TaxonomyDocument = serde_path_to_error::deserialize(de).map_err(|e| TaxonomyError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        Self::from_document(doc)
    }

    pub fn from_path(path: &Path) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path).map_err(|e| TaxonomyError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json_str(&text)
    }

    /// Validates a document and builds the hierarchy.
    ///
    /// A childless node above level 5 that carries a triplet is padded down to
    /// level 5 with single-child chain nodes copying its label, so every
    /// triplet leaf sits at the same depth.
    pub fn from_document(doc: TaxonomyDocument) -> Result<Self, TaxonomyError> {
        let mut nodes: IndexMap<NodeId, TaxonomyNode> = IndexMap::with_capacity(doc.nodes.len());
        let mut payloads = Vec::with_capacity(doc.nodes.len());
        for n in doc.nodes {
            if n.level > LEAF_LEVEL {
                return Err(TaxonomyError::LevelOutOfRange {
                    id: n.id,
                    level: n.level,
                });
            }
            if nodes.contains_key(&n.id) {
                return Err(TaxonomyError::DuplicateId(n.id));
            }
            payloads.push(n.triplet);
            nodes.insert(
                n.id.clone(),
                TaxonomyNode {
                    id: n.id,
                    label: n.label,
                    level: n.level,
                    parent: n.parent,
                    children: Vec::new(),
                    triplet: None,
                },
            );
        }

        let mut root: Option<NodeId> = None;
        for node in nodes.values() {
            match &node.parent {
                None if node.level == 0 => {
                    if let Some(r) = &root {
                        return Err(TaxonomyError::MultipleRoots(r.clone(), node.id.clone()));
                    }
                    root = Some(node.id.clone());
                }
                None => return Err(TaxonomyError::Orphan(node.id.clone())),
                Some(p) if !nodes.contains_key(p) => {
                    return Err(TaxonomyError::UnknownParent {
                        id: node.id.clone(),
                        parent: p.clone(),
                    })
                }
                Some(_) => {}
            }
        }
        let root = root.ok_or(TaxonomyError::MissingRoot)?;

        // Every ancestor walk must end at the root.
        for id in nodes.keys() {
            let mut seen = HashSet::new();
            let mut cur = id;
            while let Some(p) = &nodes[cur].parent {
                if !seen.insert(cur) {
                    return Err(TaxonomyError::Cycle(id.clone()));
                }
                cur = p;
            }
        }

        for node in nodes.values() {
            if let Some(p) = &node.parent {
                let parent_level = nodes[p].level;
                if node.level != parent_level + 1 {
                    return Err(TaxonomyError::LevelSkip {
                        id: node.id.clone(),
                        level: node.level,
                        parent_level,
                    });
                }
            }
        }

        let links: Vec<(NodeId, NodeId)> = nodes
            .values()
            .filter_map(|n| n.parent.clone().map(|p| (p, n.id.clone())))
            .collect();
        for (p, c) in links {
            nodes[&p].children.push(c);
        }

        let mut states: Vec<String> = nodes[&root].children.iter().map(|c| nodes[c].label.clone()).collect();
        states.sort();
        if states != [ANOMALY_LABEL, NORMALITY_LABEL] {
            return Err(TaxonomyError::BadStates(states));
        }

        // Attach payloads, padding shallow triplet leaves down to LEAF_LEVEL.
        let ids: Vec<NodeId> = nodes.keys().cloned().collect();
        let mut padded = Vec::new();
        for (id, payload) in ids.into_iter().zip(payloads) {
            let node = &nodes[&id];
            match payload {
                Some(_) if !node.is_leaf() => return Err(TaxonomyError::UnexpectedTriplet(id)),
                Some(_) if node.level < 2 => return Err(TaxonomyError::UnexpectedTriplet(id)),
                Some(t) => {
                    if t.event.trim().is_empty() {
                        return Err(TaxonomyError::EmptyEvent(id));
                    }
                    if node.level < LEAF_LEVEL {
                        padded.push(id.clone());
                    }
                    nodes[&id].triplet = Some(ContextTriplet {
                        event: t.event,
                        scene: t.scene,
                        attribute: t.attribute,
                        anomaly: t.anomaly,
                        leaf_id: id.clone(),
                    });
                }
                None if node.is_leaf() && node.level >= 2 => return Err(TaxonomyError::MissingTriplet(id)),
                None => {}
            }
        }
        for id in padded {
            pad_leaf(&mut nodes, &id);
        }

        let max_leaf_depth = nodes
            .values()
            .filter(|n| n.is_leaf())
            .map(|n| n.level)
            .max()
            .unwrap_or(0);

        let h = Hierarchy {
            nodes,
            root,
            max_leaf_depth,
        };

        let mut seen: IndexMap<(State, String), NodeId> = IndexMap::new();
        for leaf in h.leaves() {
            let t = leaf.triplet.as_ref().expect("leaves carry triplets");
            let state = h.state_of(&leaf.id)?;
            if t.anomaly != (state == State::Anomaly) {
                return Err(TaxonomyError::AnomalyFlagMismatch(leaf.id.clone()));
            }
            if let Some(other) = seen.insert((state, t.text()), leaf.id.clone()) {
                return Err(TaxonomyError::DuplicateTriplet {
                    leaf: leaf.id.clone(),
                    other,
                });
            }
        }
        Ok(h)
    }

    /// Inverse of [`Hierarchy::from_document`] (padding nodes included).
    pub fn to_document(&self) -> TaxonomyDocument {
        TaxonomyDocument {
            nodes: self
                .nodes
                .values()
                .map(|n| DocumentNode {
                    id: n.id.clone(),
                    label: n.label.clone(),
                    level: n.level,
                    parent: n.parent.clone(),
                    triplet: n.triplet.as_ref().map(|t| DocumentTriplet {
                        event: t.event.clone(),
                        scene: t.scene.clone(),
                        attribute: t.attribute.clone(),
                        anomaly: t.anomaly,
                    }),
                })
                .collect(),
        }
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn max_leaf_depth(&self) -> u8 {
        self.max_leaf_depth
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &str) -> Result<&TaxonomyNode, TaxonomyError> {
        self.nodes
            .get(id)
            .ok_or_else(|| TaxonomyError::UnknownNode(id.to_string()))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TaxonomyNode> {
        self.nodes.values()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TaxonomyNode> {
        self.nodes.values().filter(|n| n.triplet.is_some())
    }

    pub fn parent_of(&self, id: &str) -> Result<Option<&TaxonomyNode>, TaxonomyError> {
        Ok(self.node(id)?.parent.as_deref().map(|p| &self.nodes[p]))
    }

    /// Ancestor of `id` sitting at `level` (the node itself when levels match).
    pub fn ancestor_at(&self, id: &str, level: u8) -> Result<&TaxonomyNode, TaxonomyError> {
        let mut cur = self.node(id)?;
        if cur.level < level {
            return Err(TaxonomyError::LevelMismatch {
                a: id.to_string(),
                level_a: cur.level,
                b: id.to_string(),
                level_b: level,
            });
        }
        while cur.level > level {
            cur = &self.nodes[cur.parent.as_deref().expect("non-root has a parent")];
        }
        Ok(cur)
    }

    /// State branch containing a non-root node.
    pub fn state_of(&self, id: &str) -> Result<State, TaxonomyError> {
        let node = self.node(id)?;
        if node.level == 0 {
            return Err(TaxonomyError::UnknownNode(format!("{id} (root has no state)")));
        }
        let state = self.ancestor_at(id, 1)?;
        Ok(if state.label == ANOMALY_LABEL {
            State::Anomaly
        } else {
            State::Normality
        })
    }

    /// Lowest common ancestor.
    pub fn lca(&self, a: &str, b: &str) -> Result<&TaxonomyNode, TaxonomyError> {
        let mut x = self.node(a)?;
        let mut y = self.node(b)?;
        while x.level > y.level {
            x = &self.nodes[x.parent.as_deref().expect("non-root")];
        }
        while y.level > x.level {
            y = &self.nodes[y.parent.as_deref().expect("non-root")];
        }
        while x.id != y.id {
            x = &self.nodes[x.parent.as_deref().expect("non-root")];
            y = &self.nodes[y.parent.as_deref().expect("non-root")];
        }
        Ok(x)
    }

    /// Levels climbed from `a` (or `b`) to their lowest common ancestor.
    pub fn distance(&self, a: &str, b: &str) -> Result<u8, TaxonomyError> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        if na.level != nb.level {
            return Err(TaxonomyError::LevelMismatch {
                a: a.to_string(),
                level_a: na.level,
                b: b.to_string(),
                level_b: nb.level,
            });
        }
        Ok(na.level - self.lca(a, b)?.level)
    }

    pub fn nodes_at(&self, level: u8, branch: BranchFilter) -> impl Iterator<Item = &TaxonomyNode> {
        self.nodes.values().filter(move |n| {
            n.level == level && n.level > 0 && self.state_of(&n.id).map(|s| branch.admits(s)).unwrap_or(false)
        })
    }

    /// Node at `level` within `branch` whose embedding is most similar to
    /// `query`; ties go to the smallest node id.
    pub fn nearest_node(
        &self,
        query: &EmbeddingVector,
        level: u8,
        branch: BranchFilter,
        provider: &EmbeddingProvider,
    ) -> Result<(NodeId, f64), TaxonomyError> {
        let mut best: Option<(&str, f64)> = None;
        for node in self.nodes_at(level, branch) {
            let v = provider.embed_text(&node.embedding_text())?;
            let sim = cosine(query, &v)?;
            best = match best {
                Some((id, s)) if s > sim || (s == sim && id < node.id.as_str()) => Some((id, s)),
                _ => Some((&node.id, sim)),
            };
        }
        best.map(|(id, s)| (id.to_string(), s))
            .ok_or(TaxonomyError::NoCandidates { level, branch })
    }

    pub fn stats(&self) -> TaxonomyStats {
        let depth = self.nodes.values().map(|n| n.level).max().unwrap_or(0) as usize;
        let mut level_counts = vec![0; depth + 1];
        for n in self.nodes.values() {
            level_counts[n.level as usize] += 1;
        }
        let (mut anomaly_leaves, mut normality_leaves) = (0, 0);
        for leaf in self.leaves() {
            match self.state_of(&leaf.id) {
                Ok(State::Anomaly) => anomaly_leaves += 1,
                Ok(State::Normality) => normality_leaves += 1,
                Err(_) => {}
            }
        }
        TaxonomyStats {
            level_counts,
            anomaly_leaves,
            normality_leaves,
        }
    }

    /// Finds the leaf for a triplet within its state branch (case/space-insensitive).
    pub fn find_leaf(&self, event: &str, scene: &str, attribute: &str, anomaly: bool) -> Option<&TaxonomyNode> {
        let text = render_triplet_text(event, scene, attribute);
        self.leaves().find(|n| {
            let t = n.triplet.as_ref().expect("leaf");
            t.anomaly == anomaly && t.text() == text
        })
    }

    /// Nodes at `level` whose embedding text equals the normalized `text`.
    pub fn find_by_text(&self, text: &str, level: u8) -> Vec<&TaxonomyNode> {
        let key = normalize_text(text);
        let mut hits: Vec<&TaxonomyNode> = self
            .nodes
            .values()
            .filter(|n| n.level == level && n.embedding_text() == key)
            .collect();
        hits.sort_by(|a, b| a.id.cmp(&b.id));
        hits
    }
}

fn pad_leaf(nodes: &mut IndexMap<NodeId, TaxonomyNode>, id: &str) {
    let parent_id = nodes[id].parent.clone().expect("padded leaves have parents");
    let label = nodes[&parent_id].label.clone();
    let mut above = parent_id.clone();
    let mut level = nodes[&parent_id].level + 1;
    // Detach leaf from its parent, then hang it below a fresh chain.
    nodes[&parent_id].children.retain(|c| c != id);
    while level < LEAF_LEVEL {
        let pad_id = format!("{id}~pad{level}");
        nodes[&above].children.push(pad_id.clone());
        nodes.insert(
            pad_id.clone(),
            TaxonomyNode {
                id: pad_id.clone(),
                label: label.clone(),
                level,
                parent: Some(above.clone()),
                children: Vec::new(),
                triplet: None,
            },
        );
        above = pad_id;
        level += 1;
    }
    nodes[&above].children.push(id.to_string());
    let leaf = &mut nodes[id];
    leaf.parent = Some(above);
    leaf.level = LEAF_LEVEL;
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    fn n(id: &str, label: &str, level: u8, parent: Option<&str>) -> DocumentNode {
        DocumentNode {
            id: id.into(),
            label: label.into(),
            level,
            parent: parent.map(Into::into),
            triplet: None,
        }
    }

    fn leaf(id: &str, parent: &str, e: &str, s: &str, a: &str, anomaly: bool) -> DocumentNode {
        DocumentNode {
            id: id.into(),
            label: e.into(),
            level: 5,
            parent: Some(parent.into()),
            triplet: Some(DocumentTriplet {
                event: e.into(),
                scene: s.into(),
                attribute: a.into(),
                anomaly,
            }),
        }
    }

    /// root → A/N → one domain → one effect → one event → one triplet each.
    pub fn minimal_doc() -> TaxonomyDocument {
        TaxonomyDocument {
            nodes: vec![
                n("root", "root", 0, None),
                n("A", "Anomaly", 1, Some("root")),
                n("N", "Normality", 1, Some("root")),
                n("A.d", "Safety", 2, Some("A")),
                n("N.d", "Safety", 2, Some("N")),
                n("A.d.e", "Traffic violation", 3, Some("A.d")),
                n("N.d.e", "Traffic compliance", 3, Some("N.d")),
                n("A.d.e.v", "Crossing road", 4, Some("A.d.e")),
                n("N.d.e.v", "Crossing road", 4, Some("N.d.e")),
                leaf(
                    "A.d.e.v.1",
                    "A.d.e.v",
                    "Crossing road",
                    "road",
                    "pedestrian jaywalking",
                    true,
                ),
                leaf(
                    "N.d.e.v.1",
                    "N.d.e.v",
                    "Crossing road",
                    "zebra crossing",
                    "green light",
                    false,
                ),
            ],
        }
    }

    /// Two events under one effect in each branch; the anomaly event has two leaves.
    pub fn small_doc() -> TaxonomyDocument {
        TaxonomyDocument {
            nodes: vec![
                n("root", "root", 0, None),
                n("A", "Anomaly", 1, Some("root")),
                n("N", "Normality", 1, Some("root")),
                n("A.s", "Safety", 2, Some("A")),
                n("A.l", "Laws & Rules", 2, Some("A")),
                n("N.s", "Safety", 2, Some("N")),
                n("A.s.t", "Traffic violation", 3, Some("A.s")),
                n("A.l.c", "Crime", 3, Some("A.l")),
                n("N.s.t", "Traffic compliance", 3, Some("N.s")),
                n("A.s.t.cr", "Crossing road", 4, Some("A.s.t")),
                n("A.s.t.mc", "Motorcycling", 4, Some("A.s.t")),
                n("A.l.c.th", "Theft", 4, Some("A.l.c")),
                n("N.s.t.cr", "Crossing road", 4, Some("N.s.t")),
                leaf(
                    "A.s.t.cr.1",
                    "A.s.t.cr",
                    "crossing road",
                    "road",
                    "pedestrian jaywalking",
                    true,
                ),
                leaf("A.s.t.cr.2", "A.s.t.cr", "crossing road", "highway", "crowd", true),
                leaf("A.s.t.mc.1", "A.s.t.mc", "motorcycling", "road", "without helmet", true),
                leaf("A.l.c.th.1", "A.l.c.th", "theft", "shop", "masked man", true),
                leaf(
                    "N.s.t.cr.1",
                    "N.s.t.cr",
                    "crossing road",
                    "zebra crossing",
                    "green light",
                    false,
                ),
            ],
        }
    }
}
