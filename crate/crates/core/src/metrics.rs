//! Unified evaluation scores: structure F1, Hungarian-matched semantic
//! similarity, taxonomy-aware hierarchy score and temporal IoU.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answers::{
    key_bag, AnswerList, AnswerRecord, BranchRule, HierarchyRouting, KeyBag, TaskSpec, ValueTag, END_KEY, START_KEY,
};
use crate::assign::{hungarian_max, AssignError, Matching, SimilarityMatrix};
use crate::embed::{cosine, EmbedError, EmbeddingProvider};
use crate::taxonomy::{BranchFilter, Hierarchy, NodeId, TaxonomyError};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Assign(#[from] AssignError),
    #[error("ground-truth record {index} ({text:?}) does not resolve to a taxonomy node at level {level}")]
    GtUnresolvable { index: usize, text: String, level: u8 },
    #[error("invalid interval [{start}, {end}]")]
    Interval { start: f64, end: f64 },
    #[error("task {0} has no hierarchy routing")]
    NoRouting(String),
}

/// How matched sums are normalized in the semantic and hierarchy scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SemanticNormalization {
    /// Divide by `r * t`.
    #[default]
    RowsTimesCols,
    /// Divide by `max(r, t)`.
    Balanced,
}

impl SemanticNormalization {
    pub fn apply(self, sum: f64, r: usize, t: usize) -> f64 {
        if r == 0 || t == 0 {
            return 0.0;
        }
        let denom = match self {
            SemanticNormalization::RowsTimesCols => (r * t) as f64,
            SemanticNormalization::Balanced => r.max(t) as f64,
        };
        (sum / denom).clamp(0.0, 1.0)
    }

    pub fn label(self) -> &'static str {
        match self {
            SemanticNormalization::RowsTimesCols => "rows-times-cols",
            SemanticNormalization::Balanced => "balanced",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalMode {
    /// IoU of the merged unions of both interval sets.
    #[default]
    MergedUnion,
    /// Hungarian matching of individual intervals by IoU, normalized by max(r, t).
    Matched,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueRendering {
    /// One embedding per record (rendered triplet text).
    #[default]
    Record,
    /// One embedding per field; similarity is the mean field cosine.
    PerField,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub tau: f64,
    pub normalization: SemanticNormalization,
    pub temporal: TemporalMode,
    pub rendering: ValueRendering,
}

pub const DEFAULT_EVAL_TAU: f64 = 0.5;

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_EVAL_TAU,
            normalization: SemanticNormalization::default(),
            temporal: TemporalMode::default(),
            rendering: ValueRendering::default(),
        }
    }
}

/// A ground-truth record, optionally pinned to its taxonomy node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtRecord {
    pub record: AnswerRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
}

impl GtRecord {
    pub fn new(record: AnswerRecord) -> Self {
        Self { record, node: None }
    }

    pub fn at(record: AnswerRecord, node: impl Into<NodeId>) -> Self {
        Self {
            record,
            node: Some(node.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBundle {
    pub struct_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tiou: Option<f64>,
}

// ---------------------------------------------------------------------------
// Structure

/// F1 over key multisets; both empty scores 1, exactly one empty scores 0.
pub fn struct_score(out: &KeyBag, gt: &KeyBag) -> f64 {
    match (out.is_empty(), gt.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let inter = out.intersection_size(gt) as f64;
    let out_only = out.total() as f64 - inter;
    let gt_only = gt.total() as f64 - inter;
    2.0 * inter / (2.0 * inter + out_only + gt_only)
}

// ---------------------------------------------------------------------------
// Semantic

/// Similarity grid and its optimal matching, shared by semantic and hierarchy scoring.
#[derive(Debug, Clone)]
pub struct SemanticMatch {
    pub sim: SimilarityMatrix,
    pub matching: Matching,
}

fn field_texts(record: &AnswerRecord, spec: &TaskSpec) -> Vec<String> {
    spec.key_schema
        .iter()
        .filter(|k| **k != crate::answers::ANOMALY_KEY)
        .map(|k| crate::embed::normalize_text(&record.text_of(k)))
        .collect()
}

pub fn semantic_match(
    out: &[AnswerRecord],
    gt: &[GtRecord],
    spec: &TaskSpec,
    provider: &EmbeddingProvider,
    rendering: ValueRendering,
) -> Result<SemanticMatch, MetricError> {
    let sim = match rendering {
        ValueRendering::Record => {
            let ov = out
                .iter()
                .map(|r| provider.embed_text(&r.value_text(spec)))
                .collect::<Result<Vec<_>, _>>()?;
            let gv = gt
                .iter()
                .map(|g| provider.embed_text(&g.record.value_text(spec)))
                .collect::<Result<Vec<_>, _>>()?;
            let mut grid = vec![vec![0.0; gv.len()]; ov.len()];
            for (i, o) in ov.iter().enumerate() {
                for (j, g) in gv.iter().enumerate() {
                    grid[i][j] = cosine(o, g)?;
                }
            }
            SimilarityMatrix::from_fn(ov.len(), gv.len(), |i, j| grid[i][j])?
        }
        ValueRendering::PerField => {
            let embed_fields = |r: &AnswerRecord| {
                field_texts(r, spec)
                    .iter()
                    .map(|t| provider.embed_text(t))
                    .collect::<Result<Vec<_>, _>>()
            };
            let ov = out.iter().map(embed_fields).collect::<Result<Vec<_>, _>>()?;
            let gv = gt
                .iter()
                .map(|g| embed_fields(&g.record))
                .collect::<Result<Vec<_>, _>>()?;
            let mut grid = vec![vec![0.0; gv.len()]; ov.len()];
            for (i, o) in ov.iter().enumerate() {
                for (j, g) in gv.iter().enumerate() {
                    let mut acc = 0.0;
                    for (a, b) in o.iter().zip(g) {
                        acc += cosine(a, b)?;
                    }
                    grid[i][j] = if o.is_empty() { 0.0 } else { acc / o.len() as f64 };
                }
            }
            SimilarityMatrix::from_fn(ov.len(), gv.len(), |i, j| grid[i][j])?
        }
    };
    let matching = hungarian_max(&sim);
    Ok(SemanticMatch { sim, matching })
}

/// Semantic score from an existing match: matched cosines clamped at 0, then normalized.
pub fn semantic_from_match(m: &SemanticMatch, norm: SemanticNormalization) -> f64 {
    let sum: f64 = m.matching.pairs().iter().map(|&(i, j)| m.sim.get(i, j).max(0.0)).sum();
    norm.apply(sum, m.sim.rows(), m.sim.cols())
}

pub fn semantic_score(
    out: &AnswerList,
    gt: &[GtRecord],
    spec: &TaskSpec,
    provider: &EmbeddingProvider,
    cfg: &MetricConfig,
) -> Result<f64, MetricError> {
    let m = semantic_match(&out.records, gt, spec, provider, cfg.rendering)?;
    Ok(semantic_from_match(&m, cfg.normalization))
}

// ---------------------------------------------------------------------------
// Hierarchy

/// Taxonomy node a ground-truth record refers to at `level`.
///
/// A pinned node deeper than `level` is lifted to its ancestor; otherwise
/// the record's text is looked up among nodes at `level` (smallest id wins,
/// restricted to the record's state when it carries an anomaly value).
pub fn resolve_gt_node(h: &Hierarchy, gt: &GtRecord, index: usize, level: u8) -> Result<NodeId, MetricError> {
    if let Some(id) = &gt.node {
        return Ok(h.ancestor_at(id, level)?.id.clone());
    }
    let text = gt.record.hierarchy_text(level);
    let branch = match gt.record.score_of(crate::answers::ANOMALY_KEY) {
        Some(_) => gt.record.score_branch(),
        None => BranchFilter::Both,
    };
    h.find_by_text(&text, level)
        .into_iter()
        .find(|n| h.state_of(&n.id).map(|s| branch.admits(s)).unwrap_or(false))
        .map(|n| n.id.clone())
        .ok_or(MetricError::GtUnresolvable { index, text, level })
}

/// Proxy node retrieved for an output record, or `None` when the chosen
/// branch has no nodes at the compared level.
pub fn proxy_node(
    h: &Hierarchy,
    record: &AnswerRecord,
    routing: HierarchyRouting,
    gt_node: &str,
    provider: &EmbeddingProvider,
) -> Result<Option<NodeId>, MetricError> {
    let branch = match routing.branch_rule {
        BranchRule::AnomalyOnly => BranchFilter::AnomalyOnly,
        BranchRule::ScoreThreshold => record.score_branch(),
        BranchRule::GtState => BranchFilter::only(h.state_of(gt_node)?),
    };
    let query = provider.embed_text(&record.hierarchy_text(routing.compared_level))?;
    match h.nearest_node(&query, routing.compared_level, branch, provider) {
        Ok((id, _)) => Ok(Some(id)),
        Err(TaxonomyError::NoCandidates { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Tree distance for one matched (output, ground-truth) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedDistance {
    pub out: usize,
    pub gt: usize,
    /// `None` when no proxy could be retrieved.
    pub distance: Option<u8>,
    pub d_max: u8,
}

/// Distances between each matched output proxy and its ground-truth node.
pub fn matched_distances(
    out: &[AnswerRecord],
    gt: &[GtRecord],
    spec: &TaskSpec,
    h: &Hierarchy,
    provider: &EmbeddingProvider,
    matching: &Matching,
) -> Result<Vec<MatchedDistance>, MetricError> {
    let routing = spec
        .hierarchy
        .ok_or_else(|| MetricError::NoRouting(spec.task_id.to_string()))?;
    let level = routing.compared_level;
    let gt_nodes = gt
        .iter()
        .enumerate()
        .map(|(j, g)| resolve_gt_node(h, g, j, level))
        .collect::<Result<Vec<_>, _>>()?;
    matching
        .pairs()
        .iter()
        .map(|&(i, j)| {
            let proxy = proxy_node(h, &out[i], routing, &gt_nodes[j], provider)?;
            let distance = proxy.map(|p| h.distance(&p, &gt_nodes[j])).transpose()?;
            Ok(MatchedDistance {
                out: i,
                gt: j,
                distance,
                d_max: level,
            })
        })
        .collect()
}

/// Thresholded hierarchy score over matched pairs.
pub fn hierarchy_from_distances(
    distances: &[MatchedDistance],
    r: usize,
    t: usize,
    tau: f64,
    norm: SemanticNormalization,
) -> f64 {
    let sum: f64 = distances
        .iter()
        .filter_map(|m| {
            let d = f64::from(m.distance?);
            let d_max = f64::from(m.d_max);
            (d <= tau * d_max).then(|| 1.0 - d / d_max)
        })
        .sum();
    norm.apply(sum, r, t)
}

pub fn hierarchy_score(
    out: &AnswerList,
    gt: &[GtRecord],
    spec: &TaskSpec,
    h: &Hierarchy,
    provider: &EmbeddingProvider,
    cfg: &MetricConfig,
) -> Result<f64, MetricError> {
    let m = semantic_match(&out.records, gt, spec, provider, cfg.rendering)?;
    let d = matched_distances(&out.records, gt, spec, h, provider, &m.matching)?;
    Ok(hierarchy_from_distances(
        &d,
        out.len(),
        gt.len(),
        cfg.tau,
        cfg.normalization,
    ))
}

/// Best `1 - d/d_max` among the first `k` ranked predictions (threshold off).
pub fn topk_hierarchy_score(
    ranked: &[AnswerRecord],
    gt: &GtRecord,
    k: usize,
    routing: HierarchyRouting,
    h: &Hierarchy,
    provider: &EmbeddingProvider,
) -> Result<f64, MetricError> {
    assert!(k >= 1, "k must be at least 1");
    let level = routing.compared_level;
    let gt_node = resolve_gt_node(h, gt, 0, level)?;
    let mut best: f64 = 0.0;
    for record in ranked.iter().take(k) {
        if let Some(p) = proxy_node(h, record, routing, &gt_node, provider)? {
            let d = h.distance(&p, &gt_node)?;
            best = best.max(1.0 - f64::from(d) / f64::from(level));
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Temporal

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self, MetricError> {
        if !(start.is_finite() && end.is_finite()) || start < 0.0 || end < start {
            return Err(MetricError::Interval { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0.0
    }

    pub fn iou(&self, other: &Interval) -> f64 {
        let inter = (self.end.min(other.end) - self.start.max(other.start)).max(0.0);
        let union = self.len() + other.len() - inter;
        if union > 0.0 {
            inter / union
        } else if self == other {
            1.0
        } else {
            0.0
        }
    }
}

/// Sorted union of intervals, merging overlapping and touching ones.
pub fn merge_intervals(intervals: &[Interval]) -> Vec<Interval> {
    let mut v = intervals.to_vec();
    v.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
    let mut out: Vec<Interval> = Vec::with_capacity(v.len());
    for iv in v {
        match out.last_mut() {
            Some(last) if iv.start <= last.end => last.end = last.end.max(iv.end),
            _ => out.push(iv),
        }
    }
    out
}

fn check(intervals: &[Interval]) -> Result<(), MetricError> {
    for iv in intervals {
        Interval::new(iv.start, iv.end)?;
    }
    Ok(())
}

/// IoU of the merged unions; both empty scores 1, exactly one empty scores 0.
pub fn temporal_iou(pred: &[Interval], gt: &[Interval]) -> Result<f64, MetricError> {
    check(pred)?;
    check(gt)?;
    match (pred.is_empty(), gt.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let (p, g) = (merge_intervals(pred), merge_intervals(gt));
    let mut inter = 0.0;
    let (mut a, mut b) = (0, 0);
    while a < p.len() && b < g.len() {
        let lo = p[a].start.max(g[b].start);
        let hi = p[a].end.min(g[b].end);
        if hi > lo {
            inter += hi - lo;
        }
        if p[a].end < g[b].end {
            a += 1;
        } else {
            b += 1;
        }
    }
    let total = |s: &[Interval]| s.iter().map(Interval::len).sum::<f64>();
    let union = total(&p) + total(&g) - inter;
    if union > 0.0 {
        Ok((inter / union).clamp(0.0, 1.0))
    } else {
        // Only zero-length intervals on both sides.
        Ok(if p == g { 1.0 } else { 0.0 })
    }
}

/// Per-interval matched IoU: Hungarian on the pairwise IoU grid.
pub fn matched_temporal_iou(pred: &[Interval], gt: &[Interval]) -> Result<f64, MetricError> {
    check(pred)?;
    check(gt)?;
    match (pred.is_empty(), gt.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let sim = SimilarityMatrix::from_fn(pred.len(), gt.len(), |i, j| pred[i].iou(&gt[j]))?;
    let m = hungarian_max(&sim);
    Ok(SemanticNormalization::Balanced.apply(m.total(&sim), pred.len(), gt.len()))
}

/// Intervals from `start`/`end` records; records without a valid interval are skipped.
pub fn intervals_from_records(records: &[AnswerRecord]) -> Vec<Interval> {
    records
        .iter()
        .filter_map(|r| Interval::new(r.score_of(START_KEY)?, r.score_of(END_KEY)?).ok())
        .collect()
}

/// Maximal runs of `true` frames as `[first/fps, (last+1)/fps]`.
pub fn frames_to_intervals(labels: &[bool], fps: f64) -> Vec<Interval> {
    assert!(fps > 0.0, "fps must be positive");
    let mut out = Vec::new();
    let mut run_start = None;
    for (i, &on) in labels.iter().chain(std::iter::once(&false)).enumerate() {
        match (on, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                out.push(Interval {
                    start: s as f64 / fps,
                    end: i as f64 / fps,
                });
                run_start = None;
            }
            _ => {}
        }
    }
    out
}

// ---------------------------------------------------------------------------

/// Scores one sample with exactly the metrics its task routes to.
pub fn evaluate_sample(
    pred: &AnswerList,
    gt: &[GtRecord],
    spec: &TaskSpec,
    h: &Hierarchy,
    provider: &EmbeddingProvider,
    cfg: &MetricConfig,
) -> Result<ScoreBundle, MetricError> {
    let gt_records: Vec<AnswerRecord> = gt.iter().map(|g| g.record.clone()).collect();
    let struct_score = struct_score(&key_bag(&pred.records), &key_bag(&gt_records));
    let mut bundle = ScoreBundle {
        struct_score,
        semantic_score: None,
        hierarchy_score: None,
        tiou: None,
    };
    if spec.value_tag == ValueTag::Temporal {
        let p = intervals_from_records(&pred.records);
        let g = intervals_from_records(&gt_records);
        bundle.tiou = Some(match cfg.temporal {
            TemporalMode::MergedUnion => temporal_iou(&p, &g)?,
            TemporalMode::Matched => matched_temporal_iou(&p, &g)?,
        });
        return Ok(bundle);
    }
    let m = semantic_match(&pred.records, gt, spec, provider, cfg.rendering)?;
    bundle.semantic_score = Some(semantic_from_match(&m, cfg.normalization));
    if spec.value_tag == ValueTag::EventBearing {
        let d = matched_distances(&pred.records, gt, spec, h, provider, &m.matching)?;
        bundle.hierarchy_score = Some(hierarchy_from_distances(
            &d,
            pred.len(),
            gt.len(),
            cfg.tau,
            cfg.normalization,
        ));
    }
    Ok(bundle)
}
