//! Verifiable rewards for reinforcement fine-tuning.
//!
//! `total = format + accuracy`, where the accuracy reward is the structure
//! score plus one task-routed content term: temporal IoU for timestamp tasks,
//! a λ-blend of semantic and smooth hierarchy rewards for event-bearing tasks,
//! and the semantic score for everything else.

use serde::{Deserialize, Serialize};

use crate::answers::{format_reward, key_bag, parse_response, AnswerList, AnswerRecord, TaskSpec, ValueTag};
use crate::embed::EmbeddingProvider;
use crate::metrics::{
    intervals_from_records, matched_distances, semantic_from_match, semantic_match, struct_score, temporal_iou,
    GtRecord, MatchedDistance, MetricError, SemanticNormalization, ValueRendering,
};
use crate::taxonomy::Hierarchy;

pub const DEFAULT_LAMBDA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Weight of the semantic reward against the hierarchy reward.
    pub lambda: f64,
    pub semantic_normalization: SemanticNormalization,
    pub rendering: ValueRendering,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            semantic_normalization: SemanticNormalization::default(),
            rendering: ValueRendering::default(),
        }
    }
}

impl RewardConfig {
    pub fn with_lambda(lambda: f64) -> Option<Self> {
        (0.0..=1.0).contains(&lambda).then(|| Self {
            lambda,
            ..Self::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBundle {
    pub format: u8,
    #[serde(rename = "struct")]
    pub struct_reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tiou: Option<f64>,
    pub accuracy: f64,
    pub total: f64,
}

/// Smooth hierarchy reward: mean of `1 - d/d_max` over matched pairs, no threshold.
pub fn smooth_hierarchy(distances: &[MatchedDistance], r: usize, t: usize, norm: SemanticNormalization) -> f64 {
    let sum: f64 = distances
        .iter()
        .filter_map(|m| Some(1.0 - f64::from(m.distance?) / f64::from(m.d_max)))
        .sum();
    norm.apply(sum, r, t)
}

pub fn hierarchy_reward(
    out: &AnswerList,
    gt: &[GtRecord],
    spec: &TaskSpec,
    h: &Hierarchy,
    provider: &EmbeddingProvider,
    cfg: &RewardConfig,
) -> Result<f64, MetricError> {
    let m = semantic_match(&out.records, gt, spec, provider, cfg.rendering)?;
    let d = matched_distances(&out.records, gt, spec, h, provider, &m.matching)?;
    Ok(smooth_hierarchy(&d, out.len(), gt.len(), cfg.semantic_normalization))
}

/// Accuracy reward with its components; `format` and `total` are left for the caller.
fn accuracy_parts(
    out: &AnswerList,
    gt: &[GtRecord],
    spec: &TaskSpec,
    h: &Hierarchy,
    provider: &EmbeddingProvider,
    cfg: &RewardConfig,
) -> Result<RewardBundle, MetricError> {
    let gt_records: Vec<AnswerRecord> = gt.iter().map(|g| g.record.clone()).collect();
    let r_k = struct_score(&key_bag(&out.records), &key_bag(&gt_records));
    let mut b = RewardBundle {
        format: 0,
        struct_reward: r_k,
        semantic: None,
        hierarchy: None,
        tiou: None,
        accuracy: 0.0,
        total: 0.0,
    };
    b.accuracy = match spec.value_tag {
        ValueTag::Temporal => {
            let r_t = temporal_iou(
                &intervals_from_records(&out.records),
                &intervals_from_records(&gt_records),
            )?;
            b.tiou = Some(r_t);
            r_k + r_t
        }
        ValueTag::EventBearing => {
            let m = semantic_match(&out.records, gt, spec, provider, cfg.rendering)?;
            let r_u = semantic_from_match(&m, cfg.semantic_normalization);
            let d = matched_distances(&out.records, gt, spec, h, provider, &m.matching)?;
            let r_h = smooth_hierarchy(&d, out.len(), gt.len(), cfg.semantic_normalization);
            b.semantic = Some(r_u);
            b.hierarchy = Some(r_h);
            r_k + cfg.lambda * r_u + (1.0 - cfg.lambda) * r_h
        }
        ValueTag::Plain => {
            let m = semantic_match(&out.records, gt, spec, provider, cfg.rendering)?;
            let r_u = semantic_from_match(&m, cfg.semantic_normalization);
            b.semantic = Some(r_u);
            r_k + r_u
        }
    };
    Ok(b)
}

pub fn accuracy_reward(
    out: &AnswerList,
    gt: &[GtRecord],
    spec: &TaskSpec,
    h: &Hierarchy,
    provider: &EmbeddingProvider,
    cfg: &RewardConfig,
) -> Result<f64, MetricError> {
    Ok(accuracy_parts(out, gt, spec, h, provider, cfg)?.accuracy)
}

/// Parses a raw response and computes format, accuracy and total rewards.
///
/// Without answer tags the whole response (minus any think block) is parsed,
/// so a correct but untagged answer still earns its accuracy reward.
pub fn total_reward(
    raw: &str,
    gt: &[GtRecord],
    spec: &TaskSpec,
    h: &Hierarchy,
    provider: &EmbeddingProvider,
    cfg: &RewardConfig,
) -> Result<RewardBundle, MetricError> {
    let out = parse_response(raw, spec);
    let mut b = accuracy_parts(&out, gt, spec, h, provider, cfg)?;
    b.format = format_reward(raw);
    b.total = f64::from(b.format) + b.accuracy;
    Ok(b)
}

/// `(R - mean) / std` with the population standard deviation; a group with
/// zero spread gets all-zero advantages.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    let n = rewards.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    // Spread below rounding noise of the mean counts as zero.
    if std <= 1e-12 * mean.abs().max(1.0) {
        return vec![0.0; n];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}
