//! Browser bindings for the demo page in `www/`.
//!
//! Every export is a thin wrapper over a plain function that takes and
//! returns JSON strings, so the logic is testable without a browser.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::json;
use vau_core::answers::{parse_response, TaskId};
use vau_core::embed::EmbeddingProvider;
use vau_core::grposim::{run_training, TabularPolicy, TrainConfig};
use vau_core::metrics::{evaluate_sample, merge_intervals, temporal_iou, GtRecord, Interval, MetricConfig};
use vau_core::rewards::{total_reward, RewardConfig};
use vau_core::taxonomy::Hierarchy;
use wasm_bindgen::prelude::*;

const MINI_TAXONOMY: &str = include_str!("../assets/mini_taxonomy.json");
const DIMS: usize = 256;

fn taxonomy() -> &'static Hierarchy {
    static H: OnceLock<Hierarchy> = OnceLock::new();
    H.get_or_init(|| Hierarchy::from_json_str(MINI_TAXONOMY).expect("bundled taxonomy is valid"))
}

fn provider() -> &'static EmbeddingProvider {
    static P: OnceLock<EmbeddingProvider> = OnceLock::new();
    P.get_or_init(|| EmbeddingProvider::hash(DIMS).expect("positive dims"))
}

fn intervals(label: &str, s: &str) -> Result<Vec<Interval>, String> {
    let raw: Vec<(f64, f64)> = serde_json::from_str(s).map_err(|e| format!("{label}: {e}"))?;
    raw.into_iter()
        .map(|(a, b)| Interval::new(a, b).map_err(|e| format!("{label}: {e}")))
        .collect()
}

/// `pred` and `gt` are JSON lists of `[start, end]` pairs in seconds.
pub fn tiou_json(pred: &str, gt: &str) -> Result<String, String> {
    let p = intervals("predicted", pred)?;
    let g = intervals("ground truth", gt)?;
    let t = temporal_iou(&p, &g).map_err(|e| e.to_string())?;
    let pair = |v: Vec<Interval>| v.into_iter().map(|i| [i.start, i.end]).collect::<Vec<_>>();
    Ok(json!({
        "tiou": t,
        "pred_merged": pair(merge_intervals(&p)),
        "gt_merged": pair(merge_intervals(&g)),
    })
    .to_string())
}

#[derive(Serialize)]
struct LeafView<'a> {
    id: &'a str,
    event: &'a str,
    scene: &'a str,
    attribute: &'a str,
    anomaly: bool,
}

/// Leaves of the bundled taxonomy, for filling in example answers.
pub fn leaves_json() -> String {
    let leaves: Vec<LeafView> = taxonomy()
        .leaves()
        .filter_map(|n| {
            let t = n.triplet.as_ref()?;
            Some(LeafView {
                id: &n.id,
                event: &t.event,
                scene: &t.scene,
                attribute: &t.attribute,
                anomaly: t.anomaly,
            })
        })
        .collect();
    serde_json::to_string(&leaves).expect("leaves serialize")
}

/// Scores a raw response against ground truth (a JSON list of answer objects)
/// with both the evaluation metrics and the training reward.
pub fn score_json(task: &str, response: &str, gt: &str) -> Result<String, String> {
    let task: TaskId = task.parse::<TaskId>().map_err(|e| e.to_string())?;
    let spec = task.spec();
    let gt: Vec<GtRecord> = serde_json::from_str::<Vec<_>>(gt)
        .map_err(|e| format!("ground truth: {e}"))?
        .into_iter()
        .map(GtRecord::new)
        .collect();
    let (h, p) = (taxonomy(), provider());
    let parsed = parse_response(response, &spec);
    let scores = evaluate_sample(&parsed, &gt, &spec, h, p, &MetricConfig::default()).map_err(|e| e.to_string())?;
    let reward = total_reward(response, &gt, &spec, h, p, &RewardConfig::default()).map_err(|e| e.to_string())?;
    Ok(json!({ "parsed": parsed.records, "scores": scores, "reward": reward }).to_string())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CurveRequest {
    rewards: Vec<f64>,
    #[serde(default)]
    steps: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    beta: Option<f64>,
    #[serde(default)]
    lr: Option<f64>,
    #[serde(default)]
    group_size: Option<usize>,
}

/// Trains a uniform tabular policy over candidates with fixed rewards and
/// returns the per-step probabilities and mean group reward.
pub fn grpo_curve_json(request: &str) -> Result<String, String> {
    let req: CurveRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    if req.rewards.len() < 2 || req.rewards.len() > 64 {
        return Err("need between 2 and 64 candidate rewards".into());
    }
    if req.rewards.iter().any(|r| !r.is_finite()) {
        return Err("rewards must be finite".into());
    }
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        steps: req.steps.unwrap_or(d.steps).min(2000),
        seed: req.seed.unwrap_or(d.seed),
        beta: req.beta.unwrap_or(d.beta),
        lr: req.lr.unwrap_or(d.lr),
        group_size: req.group_size.unwrap_or(d.group_size).clamp(1, 64),
        ..d
    };
    let initial = TabularPolicy::uniform(req.rewards.len(), cfg.temperature);
    let rewards = req.rewards.clone();
    let trace = run_training(&initial, None, &cfg, |i| Ok(rewards[i])).map_err(|e| e.to_string())?;
    let mut probs = vec![trace.reference_probs.clone()];
    probs.extend(trace.steps.iter().map(|s| s.probs.clone()));
    let mean_reward: Vec<f64> = trace.steps.iter().map(|s| s.mean_reward).collect();
    Ok(json!({ "probs": probs, "mean_reward": mean_reward, "final_probs": trace.final_probs }).to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn tiou(pred: &str, gt: &str) -> Result<String, JsValue> {
    js(tiou_json(pred, gt))
}

#[wasm_bindgen]
pub fn leaves() -> String {
    leaves_json()
}

#[wasm_bindgen]
pub fn score(task: &str, response: &str, gt: &str) -> Result<String, JsValue> {
    js(score_json(task, response, gt))
}

#[wasm_bindgen]
pub fn grpo_curve(request: &str) -> Result<String, JsValue> {
    js(grpo_curve_json(request))
}
