//! Ground-truth annotations, per-task sample construction and report tables.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answers::{AnswerRecord, TaskId, ANOMALY_KEY, END_KEY, START_KEY};
use crate::metrics::{merge_intervals, GtRecord, Interval, ScoreBundle};
use crate::taxonomy::{render_triplet_text, Hierarchy, NodeId, EVENT_LEVEL};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: triplet \"{text}\" (anomaly={anomaly}) matches no taxonomy leaf")]
    UnresolvedTriplet { path: String, text: String, anomaly: bool },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletLabel {
    pub event: String,
    pub scene: String,
    pub attribute: String,
    pub anomaly: bool,
}

impl TripletLabel {
    pub fn text(&self) -> String {
        render_triplet_text(&self.event, &self.scene, &self.attribute)
    }

    fn record(&self) -> AnswerRecord {
        AnswerRecord::new()
            .text("event", &self.event)
            .text("scene", &self.scene)
            .text("attribute", &self.attribute)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletInstance {
    pub triplet: TripletLabel,
    pub start_frame: u64,
    pub end_frame: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoAnnotation {
    pub video_id: String,
    pub fps: f64,
    pub duration_s: f64,
    pub genre: String,
    pub camera_view: String,
    pub triplet_instances: Vec<TripletInstance>,
}

impl VideoAnnotation {
    pub fn frame_count(&self) -> u64 {
        (self.duration_s * self.fps).round() as u64
    }

    pub fn seconds(&self, frame: u64) -> f64 {
        frame as f64 / self.fps
    }

    pub fn instance_interval(&self, inst: &TripletInstance) -> Interval {
        Interval {
            start: self.seconds(inst.start_frame),
            end: self.seconds(inst.end_frame),
        }
    }

    /// Checks field ranges and resolves every triplet to a leaf.
    /// `prefix` names this annotation in error paths (e.g. `[3]`).
    pub fn validate(self, h: &Hierarchy, prefix: &str) -> Result<ResolvedAnnotation, DataError> {
        let invalid = |field: &str, message: String| DataError::Invalid {
            path: format!("{prefix}.{field}"),
            message,
        };
        if self.video_id.trim().is_empty() {
            return Err(invalid("video_id", "must not be empty".into()));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(invalid("fps", format!("must be finite and > 0, got {}", self.fps)));
        }
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(invalid(
                "duration_s",
                format!("must be finite and >= 0, got {}", self.duration_s),
            ));
        }
        let frames = self.frame_count();
        let mut leaves = Vec::with_capacity(self.triplet_instances.len());
        for (i, inst) in self.triplet_instances.iter().enumerate() {
            let at = format!("triplet_instances[{i}]");
            if inst.start_frame > inst.end_frame {
                return Err(invalid(
                    &format!("{at}.start_frame"),
                    format!("start_frame {} exceeds end_frame {}", inst.start_frame, inst.end_frame),
                ));
            }
            if inst.end_frame > frames {
                return Err(invalid(
                    &format!("{at}.end_frame"),
                    format!("end_frame {} exceeds video length of {frames} frames", inst.end_frame),
                ));
            }
            let t = &inst.triplet;
            let leaf = h
                .find_leaf(&t.event, &t.scene, &t.attribute, t.anomaly)
                .ok_or_else(|| DataError::UnresolvedTriplet {
                    path: format!("{prefix}.{at}.triplet"),
                    text: t.text(),
                    anomaly: t.anomaly,
                })?;
            leaves.push(leaf.id.clone());
        }
        Ok(ResolvedAnnotation { ann: self, leaves })
    }
}

/// An annotation whose instances have been matched to taxonomy leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedAnnotation {
    pub ann: VideoAnnotation,
    /// Leaf id per entry of `ann.triplet_instances`.
    pub leaves: Vec<NodeId>,
}

impl ResolvedAnnotation {
    /// Distinct triplets by leaf, in order of first appearance, with the
    /// indices of their instances.
    fn distinct(&self) -> Vec<(&TripletLabel, &NodeId, Vec<usize>)> {
        let mut out: Vec<(&TripletLabel, &NodeId, Vec<usize>)> = Vec::new();
        for (i, (inst, leaf)) in self.ann.triplet_instances.iter().zip(&self.leaves).enumerate() {
            match out.iter_mut().find(|(_, l, _)| *l == leaf) {
                Some(entry) => entry.2.push(i),
                None => out.push((&inst.triplet, leaf, vec![i])),
            }
        }
        out
    }
}

/// Parses a ground-truth file body: a JSON array of annotations.
pub fn parse_annotations(json: &str) -> Result<Vec<VideoAnnotation>, DataError> {
    let de = &mut serde_json::Deserializer::from_str(json);
    serde_path_to_error::deserialize(de).map_err(|e| DataError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Parses and validates a ground-truth file; video ids must be unique.
pub fn load_annotations(json: &str, h: &Hierarchy) -> Result<Vec<ResolvedAnnotation>, DataError> {
    let anns = parse_annotations(json)?;
    let mut seen = HashSet::new();
    anns.into_iter()
        .enumerate()
        .map(|(i, a)| {
            let prefix = format!("[{i}]");
            if !seen.insert(a.video_id.clone()) {
                return Err(DataError::Invalid {
                    path: format!("{prefix}.video_id"),
                    message: format!("duplicate video id {}", a.video_id),
                });
            }
            a.validate(h, &prefix)
        })
        .collect()
}

pub fn load_annotations_file(path: &Path, h: &Hierarchy) -> Result<Vec<ResolvedAnnotation>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_annotations(&text, h)
}

// ---------------------------------------------------------------------------
// Samples

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub sample_id: String,
    pub video_id: String,
    pub task: TaskId,
    pub ground_truth: Vec<GtRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Add normal triplets, labeled with an `anomaly` value, to anomaly-td ground truth.
    pub td_include_normal: bool,
    /// Observed-prefix end in seconds for anticipation. Defaults to the end
    /// of the earliest-starting instance.
    pub anticipation_boundary_s: Option<f64>,
}

fn score(anomaly: bool) -> f64 {
    if anomaly {
        1.0
    } else {
        0.0
    }
}

fn interval_record(iv: &Interval) -> AnswerRecord {
    AnswerRecord::new().number(START_KEY, iv.start).number(END_KEY, iv.end)
}

fn context_sample(r: &ResolvedAnnotation, h: &Hierarchy, task: TaskId) -> EvalSample {
    let key = match task {
        TaskId::EventRec => "event",
        TaskId::SceneRec => "scene",
        _ => "attribute",
    };
    let mut seen = HashSet::new();
    let mut gt = Vec::new();
    for (t, leaf, _) in r.distinct() {
        let value = match task {
            TaskId::EventRec => &t.event,
            TaskId::SceneRec => &t.scene,
            _ => &t.attribute,
        };
        let rec = AnswerRecord::new().text(key, value);
        if task == TaskId::EventRec {
            // Same event wording can sit in both branches; keep one per event node.
            let node = h.ancestor_at(leaf, EVENT_LEVEL).expect("leaf has an event ancestor");
            if seen.insert(node.id.clone()) {
                gt.push(GtRecord::at(rec, node.id.clone()));
            }
        } else if seen.insert(crate::embed::normalize_text(value)) {
            gt.push(GtRecord::new(rec));
        }
    }
    EvalSample {
        sample_id: format!("{}/{}", r.ann.video_id, task),
        video_id: r.ann.video_id.clone(),
        task,
        ground_truth: gt,
        query: None,
    }
}

/// Builds the evaluation samples for one annotation, in `TaskId::ALL` order
/// regardless of the order of `tasks`.
pub fn build_samples(r: &ResolvedAnnotation, h: &Hierarchy, tasks: &[TaskId], opts: &BuildOptions) -> Vec<EvalSample> {
    let ann = &r.ann;
    let wanted: HashSet<TaskId> = tasks.iter().copied().collect();
    let mut out = Vec::new();
    let one = |task: TaskId, ground_truth: Vec<GtRecord>, query: Option<String>| EvalSample {
        sample_id: format!("{}/{}", ann.video_id, task),
        video_id: ann.video_id.clone(),
        task,
        ground_truth,
        query,
    };
    for task in TaskId::ALL.into_iter().filter(|t| wanted.contains(t)) {
        match task {
            TaskId::EventRec | TaskId::SceneRec | TaskId::AttributeRec => {
                out.push(context_sample(r, h, task));
            }
            TaskId::AnomalyTd => {
                let gt = r
                    .distinct()
                    .into_iter()
                    .filter(|(t, _, _)| t.anomaly || opts.td_include_normal)
                    .map(|(t, leaf, _)| {
                        let rec = if opts.td_include_normal {
                            t.record().number(ANOMALY_KEY, score(t.anomaly))
                        } else {
                            t.record()
                        };
                        GtRecord::at(rec, leaf.clone())
                    })
                    .collect();
                out.push(one(task, gt, None));
            }
            TaskId::AnomalyBu => {
                let gt = r
                    .distinct()
                    .into_iter()
                    .map(|(t, leaf, _)| GtRecord::at(t.record().number(ANOMALY_KEY, score(t.anomaly)), leaf.clone()))
                    .collect();
                out.push(one(task, gt, None));
            }
            TaskId::Grounding => {
                for (k, (t, _, idx)) in r.distinct().into_iter().enumerate() {
                    let gt = idx
                        .iter()
                        .map(|&i| GtRecord::new(interval_record(&ann.instance_interval(&ann.triplet_instances[i]))))
                        .collect();
                    out.push(EvalSample {
                        sample_id: format!("{}/{}/{}", ann.video_id, task, k),
                        video_id: ann.video_id.clone(),
                        task,
                        ground_truth: gt,
                        query: Some(t.text()),
                    });
                }
            }
            TaskId::Detection => {
                let anomalous: Vec<Interval> = ann
                    .triplet_instances
                    .iter()
                    .filter(|i| i.triplet.anomaly)
                    .map(|i| ann.instance_interval(i))
                    .collect();
                let gt = merge_intervals(&anomalous)
                    .iter()
                    .map(|iv| GtRecord::new(interval_record(iv)))
                    .collect();
                out.push(one(task, gt, None));
            }
            TaskId::Anticipation => {
                let boundary = opts.anticipation_boundary_s.unwrap_or_else(|| {
                    ann.triplet_instances
                        .iter()
                        .min_by_key(|i| i.start_frame)
                        .map_or(0.0, |i| ann.seconds(i.end_frame))
                });
                let gt = r
                    .distinct()
                    .into_iter()
                    .filter(|(_, _, idx)| {
                        idx.iter()
                            .any(|&i| ann.seconds(ann.triplet_instances[i].start_frame) > boundary)
                    })
                    .map(|(t, leaf, _)| GtRecord::at(t.record().number(ANOMALY_KEY, score(t.anomaly)), leaf.clone()))
                    .collect();
                out.push(one(task, gt, Some(format!("observed: 0-{boundary}s"))));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Aggregation

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Struct,
    Semantic,
    Hierarchy,
    Tiou,
}

impl MetricName {
    pub const ALL: [MetricName; 4] = [Self::Struct, Self::Semantic, Self::Hierarchy, Self::Tiou];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Struct => "struct",
            Self::Semantic => "semantic",
            Self::Hierarchy => "hierarchy",
            Self::Tiou => "tiou",
        }
    }

    fn pick(self, b: &ScoreBundle) -> Option<f64> {
        match self {
            Self::Struct => Some(b.struct_score),
            Self::Semantic => b.semantic_score,
            Self::Hierarchy => b.hierarchy_score,
            Self::Tiou => b.tiou,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    /// Mean × 100; `None` when no sample of the task carries the metric.
    pub mean: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: TaskId,
    pub samples: usize,
    pub metrics: BTreeMap<MetricName, MetricCell>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

fn ordered_mean(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    // Sorting first makes the floating-point sum independent of input order.
    values.sort_by(f64::total_cmp);
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn aggregate(bundles: &[(TaskId, ScoreBundle)]) -> ReportTable {
    let mut by_task: BTreeMap<TaskId, Vec<&ScoreBundle>> = BTreeMap::new();
    for (task, b) in bundles {
        by_task.entry(*task).or_default().push(b);
    }
    let rows = by_task
        .into_iter()
        .map(|(task, bs)| {
            let metrics = MetricName::ALL
                .into_iter()
                .map(|m| {
                    let vals: Vec<f64> = bs.iter().filter_map(|b| m.pick(b)).collect();
                    let count = vals.len();
                    let mean = ordered_mean(vals).map(|v| v * 100.0);
                    (m, MetricCell { mean, count })
                })
                .collect();
            ReportRow {
                task,
                samples: bs.len(),
                metrics,
            }
        })
        .collect();
    ReportTable { rows }
}
