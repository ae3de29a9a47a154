//! Task schemas and parsing of tagged, JSON-style model answers.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::taxonomy::{render_triplet_text, BranchFilter, EVENT_LEVEL, LEAF_LEVEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskId {
    #[serde(rename = "event-rec")]
    EventRec,
    #[serde(rename = "scene-rec")]
    SceneRec,
    #[serde(rename = "attribute-rec")]
    AttributeRec,
    #[serde(rename = "anomaly-td")]
    AnomalyTd,
    #[serde(rename = "anomaly-bu")]
    AnomalyBu,
    #[serde(rename = "grounding")]
    Grounding,
    #[serde(rename = "detection")]
    Detection,
    #[serde(rename = "anticipation")]
    Anticipation,
}

impl TaskId {
    pub const ALL: [TaskId; 8] = [
        TaskId::EventRec,
        TaskId::SceneRec,
        TaskId::AttributeRec,
        TaskId::AnomalyTd,
        TaskId::AnomalyBu,
        TaskId::Grounding,
        TaskId::Detection,
        TaskId::Anticipation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::EventRec => "event-rec",
            TaskId::SceneRec => "scene-rec",
            TaskId::AttributeRec => "attribute-rec",
            TaskId::AnomalyTd => "anomaly-td",
            TaskId::AnomalyBu => "anomaly-bu",
            TaskId::Grounding => "grounding",
            TaskId::Detection => "detection",
            TaskId::Anticipation => "anticipation",
        }
    }

    pub fn spec(self) -> TaskSpec {
        TaskSpec::for_task(self)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task id {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueTag {
    /// `⟨T⟩`: start/end timestamps.
    Temporal,
    /// `⟨E,·⟩`: records carrying an event.
    EventBearing,
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchRule {
    AnomalyOnly,
    /// Search the state branch of the ground-truth node.
    GtState,
    /// Anomaly branch iff the predicted `anomaly` value exceeds 0.5.
    ScoreThreshold,
}

/// Where proxies are retrieved for hierarchy scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyRouting {
    pub compared_level: u8,
    pub branch_rule: BranchRule,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub key_schema: Vec<&'static str>,
    pub value_tag: ValueTag,
    /// Present exactly for event-bearing tasks.
    pub hierarchy: Option<HierarchyRouting>,
}

pub const ANOMALY_KEY: &str = "anomaly";
pub const START_KEY: &str = "start";
pub const END_KEY: &str = "end";

const TRIPLET_KEYS: [&str; 3] = ["event", "scene", "attribute"];

impl TaskSpec {
    pub fn for_task(task_id: TaskId) -> Self {
        let (keys, level, rule): (&[&'static str], _, _) = match task_id {
            TaskId::EventRec => (&["event"], Some(EVENT_LEVEL), BranchRule::GtState),
            TaskId::SceneRec => (&["scene"], None, BranchRule::GtState),
            TaskId::AttributeRec => (&["attribute"], None, BranchRule::GtState),
            TaskId::AnomalyTd => (&TRIPLET_KEYS, Some(LEAF_LEVEL), BranchRule::AnomalyOnly),
            TaskId::AnomalyBu | TaskId::Anticipation => (
                &["event", "scene", "attribute", ANOMALY_KEY],
                Some(LEAF_LEVEL),
                BranchRule::ScoreThreshold,
            ),
            TaskId::Grounding | TaskId::Detection => (&[START_KEY, END_KEY], None, BranchRule::GtState),
        };
        let value_tag = if keys.contains(&START_KEY) && keys.contains(&END_KEY) {
            ValueTag::Temporal
        } else if keys.contains(&"event") {
            ValueTag::EventBearing
        } else {
            ValueTag::Plain
        };
        TaskSpec {
            task_id,
            key_schema: keys.to_vec(),
            value_tag,
            hierarchy: level.map(|compared_level| HierarchyRouting {
                compared_level,
                branch_rule: rule,
            }),
        }
    }

    /// Records of this task embed as rendered triplets rather than a single field.
    pub fn is_triplet_shaped(&self) -> bool {
        TRIPLET_KEYS.iter().all(|k| self.key_schema.contains(k))
    }

    pub fn has_key(&self, key: &str) -> bool {
        self.key_schema.contains(&key)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnswerValue {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl AnswerValue {
    pub fn as_text(&self) -> String {
        match self {
            AnswerValue::Text(s) => s.clone(),
            AnswerValue::Number(x) => format!("{x}"),
            AnswerValue::Bool(b) => b.to_string(),
        }
    }

    /// Numeric reading: numbers as-is, booleans as 1/0.
    pub fn as_score(&self) -> Option<f64> {
        match self {
            AnswerValue::Number(x) => Some(*x),
            AnswerValue::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            AnswerValue::Text(_) => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnswerRecord {
    pub entries: IndexMap<String, AnswerValue>,
}

impl AnswerRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: AnswerValue) -> Self {
        self.entries.insert(key.to_string(), value);
        self
    }

    pub fn text(self, key: &str, value: &str) -> Self {
        self.with(key, AnswerValue::Text(value.to_string()))
    }

    pub fn number(self, key: &str, value: f64) -> Self {
        self.with(key, AnswerValue::Number(value))
    }

    pub fn get(&self, key: &str) -> Option<&AnswerValue> {
        self.entries.get(key)
    }

    pub fn text_of(&self, key: &str) -> String {
        self.get(key).map(AnswerValue::as_text).unwrap_or_default()
    }

    pub fn score_of(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(AnswerValue::as_score)
    }

    /// Text compared semantically for this record under `spec`.
    pub fn value_text(&self, spec: &TaskSpec) -> String {
        if spec.is_triplet_shaped() {
            render_triplet_text(
                &self.text_of("event"),
                &self.text_of("scene"),
                &self.text_of("attribute"),
            )
        } else {
            let key = spec
                .key_schema
                .iter()
                .find(|k| **k != ANOMALY_KEY)
                .copied()
                .unwrap_or_default();
            crate::embed::normalize_text(&self.text_of(key))
        }
    }

    /// Text of the taxonomy-level content: event label at level 4, triplet at 5.
    pub fn hierarchy_text(&self, level: u8) -> String {
        if level >= LEAF_LEVEL {
            render_triplet_text(
                &self.text_of("event"),
                &self.text_of("scene"),
                &self.text_of("attribute"),
            )
        } else {
            crate::embed::normalize_text(&self.text_of("event"))
        }
    }

    /// Branch implied by the predicted anomaly score (missing reads as normal).
    pub fn score_branch(&self) -> BranchFilter {
        match self.score_of(ANOMALY_KEY) {
            Some(x) if x > 0.5 => BranchFilter::AnomalyOnly,
            _ => BranchFilter::NormalityOnly,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AnswerList {
    pub records: Vec<AnswerRecord>,
    pub think_present: bool,
    pub answer_present: bool,
}

impl AnswerList {
    pub fn from_records(records: Vec<AnswerRecord>) -> Self {
        Self {
            records,
            think_present: false,
            answer_present: false,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Result of locating the think/answer tags in a raw response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extracted {
    pub inner: String,
    pub think_present: bool,
    pub answer_present: bool,
}

/// Byte span `(open_start, inner_start, inner_end, close_end)` of the first
/// `<tag>…</tag>` pair, matched ASCII case-insensitively.
fn find_tag(raw: &str, tag: &str) -> Option<(usize, usize, usize, usize)> {
    let lower = raw.to_ascii_lowercase();
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = lower.find(&open)?;
    let inner_start = start + open.len();
    let inner_len = lower[inner_start..].find(&close)?;
    let inner_end = inner_start + inner_len;
    Some((start, inner_start, inner_end, inner_end + close.len()))
}

pub fn extract_answer(raw: &str) -> Extracted {
    let think_present = find_tag(raw, "think").is_some();
    match find_tag(raw, "answer") {
        Some((_, s, e, _)) => Extracted {
            inner: raw[s..e].to_string(),
            think_present,
            answer_present: true,
        },
        None => Extracted {
            inner: String::new(),
            think_present,
            answer_present: false,
        },
    }
}

/// 1 iff both the think and the answer tag pairs are present.
pub fn format_reward(raw: &str) -> u8 {
    let e = extract_answer(raw);
    u8::from(e.think_present && e.answer_present)
}

/// Payload to parse when no answer tags exist: the response minus any think block.
pub fn untagged_payload(raw: &str) -> String {
    let mut s = raw.to_string();
    while let Some((start, _, _, end)) = find_tag(&s, "think") {
        s.replace_range(start..end, "");
    }
    s.trim().to_string()
}

/// Extracts and parses a raw response, falling back to the untagged payload.
pub fn parse_response(raw: &str, spec: &TaskSpec) -> AnswerList {
    let e = extract_answer(raw);
    let payload = if e.answer_present {
        e.inner
    } else {
        untagged_payload(raw)
    };
    let mut list = parse_answer_list(&payload, spec);
    list.think_present = e.think_present;
    list.answer_present = e.answer_present;
    list
}

fn strip_code_fence(s: &str) -> &str {
    let t = s.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    // Drop the info string (e.g. `json`) on the opening line.
    let body = match rest.find('\n') {
        Some(nl) => &rest[nl + 1..],
        None => rest,
    };
    match body.rfind("```") {
        Some(end) => body[..end].trim(),
        None => body.trim(),
    }
}

/// Parses "mm:ss" (minutes may exceed 59, seconds may be fractional).
pub fn parse_mm_ss(s: &str) -> Option<f64> {
    let (m, sec) = s.trim().split_once(':')?;
    if m.is_empty() || !m.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let minutes: u64 = m.parse().ok()?;
    let seconds: f64 = sec.parse().ok()?;
    if !seconds.is_finite() || !(0.0..60.0).contains(&seconds) || sec.starts_with(['+', '-']) {
        return None;
    }
    Some(minutes as f64 * 60.0 + seconds)
}

fn coerce(key: &str, value: serde_json::Value) -> AnswerValue {
    use serde_json::Value;
    match value {
        Value::Bool(b) => AnswerValue::Bool(b),
        Value::Number(n) => AnswerValue::Number(n.as_f64().unwrap_or(f64::NAN)),
        Value::String(s) => {
            if key == START_KEY || key == END_KEY {
                if let Some(secs) = parse_mm_ss(&s) {
                    return AnswerValue::Number(secs);
                }
            }
            if key == ANOMALY_KEY {
                match s.trim().to_ascii_lowercase().as_str() {
                    "true" => return AnswerValue::Bool(true),
                    "false" => return AnswerValue::Bool(false),
                    _ => {}
                }
            }
            AnswerValue::Text(s)
        }
        Value::Null => AnswerValue::Text(String::new()),
        other => AnswerValue::Text(other.to_string()),
    }
}

/// Parses the answer payload into records.
///
/// Accepted: a JSON array of objects, or a single object (promoted to a
/// one-element list), optionally inside a markdown code fence. Anything
/// else yields an empty list.
pub fn parse_answer_list(inner: &str, _spec: &TaskSpec) -> AnswerList {
    use serde_json::Value;
    let body = strip_code_fence(inner);
    let objects = match serde_json::from_str::<Value>(body) {
        Ok(Value::Array(items)) => {
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                match item {
                    Value::Object(map) => out.push(map),
                    _ => return AnswerList::default(),
                }
            }
            out
        }
        Ok(Value::Object(map)) => vec![map],
        _ => return AnswerList::default(),
    };
    let records = objects
        .into_iter()
        .map(|map| AnswerRecord {
            entries: map
                .into_iter()
                .map(|(k, v)| {
                    let value = coerce(&k, v);
                    (k, value)
                })
                .collect(),
        })
        .collect();
    AnswerList::from_records(records)
}

/// Multiset of key names.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct KeyBag(BTreeMap<String, usize>);

impl KeyBag {
    pub fn from_keys<'a>(keys: impl IntoIterator<Item = &'a str>) -> Self {
        let mut bag = BTreeMap::new();
        for k in keys {
            *bag.entry(k.to_string()).or_insert(0) += 1;
        }
        Self(bag)
    }

    pub fn count(&self, key: &str) -> usize {
        self.0.get(key).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.0.iter().map(|(k, &c)| (k.as_str(), c))
    }

    pub fn intersection_size(&self, other: &KeyBag) -> usize {
        self.iter().map(|(k, c)| c.min(other.count(k))).sum()
    }
}

pub fn key_bag(records: &[AnswerRecord]) -> KeyBag {
    KeyBag::from_keys(records.iter().flat_map(|r| r.entries.keys().map(String::as_str)))
}
