//! Prompt packs: one problem prompt and one format prompt per sample.
//!
//! The wording is a reconstruction built from the task schemas; the pack
//! header says so.

use serde::Serialize;
use vau_core::answers::TaskId;
use vau_core::datamodel::EvalSample;

pub const STEM: &str = "This is a video showing some key events related to the safety, laws & rules, or life & health.";

#[derive(Debug, Clone, Serialize)]
pub struct PackHeader {
    pub kind: &'static str,
    pub version: &'static str,
    pub stem: &'static str,
    pub reconstructed: bool,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PromptEntry {
    pub sample_id: String,
    pub video_id: String,
    pub task: TaskId,
    pub problem_prompt: String,
    pub format_prompt: String,
}

fn key_description(key: &str) -> &'static str {
    match key {
        "event" => "string, the event taking place",
        "scene" => "string, where the event takes place",
        "attribute" => "string, the person or object attribute that gives the event its context",
        "anomaly" => "number in [0, 1], how anomalous the event is in this context (1 = anomalous)",
        "start" => "number, start time in seconds from the beginning of the video",
        "end" => "number, end time in seconds from the beginning of the video",
        _ => "string",
    }
}

pub fn problem_prompt(sample: &EvalSample) -> String {
    let ask = match sample.task {
        TaskId::EventRec => "List every event that occurs in the video.".to_string(),
        TaskId::SceneRec => "List the scenes in which the events take place.".to_string(),
        TaskId::AttributeRec => "List the attributes of the people or objects involved in the events.".to_string(),
        TaskId::AnomalyTd => {
            "Find every anomalous event in the video and describe it with its scene and attribute.".to_string()
        }
        TaskId::AnomalyBu => "Describe every event in the video with its scene and attribute, \
             then rate how anomalous each one is in that context."
            .to_string(),
        TaskId::Grounding => format!(
            "Find every time span in which the following happens: {}.",
            sample.query.as_deref().unwrap_or("the described event")
        ),
        TaskId::Detection => "Find every time span that contains an anomalous event.".to_string(),
        TaskId::Anticipation => format!(
            "You have seen only part of the video ({}). Predict the events that will follow, \
             with their scene and attribute, and rate how anomalous each one will be.",
            sample.query.as_deref().unwrap_or("observed prefix")
        ),
    };
    format!("{STEM} {ask}")
}

pub fn format_prompt(task: TaskId) -> String {
    let spec = task.spec();
    let keys: Vec<String> = spec
        .key_schema
        .iter()
        .map(|k| format!("\"{k}\" ({})", key_description(k)))
        .collect();
    format!(
        "Reason step by step inside <think> </think> tags. Then give the final answer inside \
         <answer> </answer> tags as a JSON list of objects, one object per item, each with the keys {}. \
         Answer with an empty list if there is nothing to report.",
        keys.join(", ")
    )
}

pub fn entry(sample: &EvalSample) -> PromptEntry {
    PromptEntry {
        sample_id: sample.sample_id.clone(),
        video_id: sample.video_id.clone(),
        task: sample.task,
        problem_prompt: problem_prompt(sample),
        format_prompt: format_prompt(sample.task),
    }
}

/// JSON Lines: a header line followed by one entry per sample.
pub fn render_pack(samples: &[EvalSample]) -> String {
    let header = PackHeader {
        kind: "header",
        version: vau_core::ARTIFACT_VERSION,
        stem: STEM,
        reconstructed: true,
        samples: samples.len(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for s in samples {
        out.push_str(&serde_json::to_string(&entry(s)).expect("entry serializes"));
        out.push('\n');
    }
    out
}
