use std::collections::{HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vau_core::answers::{parse_answer_list, parse_response, AnswerList, TaskId, ValueTag};
use vau_core::datamodel::{aggregate, build_samples, load_annotations_file, BuildOptions, DataError, EvalSample};
use vau_core::grposim::{run_training, SimError, StepTrace, TabularPolicy, TrainConfig};
use vau_core::metrics::{evaluate_sample, GtRecord, ScoreBundle};
use vau_core::rewards::{group_advantages, total_reward, RewardBundle, RewardConfig};
use vau_core::taxonomy::Hierarchy;

use crate::config::{bare_hierarchy, check_ranges, load_hierarchy, HarnessConfig, ProviderSpec};
use crate::report::{render_eval, render_stats, RunInfo};
use crate::{prompts, CliError, EvalArgs, Outcome, PromptArgs, RewardArgs, SampleArgs, SimulateArgs, ValidateArgs};

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn data_error(e: DataError) -> CliError {
    match e {
        DataError::Io { path, source } => CliError::Io {
            path,
            message: source.to_string(),
        },
        other => CliError::Invalid(format!("ground truth {other}")),
    }
}

pub fn load_samples(h: &Hierarchy, a: &SampleArgs) -> Result<Vec<EvalSample>, CliError> {
    let tasks: Vec<TaskId> = if a.tasks.is_empty() {
        TaskId::ALL.to_vec()
    } else {
        a.tasks.clone()
    };
    let opts = BuildOptions {
        td_include_normal: a.td_include_normal,
        anticipation_boundary_s: a.anticipation_boundary,
    };
    let anns = load_annotations_file(&a.gt, h).map_err(data_error)?;
    Ok(anns.iter().flat_map(|r| build_samples(r, h, &tasks, &opts)).collect())
}

/// Parses a JSON array or JSON Lines body into `T`s, naming the failing entry.
fn parse_entries<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<Vec<T>, CliError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let de = &mut serde_json::Deserializer::from_str(trimmed);
        return serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::Invalid(format!("{what} {}: {}", e.path(), e.inner())));
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Invalid(format!("{what} line {}: {e}", i + 1))))
        .collect()
}

// ---------------------------------------------------------------------------

pub fn validate_taxonomy(a: &ValidateArgs) -> Result<Outcome, CliError> {
    let h = load_hierarchy(&a.taxonomy)?;
    Ok(Outcome {
        output: render_stats(a.format, &h.stats(), h.len()),
        ..Outcome::default()
    })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub sample_id: String,
    /// Raw model text, tags and all.
    #[serde(default)]
    pub response: Option<String>,
    /// Already-structured answer list.
    #[serde(default)]
    pub answer: Option<serde_json::Value>,
}

impl Prediction {
    fn answers(&self, task: TaskId) -> AnswerList {
        let spec = task.spec();
        match (&self.response, &self.answer) {
            (Some(raw), _) => parse_response(raw, &spec),
            (None, Some(v)) => parse_answer_list(&v.to_string(), &spec),
            (None, None) => AnswerList::default(),
        }
    }
}

#[derive(Serialize)]
struct SampleLine<'a> {
    sample_id: &'a str,
    task: TaskId,
    scores: &'a ScoreBundle,
}

pub fn eval(a: &EvalArgs) -> Result<Outcome, CliError> {
    let cfg = HarnessConfig::from_args(&a.scoring)?;
    let samples = load_samples(&cfg.hierarchy, &a.samples)?;
    let preds: Vec<Prediction> = parse_entries(&read(&a.pred)?, "predictions")?;

    let mut by_id: HashMap<&str, &Prediction> = HashMap::new();
    for p in &preds {
        if p.response.is_some() && p.answer.is_some() {
            return Err(CliError::Invalid(format!(
                "prediction {} has both \"response\" and \"answer\"",
                p.sample_id
            )));
        }
        if by_id.insert(&p.sample_id, p).is_some() {
            return Err(CliError::Invalid(format!("duplicate prediction for {}", p.sample_id)));
        }
    }
    let known: HashSet<&str> = samples.iter().map(|s| s.sample_id.as_str()).collect();
    let mut orphans: Vec<&str> = preds
        .iter()
        .map(|p| p.sample_id.as_str())
        .filter(|id| !known.contains(id))
        .collect();
    orphans.sort_unstable();

    let pool = cfg.pool()?;
    let scored: Vec<ScoreBundle> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| {
                let pred = by_id
                    .get(s.sample_id.as_str())
                    .map(|p| p.answers(s.task))
                    .unwrap_or_default();
                evaluate_sample(
                    &pred,
                    &s.ground_truth,
                    &s.task.spec(),
                    &cfg.hierarchy,
                    &cfg.provider,
                    &cfg.metric,
                )
                .map_err(|e| CliError::Runtime(format!("scoring {}: {e}", s.sample_id)))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let pairs: Vec<(TaskId, ScoreBundle)> = samples.iter().map(|s| s.task).zip(scored.iter().cloned()).collect();
    let table = aggregate(&pairs);
    let run = RunInfo {
        samples: samples.len(),
        predictions: preds.len() - orphans.len(),
        missing_predictions: samples
            .iter()
            .filter(|s| !by_id.contains_key(s.sample_id.as_str()))
            .count(),
        orphan_predictions: orphans.len(),
    };
    if let Some(path) = &a.samples_out {
        let mut lines = String::new();
        for (s, b) in samples.iter().zip(&scored) {
            let line = SampleLine {
                sample_id: &s.sample_id,
                task: s.task,
                scores: b,
            };
            lines.push_str(&serde_json::to_string(&line).expect("sample line serializes"));
            lines.push('\n');
        }
        std::fs::write(path, lines).map_err(|e| CliError::io(path, e))?;
    }
    let warnings = if orphans.is_empty() {
        Vec::new()
    } else {
        vec![format!(
            "{} prediction(s) match no ground-truth sample and were skipped: {}",
            orphans.len(),
            orphans.join(", ")
        )]
    };
    Ok(Outcome {
        output: render_eval(a.format, &cfg.header(), &run, &table),
        summary: None,
        warnings,
    })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Completion {
    pub prompt_id: String,
    pub response: String,
}

#[derive(Serialize)]
struct RewardLine<'a> {
    prompt_id: &'a str,
    index: usize,
    #[serde(flatten)]
    reward: &'a RewardBundle,
    advantage: f64,
}

pub fn reward(a: &RewardArgs) -> Result<Outcome, CliError> {
    let cfg = HarnessConfig::from_args(&a.scoring)?;
    let samples = load_samples(&cfg.hierarchy, &a.samples)?;
    let by_id: HashMap<&str, &EvalSample> = samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let completions: Vec<Completion> = parse_entries(&read(&a.completions)?, "completions")?;

    // Groups in order of first appearance.
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, c) in completions.iter().enumerate() {
        groups
            .entry(&c.prompt_id)
            .or_insert_with(|| {
                order.push(&c.prompt_id);
                Vec::new()
            })
            .push(i);
    }
    let missing: Vec<&str> = order.iter().copied().filter(|id| !by_id.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(CliError::Invalid(format!(
            "completion group(s) without ground truth: {}",
            missing.join(", ")
        )));
    }

    let pool = cfg.pool()?;
    let bundles: Vec<RewardBundle> = pool.install(|| {
        completions
            .par_iter()
            .map(|c| {
                let s = by_id[c.prompt_id.as_str()];
                total_reward(
                    &c.response,
                    &s.ground_truth,
                    &s.task.spec(),
                    &cfg.hierarchy,
                    &cfg.provider,
                    &cfg.reward,
                )
                .map_err(|e| CliError::Runtime(format!("reward for {}: {e}", c.prompt_id)))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut out = String::new();
    for id in order {
        let idx = &groups[id];
        let totals: Vec<f64> = idx.iter().map(|&i| bundles[i].total).collect();
        for (k, (&i, adv)) in idx.iter().zip(group_advantages(&totals)).enumerate() {
            let line = RewardLine {
                prompt_id: id,
                index: k,
                reward: &bundles[i],
                advantage: adv,
            };
            out.push_str(&serde_json::to_string(&line).expect("reward line serializes"));
            out.push('\n');
        }
    }
    Ok(Outcome {
        output: out,
        ..Outcome::default()
    })
}

// ---------------------------------------------------------------------------

pub fn prompts(a: &PromptArgs) -> Result<Outcome, CliError> {
    let h = load_hierarchy(&a.taxonomy)?;
    let samples = load_samples(&h, &a.samples)?;
    Ok(Outcome {
        output: prompts::render_pack(&samples),
        ..Outcome::default()
    })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyInstance {
    pub prompt_id: String,
    pub candidates: Vec<String>,
    pub ground_truth: serde_json::Value,
    pub task: TaskId,
}

#[derive(Serialize)]
struct TraceHeader<'a> {
    kind: &'static str,
    prompt_id: &'a str,
    task: TaskId,
    candidates: usize,
    candidate_rewards: &'a [f64],
    sft_target: Option<usize>,
    config: &'a TrainConfig,
    reference_probs: &'a [f64],
}

#[derive(Serialize)]
struct TraceStep<'a> {
    kind: &'static str,
    #[serde(flatten)]
    step: &'a StepTrace,
}

#[derive(Serialize)]
struct Summary<'a> {
    kind: &'static str,
    steps: usize,
    best_candidate: usize,
    p_best: f64,
    final_probs: &'a [f64],
}

pub fn simulate(a: &SimulateArgs) -> Result<Outcome, CliError> {
    check_ranges(1.0, a.lambda)?;
    if a.group_size == 0 || !a.temperature.is_finite() || a.temperature <= 0.0 {
        return Err(CliError::Config(
            "--group-size must be >= 1 and --temperature > 0".into(),
        ));
    }
    let inst: ToyInstance = {
        let text = read(&a.instance)?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::Invalid(format!("instance {}: {}", e.path(), e.inner())))?
    };
    if inst.candidates.is_empty() {
        return Err(CliError::Invalid("instance has no candidates".into()));
    }
    let spec = inst.task.spec();
    let h = match &a.taxonomy {
        Some(path) => load_hierarchy(path)?,
        None if spec.value_tag == ValueTag::EventBearing => {
            return Err(CliError::Config(format!("task {} needs --taxonomy", inst.task)))
        }
        None => bare_hierarchy(),
    };
    let provider = ProviderSpec::from_env(&a.provider)?.build(a.dims)?;
    let gt: Vec<GtRecord> = parse_answer_list(&inst.ground_truth.to_string(), &spec)
        .records
        .into_iter()
        .map(GtRecord::new)
        .collect();
    let rcfg = RewardConfig {
        lambda: a.lambda,
        semantic_normalization: a.sem_norm.normalization(),
        ..RewardConfig::default()
    };
    let rewards = inst
        .candidates
        .iter()
        .map(|c| total_reward(c, &gt, &spec, &h, &provider, &rcfg).map(|b| b.total))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| CliError::Runtime(format!("candidate reward: {e}")))?;
    let best = rewards
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if *r > rewards[b] { i } else { b });

    let cfg = TrainConfig {
        group_size: a.group_size,
        temperature: a.temperature,
        beta: a.beta,
        epsilon: a.epsilon,
        lr: a.lr,
        steps: a.steps,
        sft_steps: a.sft_steps,
        sft_lr: a.sft_lr,
        seed: a.seed,
    };
    let sft_target = (a.sft_steps > 0).then_some(best);
    let init = TabularPolicy::uniform(inst.candidates.len(), a.temperature);
    let trace = run_training(&init, sft_target, &cfg, |i| {
        rewards.get(i).copied().ok_or(SimError::IndexOutOfRange {
            index: i,
            len: rewards.len(),
        })
    })
    .map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut out = serde_json::to_string(&TraceHeader {
        kind: "header",
        prompt_id: &inst.prompt_id,
        task: inst.task,
        candidates: inst.candidates.len(),
        candidate_rewards: &rewards,
        sft_target,
        config: &cfg,
        reference_probs: &trace.reference_probs,
    })
    .expect("header serializes");
    out.push('\n');
    for s in &trace.steps {
        out.push_str(&serde_json::to_string(&TraceStep { kind: "step", step: s }).expect("step serializes"));
        out.push('\n');
    }
    let summary = serde_json::to_string(&Summary {
        kind: "summary",
        steps: trace.steps.len(),
        best_candidate: best,
        p_best: trace.final_probs[best],
        final_probs: &trace.final_probs,
    })
    .expect("summary serializes");
    Ok(Outcome {
        output: out,
        summary: Some(summary),
        warnings: Vec::new(),
    })
}
