mod common;

use common::{check_golden, cli, eval_args, fixture, EVAL_TASKS};
use serde_json::Value;
use vau_eval::commands::load_samples;
use vau_eval::config::load_hierarchy;
use vau_eval::SampleArgs;

fn jsonl(s: &str) -> Vec<Value> {
    s.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn validate_taxonomy_exit_codes() {
    let ok = cli(&["validate-taxonomy", "--taxonomy", &fixture("mini_taxonomy.json")]);
    assert_eq!(ok.code, 0, "{}", ok.stderr);
    let stats: Value = serde_json::from_str(&ok.stdout).unwrap();
    assert_eq!(stats["level_counts"], serde_json::json!([2, 5, 6, 10, 12]));

    let skip = cli(&["validate-taxonomy", "--taxonomy", &fixture("level_skip_taxonomy.json")]);
    assert_eq!(skip.code, 1);
    assert!(skip.stderr.contains("A.l.cr.va"), "{}", skip.stderr);

    let missing = cli(&["validate-taxonomy", "--taxonomy", &fixture("no_such_file.json")]);
    assert_eq!(missing.code, 2);
    assert!(missing.stderr.contains("no_such_file.json"));
}

#[test]
fn stats_render_in_every_format() {
    for (fmt, needle) in [("csv", "5,12"), ("markdown", "| 5 | 12 |")] {
        let r = cli(&[
            "validate-taxonomy",
            "--taxonomy",
            &fixture("mini_taxonomy.json"),
            "--format",
            fmt,
        ]);
        assert!(r.stdout.contains(needle), "{fmt}: {}", r.stdout);
    }
}

#[test]
fn eval_report_matches_golden_in_all_formats() {
    let (tax, gt, pred) = (
        fixture("mini_taxonomy.json"),
        fixture("eval_gt.json"),
        fixture("eval_pred.jsonl"),
    );
    for (fmt, file) in [
        ("json", "eval_report.json"),
        ("csv", "eval_report.csv"),
        ("markdown", "eval_report.md"),
    ] {
        let r = cli(&eval_args(&tax, &gt, &pred, "1", fmt));
        assert_eq!(r.code, 0, "{}", r.stderr);
        assert!(check_golden(file, &r.stdout), "{file} drifted:\n{}", r.stdout);
    }
}

#[test]
fn self_evaluation_scores_full_structure() {
    let tax = fixture("mini_taxonomy.json");
    let dir = tempfile::tempdir().unwrap();
    let h = load_hierarchy(tax.as_ref()).unwrap();
    let samples = load_samples(
        &h,
        &SampleArgs {
            gt: fixture("eval_gt.json").into(),
            tasks: vec![],
            td_include_normal: false,
            anticipation_boundary: None,
        },
    )
    .unwrap();
    let mut lines = String::new();
    for s in &samples {
        let answer: Vec<_> = s.ground_truth.iter().map(|g| g.record.clone()).collect();
        lines.push_str(&serde_json::json!({"sample_id": s.sample_id, "answer": answer}).to_string());
        lines.push('\n');
    }
    let pred = dir.path().join("self.jsonl");
    std::fs::write(&pred, lines).unwrap();
    let pred = pred.display().to_string();
    let gt = fixture("eval_gt.json");
    let r = cli(&["eval", "--taxonomy", &tax, "--gt", &gt, "--pred", &pred]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let report: Value = serde_json::from_str(&r.stdout).unwrap();
    for row in report["table"]["rows"].as_array().unwrap() {
        assert_eq!(row["metrics"]["struct"]["mean"], 100.0, "{row}");
        if let Some(t) = row["metrics"]["tiou"]["mean"].as_f64() {
            assert_eq!(t, 100.0);
        }
    }
}

#[test]
fn empty_predictions_score_zero_except_vacuous_cases() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("none.jsonl");
    std::fs::write(&pred, "").unwrap();
    let (tax, gt, pred) = (
        fixture("mini_taxonomy.json"),
        fixture("eval_gt.json"),
        pred.display().to_string(),
    );
    let r = cli(&[
        "eval",
        "--taxonomy",
        &tax,
        "--gt",
        &gt,
        "--pred",
        &pred,
        "--samples-out",
        &format!("{pred}.out"),
    ]);
    assert_eq!(r.code, 0);
    let lines = std::fs::read_to_string(format!("{pred}.out")).unwrap();
    let lines = jsonl(&lines);
    assert_eq!(lines.len(), 9);
    // Every sample in this fixture has non-empty ground truth, so nothing is vacuous.
    for line in lines {
        let scores = line["scores"].as_object().unwrap();
        assert!(scores.values().all(|v| v.as_f64() == Some(0.0)), "{line}");
    }
}

#[test]
fn orphan_predictions_warn_with_status_one() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("orphan.jsonl");
    std::fs::write(&pred, "{\"sample_id\": \"v999/detection\", \"answer\": []}\n").unwrap();
    let (tax, gt, pred) = (
        fixture("mini_taxonomy.json"),
        fixture("eval_gt.json"),
        pred.display().to_string(),
    );
    let r = cli(&[
        "eval",
        "--taxonomy",
        &tax,
        "--gt",
        &gt,
        "--pred",
        &pred,
        "--tasks",
        EVAL_TASKS,
    ]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("v999/detection"));
    assert!(r.stdout.contains("\"orphan_predictions\": 1"));
}

#[test]
fn bad_config_is_status_two() {
    let (tax, gt, pred) = (
        fixture("mini_taxonomy.json"),
        fixture("eval_gt.json"),
        fixture("eval_pred.jsonl"),
    );
    let r = cli(&["eval", "--taxonomy", &tax, "--gt", &gt, "--pred", &pred, "--tau", "0"]);
    assert_eq!(r.code, 2);
    let r = cli(&[
        "eval",
        "--taxonomy",
        &tax,
        "--gt",
        &gt,
        "--pred",
        &pred,
        "--provider",
        "bert",
    ]);
    assert_eq!(r.code, 2);
}

fn reward_run(completions: &str) -> common::Run {
    let (tax, gt) = (fixture("mini_taxonomy.json"), fixture("eval_gt.json"));
    cli(&["reward", "--taxonomy", &tax, "--gt", &gt, "--completions", completions])
}

#[test]
fn reward_golden_and_format_gap() {
    let r = reward_run(&fixture("completions.jsonl"));
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(
        check_golden("rewards.jsonl", &r.stdout),
        "rewards drifted:\n{}",
        r.stdout
    );
    let lines = jsonl(&r.stdout);
    let (tagged, bare) = (lines[0]["total"].as_f64().unwrap(), lines[1]["total"].as_f64().unwrap());
    assert_eq!(tagged - bare, 1.0);
}

#[test]
fn identical_perfect_group_has_zero_advantages() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("same.jsonl");
    let line = serde_json::json!({
        "prompt_id": "v001/detection",
        "response": "<think>x</think><answer>[{\"start\": 2, \"end\": 6}]</answer>"
    })
    .to_string();
    std::fs::write(&path, format!("{line}\n{line}\n{line}\n{line}\n")).unwrap();
    let r = reward_run(&path.display().to_string());
    for l in jsonl(&r.stdout) {
        assert_eq!((l["total"].as_f64(), l["advantage"].as_f64()), (Some(3.0), Some(0.0)));
    }
}

#[test]
fn reward_group_without_ground_truth_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lost.jsonl");
    std::fs::write(&path, "{\"prompt_id\": \"v404/detection\", \"response\": \"\"}\n").unwrap();
    let r = reward_run(&path.display().to_string());
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("v404/detection"));
}

#[test]
fn prompt_pack_shapes() {
    let (tax, gt) = (fixture("mini_taxonomy.json"), fixture("eval_gt.json"));
    let r = cli(&["prompts", "--taxonomy", &tax, "--gt", &gt]);
    assert_eq!(r.code, 0);
    let lines = jsonl(&r.stdout);
    assert_eq!(lines[0]["kind"], "header");
    assert_eq!(lines[0]["reconstructed"], true);
    assert_eq!(lines.len() - 1, lines[0]["samples"].as_u64().unwrap() as usize);
    let grounding = lines.iter().find(|l| l["task"] == "grounding").unwrap();
    assert!(grounding["format_prompt"].as_str().unwrap().contains("seconds"));

    let empty = cli(&["prompts", "--taxonomy", &tax, "--gt", &fixture("empty_gt.json")]);
    assert_eq!(jsonl(&empty.stdout).len(), 1);
}

#[test]
fn simulate_edge_cases() {
    let inst = fixture("toy_grounding.json");
    let r = cli(&["simulate", "--instance", &inst, "--steps", "0"]);
    assert_eq!(r.code, 0);
    let lines = jsonl(&r.stdout);
    assert_eq!(lines[0]["kind"], "header");
    assert_eq!(lines[1]["kind"], "summary");
    assert_eq!(lines.len(), 2);

    let r = cli(&["simulate", "--instance", &inst, "--steps", "25", "--group-size", "1"]);
    for l in jsonl(&r.stdout).iter().filter(|l| l["kind"] == "step") {
        assert_eq!(l["advantages"], serde_json::json!([0.0]));
    }
}
