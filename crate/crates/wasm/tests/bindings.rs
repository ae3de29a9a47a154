use serde_json::Value;
use vau_wasm::{grpo_curve_json, leaves_json, score_json, tiou_json};

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn tiou_merges_before_scoring() {
    let v = parse(&tiou_json("[[2,4],[3,6]]", "[[4,8]]").unwrap());
    assert!((v["tiou"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(v["pred_merged"], serde_json::json!([[2.0, 6.0]]));
}

#[test]
fn tiou_rejects_reversed_interval() {
    assert!(tiou_json("[[5,1]]", "[]").is_err());
    assert!(tiou_json("nope", "[]").is_err());
}

#[test]
fn leaves_cover_both_states() {
    let v = parse(&leaves_json());
    let leaves = v.as_array().unwrap();
    assert_eq!(leaves.len(), 12);
    assert_eq!(leaves.iter().filter(|l| l["anomaly"] == true).count(), 8);
}

#[test]
fn perfect_tagged_answer_earns_full_reward() {
    let gt = r#"[{"event":"theft","scene":"shop","attribute":"masked man","anomaly":1}]"#;
    let resp = format!("<think>looks like theft</think><answer>{gt}</answer>");
    let v = parse(&score_json("anomaly-bu", &resp, gt).unwrap());
    assert_eq!(v["reward"]["format"], 1);
    assert!((v["reward"]["total"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    assert_eq!(v["scores"]["hierarchy_score"], 1.0);
}

#[test]
fn unknown_task_is_an_error() {
    assert!(score_json("captioning", "", "[]").is_err());
}

#[test]
fn curve_moves_toward_best_candidate() {
    let v = parse(&grpo_curve_json(r#"{"rewards":[0,1,0],"steps":150}"#).unwrap());
    assert_eq!(v["probs"].as_array().unwrap().len(), 151);
    let fin: Vec<f64> = serde_json::from_value(v["final_probs"].clone()).unwrap();
    assert!(fin[1] > 0.9, "{fin:?}");
    assert!(grpo_curve_json(r#"{"rewards":[1]}"#).is_err());
    assert!(grpo_curve_json(r#"{"rewards":[0,1],"temperature":2}"#).is_err());
}
