#![allow(dead_code)]

use std::path::PathBuf;

use clap::Parser;
use vau_eval::{run, Cli};

pub fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

/// Compares against a checked-in golden file; `VAU_BLESS=1` rewrites it instead.
pub fn check_golden(name: &str, actual: &str) -> bool {
    let path = golden_path(name);
    if std::env::var("VAU_BLESS").as_deref() == Ok("1") {
        std::fs::write(&path, actual).unwrap();
        return true;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    expected == actual
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn cli(args: &[&str]) -> Run {
    let mut argv = vec!["vau-eval"];
    argv.extend_from_slice(args);
    let parsed = Cli::try_parse_from(argv).expect("arguments parse");
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(&parsed, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

pub const EVAL_TASKS: &str = "event-rec,anomaly-bu,grounding,detection,anticipation";

pub fn eval_args<'a>(tax: &'a str, gt: &'a str, pred: &'a str, workers: &'a str, format: &'a str) -> Vec<&'a str> {
    vec![
        "eval",
        "--taxonomy",
        tax,
        "--gt",
        gt,
        "--pred",
        pred,
        "--tasks",
        EVAL_TASKS,
        "--provider",
        "hash",
        "--workers",
        workers,
        "--format",
        format,
    ]
}
