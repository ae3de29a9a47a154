//! Rendering of evaluation reports and taxonomy statistics.

use std::fmt::Write as _;

use serde::Serialize;
use vau_core::datamodel::{MetricName, ReportTable};
use vau_core::taxonomy::TaxonomyStats;

use crate::config::ConfigHeader;
use crate::OutputFormat;

#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub samples: usize,
    pub predictions: usize,
    pub missing_predictions: usize,
    pub orphan_predictions: usize,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    config: &'a ConfigHeader,
    run: &'a RunInfo,
    table: &'a ReportTable,
}

fn header_lines(cfg: &ConfigHeader, run: &RunInfo) -> Vec<(&'static str, String)> {
    vec![
        ("tool", format!("{} {}", cfg.tool, cfg.version)),
        ("provider", cfg.provider.to_string()),
        ("dims", cfg.dims.to_string()),
        ("tau", cfg.tau.to_string()),
        ("lambda", cfg.lambda.to_string()),
        ("semantic_normalization", cfg.semantic_normalization.to_string()),
        ("temporal", cfg.temporal.to_string()),
        ("rendering", cfg.rendering.to_string()),
        ("samples", run.samples.to_string()),
        ("predictions", run.predictions.to_string()),
        ("missing_predictions", run.missing_predictions.to_string()),
        ("orphan_predictions", run.orphan_predictions.to_string()),
    ]
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

pub fn render_eval(fmt: OutputFormat, cfg: &ConfigHeader, run: &RunInfo, table: &ReportTable) -> String {
    match fmt {
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(&JsonReport {
                config: cfg,
                run,
                table,
            })
            .expect("report serializes");
            s.push('\n');
            s
        }
        OutputFormat::Csv => {
            let mut s = String::new();
            for (k, v) in header_lines(cfg, run) {
                let _ = writeln!(s, "# {k}={v}");
            }
            s.push_str("task,metric,mean,count\n");
            for row in &table.rows {
                for (metric, c) in &row.metrics {
                    let mean = c.mean.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"));
                    let _ = writeln!(s, "{},{},{},{}", row.task, metric.as_str(), mean, c.count);
                }
            }
            s
        }
        OutputFormat::Markdown => {
            let mut s = String::from("## Evaluation report\n\n");
            for (k, v) in header_lines(cfg, run) {
                let _ = writeln!(s, "- {k}: {v}");
            }
            s.push_str("\n| Task | Samples | Struct | Sem. | Hier. | TIoU |\n");
            s.push_str("|---|---:|---:|---:|---:|---:|\n");
            for row in &table.rows {
                let m = |name| row.metrics.get(&name).and_then(|c| c.mean);
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} | {} |",
                    row.task,
                    row.samples,
                    cell(m(MetricName::Struct)),
                    cell(m(MetricName::Semantic)),
                    cell(m(MetricName::Hierarchy)),
                    cell(m(MetricName::Tiou)),
                );
            }
            s
        }
    }
}

#[derive(Serialize)]
struct JsonStats<'a> {
    nodes: usize,
    level_counts: &'a [usize],
    anomaly_leaves: usize,
    normality_leaves: usize,
}

/// Level counts exclude the root: entry `i` counts nodes at level `i + 1`.
pub fn render_stats(fmt: OutputFormat, stats: &TaxonomyStats, nodes: usize) -> String {
    let levels = stats.level_counts.get(1..).unwrap_or(&[]);
    match fmt {
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(&JsonStats {
                nodes,
                level_counts: levels,
                anomaly_leaves: stats.anomaly_leaves,
                normality_leaves: stats.normality_leaves,
            })
            .expect("stats serialize");
            s.push('\n');
            s
        }
        OutputFormat::Csv => {
            let mut s = String::from("level,count\n");
            for (i, c) in levels.iter().enumerate() {
                let _ = writeln!(s, "{},{c}", i + 1);
            }
            let _ = writeln!(s, "anomaly_leaves,{}", stats.anomaly_leaves);
            let _ = writeln!(s, "normality_leaves,{}", stats.normality_leaves);
            s
        }
        OutputFormat::Markdown => {
            let mut s = String::from("| Level | Nodes |\n|---:|---:|\n");
            for (i, c) in levels.iter().enumerate() {
                let _ = writeln!(s, "| {} | {c} |", i + 1);
            }
            let _ = writeln!(
                s,
                "\nLeaves: {} anomalous, {} normal ({} nodes in total)",
                stats.anomaly_leaves, stats.normality_leaves, nodes
            );
            s
        }
    }
}
