//! Plain-text tables for API payloads.

use std::fmt::Write;

use rboard_core::MetricResult;
use serde_json::Value;

const TERMINAL: [&str; 4] = ["succeeded", "failed", "timeout", "output_invalid"];

pub fn all_terminal(view: &Value) -> bool {
    view["runs"]
        .as_array()
        .is_some_and(|runs| runs.iter().all(|r| r["status"].as_str().is_some_and(|s| TERMINAL.contains(&s))))
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        out.push_str(padded.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec());
    for row in rows {
        line(row.iter().map(String::as_str).collect());
    }
    out
}

fn number(v: &Value, decimals: usize) -> String {
    v.as_f64().map_or_else(|| "-".to_string(), |x| format!("{x:.decimals$}"))
}

fn text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "-".to_string(),
        other => other.to_string(),
    }
}

/// Submission summary followed by one row per run.
pub fn status_table(view: &Value) -> String {
    let mut out = format!(
        "submission {}  task {}  status {}  eligible {}\n",
        text(&view["submission_id"]),
        text(&view["task"]),
        text(&view["status"]),
        text(&view["eligible"]),
    );
    let runs = view["runs"].as_array().cloned().unwrap_or_default();
    let rows: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            let primary = r["result"]["primary_metric"].as_str().unwrap_or_default();
            let score = if primary.is_empty() {
                "-".to_string()
            } else {
                format!("{primary}={}", number(&r["result"]["metrics"][primary], 6))
            };
            vec![
                text(&r["dataset_id"]),
                text(&r["status"]),
                number(&r["wall_clock_seconds"], 2),
                text(&r["exit_code"]),
                score,
            ]
        })
        .collect();
    out.push_str(&table(&["DATASET", "STATUS", "WALL_S", "EXIT", "PRIMARY"], &rows));
    out
}

/// Standings in API order with per-dataset primary metric and rank.
pub fn leaderboard_table(entries: &Value) -> String {
    let entries = entries.as_array().cloned().unwrap_or_default();
    if entries.is_empty() {
        return "no entries\n".to_string();
    }
    let mut datasets: Vec<String> = entries
        .iter()
        .filter_map(|e| e["per_dataset"].as_object())
        .flat_map(|m| m.keys().cloned())
        .collect();
    datasets.sort();
    datasets.dedup();
    let mut header: Vec<&str> = vec!["#", "SUBMISSION", "AUTHOR", "MEAN_RANK", "RUNTIME_S"];
    header.extend(datasets.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let position = if e["eligible"].as_bool() == Some(true) {
                (i + 1).to_string()
            } else {
                "-".to_string()
            };
            let mut row = vec![
                position,
                text(&e["submission_id"]),
                text(&e["author"]),
                number(&e["mean_rank"], 3),
                number(&e["total_runtime_seconds"], 2),
            ];
            for d in &datasets {
                let s = &e["per_dataset"][d];
                let primary = s["primary_metric"].as_str().unwrap_or_default();
                row.push(if primary.is_empty() {
                    "-".to_string()
                } else {
                    format!("{} (#{})", number(&s["metrics"][primary], 4), text(&s["rank"]))
                });
            }
            row
        })
        .collect();
    table(&header, &rows)
}

/// `name=value` lines, primary metric first.
pub fn metrics(result: &MetricResult) -> String {
    let mut out = String::new();
    let primary = &result.primary_metric;
    if let Some(v) = result.metrics.get(primary) {
        writeln!(out, "{primary}={v}").expect("write to string");
    }
    for (name, v) in result.metrics.iter().filter(|(n, _)| *n != primary) {
        writeln!(out, "{name}={v}").expect("write to string");
    }
    out
}
