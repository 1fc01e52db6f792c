use std::cmp::Ordering;

use objhal::io::{read_json, write_atomic};
use objhal::metrics::{EvalMode, EvalSummary, SCHEMA_VERSION};
use objhal::{Error, Result};
use serde_json::json;

use crate::args::{ReportArgs, ReportFormat};
use crate::manifest::Recorder;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub summary: EvalSummary,
}

fn mode_rank(m: EvalMode) -> usize {
    EvalMode::ALL.iter().position(|x| *x == m).unwrap_or(usize::MAX)
}

fn order(a: &ReportRow, b: &ReportRow) -> Ordering {
    let eps = |r: &ReportRow| r.summary.epsilon;
    match (eps(a), eps(b)) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
    .then(mode_rank(a.summary.mode).cmp(&mode_rank(b.summary.mode)))
    .then(a.label.cmp(&b.label))
}

fn cell(v: Option<f64>, md: bool) -> String {
    match v {
        Some(x) => format!("{x:.2}"),
        None if md => "--".to_owned(),
        None => String::new(),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// One row per run, sorted by ε, then mode, then label. ε and mode columns
/// appear only when some row has an ε or the modes differ.
pub fn render_report(mut rows: Vec<ReportRow>, format: ReportFormat) -> String {
    rows.sort_by(order);
    let with_eps = rows.iter().any(|r| r.summary.epsilon.is_some());
    let with_mode = rows.windows(2).any(|w| w[0].summary.mode != w[1].summary.mode);
    let md = format == ReportFormat::Md;
    let mut header = vec!["Run"];
    if with_eps {
        header.push(if md { "ε" } else { "epsilon" });
    }
    if with_mode {
        header.push(if md { "Mode" } else { "mode" });
    }
    if md {
        header.extend(["CHAIR_s↓", "CHAIR_i↓", "Coverage↑", "Avg. Length↑", "Avg. Object↑"]);
    } else {
        header.extend(["chair_s", "chair_i", "coverage", "avg_length", "avg_objects"]);
    }
    let lines = rows.iter().map(|r| {
        let s = &r.summary;
        let mut cols = vec![if md { r.label.clone() } else { csv_field(&r.label) }];
        if with_eps {
            cols.push(s.epsilon.map_or_else(String::new, |e| e.to_string()));
        }
        if with_mode {
            cols.push(s.mode.as_str().to_owned());
        }
        cols.extend([
            cell(Some(s.chair_s), md),
            cell(Some(s.chair_i), md),
            cell(Some(s.coverage), md),
            cell(s.avg_length, md),
            cell(Some(s.avg_objects), md),
        ]);
        cols
    });
    let mut out = String::new();
    if md {
        out.push_str(&format!("| {} |\n", header.join(" | ")));
        let align: Vec<&str> = header.iter().enumerate().map(|(i, _)| if i == 0 { "---" } else { "---:" }).collect();
        out.push_str(&format!("|{}|\n", align.join("|")));
        for cols in lines {
            out.push_str(&format!("| {} |\n", cols.join(" | ")));
        }
    } else {
        out.push_str(&header.join(","));
        out.push('\n');
        for cols in lines {
            out.push_str(&cols.join(","));
            out.push('\n');
        }
    }
    out
}

fn load_summary(path: &std::path::Path) -> Result<EvalSummary> {
    let raw: serde_json::Value = read_json(path)?;
    let version = raw.get("schema_version").and_then(serde_json::Value::as_u64);
    if version != Some(u64::from(SCHEMA_VERSION)) {
        return Err(Error::SchemaMismatch(format!(
            "{} has schema version {}, expected {SCHEMA_VERSION}",
            path.display(),
            version.map_or_else(|| "none".to_owned(), |v| v.to_string())
        )));
    }
    serde_json::from_value(raw).map_err(|e| Error::SchemaMismatch(format!("{}: {e}", path.display())))
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let mut rec = Recorder::start("report", &a.out)?;
    let mut rows = Vec::new();
    for p in &a.summaries {
        rec.input(p)?;
        let summary = load_summary(p)?;
        let label = summary
            .label
            .clone()
            .unwrap_or_else(|| p.file_stem().unwrap_or_default().to_string_lossy().into_owned());
        rows.push(ReportRow { label, summary });
    }
    let text = render_report(rows, a.format);
    let name = match a.format {
        ReportFormat::Md => "report.md",
        ReportFormat::Csv => "report.csv",
    };
    write_atomic(&rec.out(name), text.as_bytes())?;
    print!("{text}");
    rec.config(json!({ "format": name }));
    rec.finish()?;
    Ok(())
}
