//! Side-by-side rendering of measured errors and published references.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::eval::{EvalReport, LosoOutcome, Scope};
use crate::reference::{ReferenceTable, AVG, FARE_NET, L2CS};

pub const CSV_HEADER: &str = "dataset,method,beta,scope,subject,mean_error_deg,source";
const NA: &str = "n/a";
/// Subject label of whole-dataset rows that are not subject averages.
const ALL_SUBJECTS: &str = "all";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::invalid(format!("unknown report format {s:?}"))),
        }
    }
}

/// How the overall number of a measured result was aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregate {
    /// Mean over samples; rendered with subject `all`.
    SampleMean,
    /// Unweighted mean of subject means; rendered with subject `Avg`.
    SubjectMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredResult {
    pub dataset: String,
    pub method: String,
    pub beta: Option<f64>,
    pub scope: Scope,
    pub per_subject: BTreeMap<String, f64>,
    pub overall: f64,
    pub aggregate: Aggregate,
}

impl MeasuredResult {
    pub fn from_eval(dataset: &str, method: &str, beta: Option<f64>, report: &EvalReport) -> Self {
        Self {
            dataset: dataset.to_owned(),
            method: method.to_owned(),
            beta,
            scope: report.scope,
            per_subject: report.per_subject.clone(),
            overall: report.mean_error,
            aggregate: Aggregate::SampleMean,
        }
    }

    pub fn from_loso<T>(dataset: &str, method: &str, beta: Option<f64>, scope: Scope, outcome: &LosoOutcome<T>) -> Self {
        Self {
            dataset: dataset.to_owned(),
            method: method.to_owned(),
            beta,
            scope,
            per_subject: outcome.subject_means(),
            overall: outcome.grand_mean,
            aggregate: Aggregate::SubjectMean,
        }
    }

    fn overall_label(&self) -> &'static str {
        match self.aggregate {
            Aggregate::SampleMean => ALL_SUBJECTS,
            Aggregate::SubjectMean => AVG,
        }
    }

    /// The published L2CS-Net number this result is compared against.
    fn paper_overall(&self, reference: &ReferenceTable) -> Option<f64> {
        reference.l2cs(&self.dataset, self.scope, self.beta?)
    }
}

fn fmt_beta(beta: Option<f64>) -> String {
    beta.map(|b| b.to_string()).unwrap_or_default()
}

fn fmt_value(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| NA.to_owned())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

struct Row {
    dataset: String,
    method: String,
    beta: Option<f64>,
    scope: Scope,
    subject: String,
    value: Option<f64>,
    source: &'static str,
}

fn measured_rows(results: &[MeasuredResult], reference: &ReferenceTable) -> Vec<Row> {
    let mut rows = Vec::new();
    for r in results {
        let row = |subject: &str, value: Option<f64>, source| Row {
            dataset: r.dataset.clone(),
            method: r.method.clone(),
            beta: r.beta,
            scope: r.scope,
            subject: subject.to_owned(),
            value,
            source,
        };
        for (s, v) in &r.per_subject {
            rows.push(row(s, Some(*v), "measured"));
        }
        rows.push(row(r.overall_label(), Some(r.overall), "measured"));
        // Paired reference, so every measured block has a paper line even
        // when no published number exists for its key.
        rows.push(Row {
            method: L2CS.to_owned(),
            ..row(ALL_SUBJECTS, r.paper_overall(reference), "paper")
        });
    }
    rows
}

fn paper_rows(reference: &ReferenceTable) -> Vec<Row> {
    reference
        .records()
        .iter()
        .map(|r| Row {
            dataset: r.dataset.to_owned(),
            method: r.method.to_owned(),
            beta: r.beta,
            scope: r.scope,
            subject: r.subject.unwrap_or(ALL_SUBJECTS).to_owned(),
            value: Some(r.mean_error_deg),
            source: "paper",
        })
        .collect()
}

fn render_csv(rows: &[Row]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            csv_field(&r.dataset),
            csv_field(&r.method),
            fmt_beta(r.beta),
            r.scope,
            csv_field(&r.subject),
            fmt_value(r.value),
            r.source
        );
    }
    out
}

fn render_text(results: &[MeasuredResult], reference: &ReferenceTable) -> String {
    let mut out = String::new();
    if !results.is_empty() {
        out.push_str("Measured vs. published (mean angular error, degrees)\n\n");
        let _ = writeln!(
            out,
            "{:<10} {:<24} {:>5} {:<12} {:<8} {:>10} {:>10}",
            "dataset", "method", "beta", "scope", "subject", "measured", "paper"
        );
        for r in results {
            for (s, v) in &r.per_subject {
                let paper = match r.aggregate {
                    Aggregate::SubjectMean => reference.per_subject(L2CS, s),
                    Aggregate::SampleMean => None,
                };
                let _ = writeln!(
                    out,
                    "{:<10} {:<24} {:>5} {:<12} {:<8} {:>10.3} {:>10}",
                    r.dataset,
                    r.method,
                    fmt_beta(r.beta),
                    r.scope,
                    s,
                    v,
                    fmt_value(paper)
                );
            }
            let _ = writeln!(
                out,
                "{:<10} {:<24} {:>5} {:<12} {:<8} {:>10.3} {:>10}",
                r.dataset,
                r.method,
                fmt_beta(r.beta),
                r.scope,
                r.overall_label(),
                r.overall,
                fmt_value(r.paper_overall(reference))
            );
        }
        out.push('\n');
    }
    out.push_str("Published references\n\n");
    let _ = writeln!(
        out,
        "{:<10} {:<32} {:>5} {:<12} {:<8} {:>8}",
        "dataset", "method", "beta", "scope", "subject", "error"
    );
    for r in reference.records() {
        let _ = writeln!(
            out,
            "{:<10} {:<32} {:>5} {:<12} {:<8} {:>8}",
            r.dataset,
            r.method,
            fmt_beta(r.beta),
            r.scope,
            r.subject.unwrap_or(ALL_SUBJECTS),
            r.mean_error_deg
        );
    }
    out
}

fn render_json(results: &[MeasuredResult], reference: &ReferenceTable) -> String {
    let comparison: Vec<_> = results
        .iter()
        .map(|r| {
            json!({
                "dataset": r.dataset,
                "method": r.method,
                "beta": r.beta,
                "scope": r.scope,
                "measured": r.overall,
                "aggregate": r.aggregate,
                "paper": r.paper_overall(reference).map(serde_json::Value::from).unwrap_or_else(|| NA.into()),
            })
        })
        .collect();
    let doc = json!({
        "measured": results,
        "comparison": comparison,
        "reference": reference.records(),
    });
    serde_json::to_string_pretty(&doc).expect("report values serialize") + "\n"
}

/// Renders measured results next to the matching published numbers, followed
/// by the full reference table. Keys without a published value show `n/a`.
pub fn render_report(results: &[MeasuredResult], reference: &ReferenceTable, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut rows = measured_rows(results, reference);
            rows.extend(paper_rows(reference));
            render_csv(&rows)
        }
        ReportFormat::Text => render_text(results, reference),
        ReportFormat::Json => render_json(results, reference),
    }
}

/// Per-subject bar-chart data: one row per subject `p00`..`p14` plus `Avg`,
/// with the measured value (if any) and both published series.
pub fn render_subject_chart(measured: Option<&MeasuredResult>, reference: &ReferenceTable) -> String {
    let mut out = format!("subject,measured,{L2CS},{FARE_NET}\n");
    for &s in ReferenceTable::chart_subjects() {
        let m = measured.and_then(|r| {
            if s == AVG {
                Some(r.overall)
            } else {
                r.per_subject.get(s).copied()
            }
        });
        let _ = writeln!(
            out,
            "{s},{},{},{}",
            fmt_value(m),
            fmt_value(reference.per_subject(L2CS, s)),
            fmt_value(reference.per_subject(FARE_NET, s))
        );
    }
    out
}
