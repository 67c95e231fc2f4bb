//! Report emission: CSV, Markdown pipe tables, and a machine-readable
//! structured document. Percentages display with exactly two decimals,
//! half-up; the structured form keeps full precision.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::metrics::{round2_half_up, MetricsTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
    Structured,
}

impl ReportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Csv => "report.csv",
            ReportFormat::Markdown => "report.md",
            ReportFormat::Structured => "report.json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "structured" | "json" => Ok(ReportFormat::Structured),
            other => Err(format!(
                "unknown format {other:?}; valid formats: csv, markdown, structured"
            )),
        }
    }
}

/// Warned-AE accuracies for one model, with signed deltas vs AE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarningRow {
    pub model_name: String,
    pub ae: f64,
    pub soft: Option<f64>,
    pub hard: Option<f64>,
    pub soft_delta: Option<f64>,
    pub hard_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarningReport {
    pub rows: Vec<WarningRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitationRow {
    pub model_name: String,
    pub n: usize,
    pub rate: f64,
}

/// Per-model citation rates; the average is the mean of the per-model
/// rates, not a pooled rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitationReport {
    pub rows: Vec<CitationRow>,
    pub avg_rate: f64,
}

/// Everything a finished run reports, keyed back to its manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_manifest_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub main: Option<MetricsTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conflicts: Option<MetricsTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warnings: Option<WarningReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub citations: Option<CitationReport>,
}

fn fmt_pct(fraction: f64) -> String {
    format!("{:.2}%", round2_half_up(fraction * 100.0))
}

fn fmt_pct_bare(fraction: f64) -> String {
    format!("{:.2}", round2_half_up(fraction * 100.0))
}

/// Signed percent-point change for a a decrease-vs-AE column entry.
fn fmt_decrease(decrease: f64) -> String {
    let change_pp = -decrease * 100.0;
    if change_pp.abs() < 5e-13 {
        "0.00%".to_string()
    } else {
        format!("{change_pp:+.2}%")
    }
}

fn csv_escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn markdown_table(table: &MetricsTable, with_decrease: bool) -> String {
    let mut out = String::new();
    write!(out, "| Model |").unwrap();
    for c in &table.conditions {
        write!(out, " {c} |").unwrap();
    }
    out.push('\n');
    write!(out, "|---|").unwrap();
    for _ in &table.conditions {
        write!(out, "---|").unwrap();
    }
    out.push('\n');
    for row in &table.rows {
        write!(out, "| {} |", row.model_name.replace('|', "\\|")).unwrap();
        for cell in &row.cells {
            match cell {
                Some(c) => write!(out, " {} |", fmt_pct(c.accuracy)).unwrap(),
                None => write!(out, " -- |").unwrap(),
            }
        }
        out.push('\n');
    }
    write!(out, "| Avg. Performance |").unwrap();
    for col in &table.columns {
        match (col.avg, col.std) {
            (Some(avg), Some(std)) => {
                write!(out, " {} (±{}) |", fmt_pct(avg), fmt_pct(std)).unwrap()
            }
            (Some(avg), None) => write!(out, " {} |", fmt_pct(avg)).unwrap(),
            (None, _) => write!(out, " -- |").unwrap(),
        }
    }
    out.push('\n');
    if with_decrease {
        write!(out, "| Avg. Decrease |").unwrap();
        for col in &table.columns {
            match col.decrease {
                Some(d) => write!(out, " {} |", fmt_decrease(d)).unwrap(),
                None if col.avg.is_some() => write!(out, " N/A |").unwrap(),
                None => write!(out, " -- |").unwrap(),
            }
        }
        out.push('\n');
    }
    out
}

fn csv_table(table: &MetricsTable, with_decrease: bool) -> String {
    let mut out = String::new();
    write!(out, "model").unwrap();
    for c in &table.conditions {
        write!(out, ",{c}").unwrap();
    }
    out.push('\n');
    for row in &table.rows {
        write!(out, "{}", csv_escape(&row.model_name)).unwrap();
        for cell in &row.cells {
            match cell {
                Some(c) => write!(out, ",{}", fmt_pct_bare(c.accuracy)).unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    write!(out, "avg_performance").unwrap();
    for col in &table.columns {
        match col.avg {
            Some(avg) => write!(out, ",{}", fmt_pct_bare(avg)).unwrap(),
            None => out.push(','),
        }
    }
    out.push('\n');
    write!(out, "sample_std").unwrap();
    for col in &table.columns {
        match col.std {
            Some(std) => write!(out, ",{}", fmt_pct_bare(std)).unwrap(),
            None => out.push(','),
        }
    }
    out.push('\n');
    if with_decrease {
        write!(out, "avg_decrease").unwrap();
        for col in &table.columns {
            match col.decrease {
                Some(d) => {
                    let rendered = fmt_decrease(d);
                    write!(out, ",{}", rendered.trim_end_matches('%')).unwrap();
                }
                None if col.avg.is_some() => write!(out, ",N/A").unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Renders the five-condition accuracy grid in one format.
pub fn emit_report(table: &MetricsTable, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => markdown_table(table, true),
        ReportFormat::Csv => csv_table(table, true),
        ReportFormat::Structured => {
            serde_json::to_string_pretty(table).expect("table serializes")
        }
    }
}

fn warning_markdown(report: &WarningReport) -> String {
    let mut out = String::new();
    out.push_str("| Model | AE | AE+SOFT | Δ soft | AE+HARD | Δ hard |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for row in &report.rows {
        let cell = |v: Option<f64>| v.map_or("--".to_string(), fmt_pct);
        let delta = |v: Option<f64>| {
            v.map_or("--".to_string(), |d| {
                if d.abs() < 5e-13 {
                    "0.00%".to_string()
                } else {
                    format!("{:+.2}%", round2_half_up(d * 100.0))
                }
            })
        };
        writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            row.model_name.replace('|', "\\|"),
            fmt_pct(row.ae),
            cell(row.soft),
            delta(row.soft_delta),
            cell(row.hard),
            delta(row.hard_delta),
        )
        .unwrap();
    }
    out
}

fn citation_markdown(report: &CitationReport) -> String {
    let mut out = String::new();
    out.push_str("| Model | Citation Rate |\n|---|---|\n");
    for row in &report.rows {
        writeln!(
            out,
            "| {} | {} |",
            row.model_name.replace('|', "\\|"),
            fmt_pct(row.rate)
        )
        .unwrap();
    }
    writeln!(out, "| Avg. Rate | {} |", fmt_pct(report.avg_rate)).unwrap();
    out
}

/// Renders the full run report. Markdown and CSV contain one section per
/// populated part; the structured form is the whole document as JSON.
pub fn emit_run_report(report: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Structured => {
            serde_json::to_string_pretty(report).expect("report serializes")
        }
        ReportFormat::Markdown => {
            let mut out = String::new();
            writeln!(out, "# Run report\n").unwrap();
            writeln!(out, "Manifest: `{}`\n", report.run_manifest_fingerprint).unwrap();
            if let Some(main) = &report.main {
                writeln!(out, "## Accuracy by condition\n").unwrap();
                out.push_str(&markdown_table(main, true));
                out.push('\n');
            }
            if let Some(conflicts) = &report.conflicts {
                writeln!(out, "## Conflicting cues\n").unwrap();
                out.push_str(&markdown_table(conflicts, false));
                out.push('\n');
            }
            if let Some(warnings) = &report.warnings {
                writeln!(out, "## Warning impact (AE baseline)\n").unwrap();
                out.push_str(&warning_markdown(warnings));
                out.push('\n');
            }
            if let Some(citations) = &report.citations {
                writeln!(out, "## Explicit citation of the provided answer (AE)\n").unwrap();
                out.push_str(&citation_markdown(citations));
                out.push('\n');
            }
            out
        }
        ReportFormat::Csv => {
            let mut out = String::new();
            writeln!(out, "# manifest,{}", report.run_manifest_fingerprint).unwrap();
            if let Some(main) = &report.main {
                writeln!(out, "# accuracy_by_condition").unwrap();
                out.push_str(&csv_table(main, true));
            }
            if let Some(conflicts) = &report.conflicts {
                writeln!(out, "# conflicting_cues").unwrap();
                out.push_str(&csv_table(conflicts, false));
            }
            if let Some(warnings) = &report.warnings {
                writeln!(out, "# warning_impact").unwrap();
                writeln!(out, "model,ae,soft,soft_delta,hard,hard_delta").unwrap();
                for row in &warnings.rows {
                    let opt = |v: Option<f64>| v.map_or(String::new(), fmt_pct_bare);
                    writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        csv_escape(&row.model_name),
                        fmt_pct_bare(row.ae),
                        opt(row.soft),
                        opt(row.soft_delta),
                        opt(row.hard),
                        opt(row.hard_delta),
                    )
                    .unwrap();
                }
            }
            if let Some(citations) = &report.citations {
                writeln!(out, "# citation_rates").unwrap();
                writeln!(out, "model,n,rate").unwrap();
                for row in &citations.rows {
                    writeln!(
                        out,
                        "{},{},{}",
                        csv_escape(&row.model_name),
                        row.n,
                        fmt_pct_bare(row.rate)
                    )
                    .unwrap();
                }
                writeln!(out, "avg_rate,,{}", fmt_pct_bare(citations.avg_rate)).unwrap();
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditions::PromptCondition;
    use crate::metrics::{aggregate, AccuracyCell};

    fn small_table() -> MetricsTable {
        let cells = vec![
            AccuracyCell::available("m1", PromptCondition::Ae, 10, 0.9),
            AccuracyCell::available("m1", PromptCondition::Af, 10, 0.3),
            AccuracyCell::available("m2", PromptCondition::Ae, 10, 0.7),
            AccuracyCell::available("m2", PromptCondition::Af, 10, 0.5),
        ];
        aggregate(&cells).unwrap()
    }

    #[test]
    fn markdown_has_header_rows_and_bottom_rows() {
        let md = emit_report(&small_table(), ReportFormat::Markdown);
        assert!(md.starts_with("| Model | AE | AER | AMR | ARR | AF |"));
        assert!(md.contains("| m1 | 90.00% | -- | -- | -- | 30.00% |"));
        assert!(md.contains("| Avg. Performance | 80.00% (±14.14%)"));
        assert!(md.contains("| Avg. Decrease | N/A | -- | -- | -- | -40.00% |"));
    }

    #[test]
    fn csv_layout_mirrors_the_grid() {
        let csv = emit_report(&small_table(), ReportFormat::Csv);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "model,AE,AER,AMR,ARR,AF");
        assert_eq!(lines[1], "m1,90.00,,,,30.00");
        assert_eq!(lines[3], "avg_performance,80.00,,,,40.00");
        assert_eq!(lines[5], "avg_decrease,N/A,,,,-40.00");
    }

    #[test]
    fn structured_round_trips() {
        let table = small_table();
        let json = emit_report(&table, ReportFormat::Structured);
        let back: MetricsTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn single_cell_grid_renders_one_row() {
        let cells = vec![AccuracyCell::available("only", PromptCondition::Ae, 4, 1.0)];
        let table = aggregate(&cells).unwrap();
        let md = emit_report(&table, ReportFormat::Markdown);
        let data_rows: Vec<&str> = md.lines().filter(|l| l.starts_with("| only")).collect();
        assert_eq!(data_rows.len(), 1);
        assert!(data_rows[0].contains("100.00%"));
    }

    #[test]
    fn format_parses_from_strings() {
        assert_eq!("csv".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert_eq!("MD".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
        assert_eq!("json".parse::<ReportFormat>().unwrap(), ReportFormat::Structured);
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
