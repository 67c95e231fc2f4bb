//! Problem records and the line-delimited dataset loader.
//!
//! A dataset is a UTF-8 file with one JSON record per line. Required keys
//! are `id`, `statement`, and `ground_truth_answer`; `answer_variants`,
//! `reference_reasoning`, and `original_counterpart` are optional. The
//! loader inserts the ground-truth answer into `answer_variants` when the
//! author did not list it.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// The unmodified source problem's solution, used for conflict prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginalCounterpart {
    pub original_answer: String,
    pub original_reasoning: String,
}

/// One benchmark item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub id: String,
    pub statement: String,
    pub ground_truth_answer: String,
    /// Registered alternate surface forms of the answer; always contains
    /// `ground_truth_answer` after load.
    #[serde(default)]
    pub answer_variants: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_reasoning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_counterpart: Option<OriginalCounterpart>,
}

impl ProblemRecord {
    /// Inserts the ground-truth answer into `answer_variants` if absent.
    pub fn normalize(&mut self) {
        if !self.answer_variants.contains(&self.ground_truth_answer) {
            self.answer_variants
                .insert(0, self.ground_truth_answer.clone());
        }
    }
}

/// Checks a single record against the per-record invariants. Returns one
/// entry per violation, sorted by field name; an empty list means valid.
/// Id uniqueness is a dataset-level concern handled by the loader.
pub fn validate_record(record: &ProblemRecord) -> Vec<String> {
    let mut violations = Vec::new();
    if record.id.trim().is_empty() {
        violations.push("id: empty".to_string());
    }
    if record.statement.trim().is_empty() {
        violations.push("statement: empty".to_string());
    }
    if record.ground_truth_answer.trim().is_empty() {
        violations.push("ground_truth_answer: empty".to_string());
    } else if !record.answer_variants.contains(&record.ground_truth_answer) {
        violations.push("answer_variants: missing ground_truth_answer".to_string());
    }
    if let Some(counterpart) = &record.original_counterpart {
        if counterpart.original_answer.trim().is_empty() {
            violations.push("original_counterpart.original_answer: empty".to_string());
        }
        if counterpart.original_reasoning.trim().is_empty() {
            violations.push("original_counterpart.original_reasoning: empty".to_string());
        }
    }
    violations.sort();
    violations
}

/// A record that failed validation, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordIssue {
    pub line: usize,
    pub id: String,
    pub violations: Vec<String>,
}

impl fmt::Display for RecordIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {} (id {:?}): {}",
            self.line,
            self.id,
            self.violations.join("; ")
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record on line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("duplicate id {id:?} on lines {first_line} and {second_line}")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("{} invalid record(s):\n{}", .issues.len(), format_issues(.issues))]
    Invalid { issues: Vec<RecordIssue> },
}

fn format_issues(issues: &[RecordIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses and validates a dataset, collecting every per-record violation
/// instead of stopping at the first. I/O errors, malformed lines, and
/// duplicate ids still fail fast.
pub fn load_dataset_lenient(
    path: &Path,
) -> Result<(Vec<ProblemRecord>, Vec<RecordIssue>), DatasetError> {
    let raw = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset_str(&raw)
}

/// Parses dataset text (one JSON record per line, blank lines ignored).
pub fn parse_dataset_str(
    raw: &str,
) -> Result<(Vec<ProblemRecord>, Vec<RecordIssue>), DatasetError> {
    let mut records = Vec::new();
    let mut issues = Vec::new();
    let mut seen: std::collections::HashMap<String, usize> = std::collections::HashMap::new();

    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut record: ProblemRecord =
            serde_json::from_str(line).map_err(|e| DatasetError::Malformed {
                line: line_no,
                detail: e.to_string(),
            })?;
        if let Some(first_line) = seen.get(&record.id) {
            return Err(DatasetError::DuplicateId {
                id: record.id.clone(),
                first_line: *first_line,
                second_line: line_no,
            });
        }
        seen.insert(record.id.clone(), line_no);
        record.normalize();
        let violations = validate_record(&record);
        if !violations.is_empty() {
            issues.push(RecordIssue {
                line: line_no,
                id: record.id.clone(),
                violations,
            });
        }
        records.push(record);
    }
    Ok((records, issues))
}

/// Loads a dataset, failing if any record violates an invariant. Records
/// come back in file order.
pub fn load_dataset(path: &Path) -> Result<Vec<ProblemRecord>, DatasetError> {
    let (records, issues) = load_dataset_lenient(path)?;
    if issues.is_empty() {
        Ok(records)
    } else {
        Err(DatasetError::Invalid { issues })
    }
}

/// Serializes records back to line-delimited form.
pub fn to_jsonl(records: &[ProblemRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// SHA-256 hex digest of the dataset file bytes.
pub fn dataset_fingerprint(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
