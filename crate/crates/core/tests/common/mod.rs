#![allow(dead_code)]

//! Shared fixtures for the integration suites.

use std::path::{Path, PathBuf};

use anchor_probe::config::RunConfig;
use anchor_probe::dataset::{to_jsonl, OriginalCounterpart, ProblemRecord};
use anchor_probe::mock::MockProfile;
use anchor_probe::target::ModelTarget;

/// Synthetic problems with answers that cannot collide with the mock's
/// decoy or sentence frames.
pub fn synthetic_records(n: usize, with_counterparts: bool) -> Vec<ProblemRecord> {
    (0..n)
        .map(|i| {
            let id = format!("p{i:03}");
            let answer = format!("vtoken{i:03}");
            ProblemRecord {
                id: id.clone(),
                statement: format!(
                    "Gadget {i} drops one module. How many calibration marks remain?"
                ),
                ground_truth_answer: answer.clone(),
                answer_variants: vec![answer.clone()],
                reference_reasoning: Some(format!(
                    "Dropping a module changes nothing structural. \
                     The count settles at {answer}. Every cross-check agrees."
                )),
                original_counterpart: with_counterparts.then(|| OriginalCounterpart {
                    original_answer: format!("wtoken{i:03}"),
                    original_reasoning: format!(
                        "The unmodified gadget keeps wtoken{i:03} marks. No module is dropped."
                    ),
                }),
            }
        })
        .collect()
}

pub fn write_dataset(dir: &Path, records: &[ProblemRecord]) -> PathBuf {
    let path = dir.join("dataset.jsonl");
    std::fs::write(&path, to_jsonl(records)).expect("dataset writes");
    path
}

pub fn mock_target(name: &str, endpoint: &str, model_id: &str, trace_visible: bool) -> ModelTarget {
    let mut target = ModelTarget::new(name, endpoint, model_id).with_trace_visible(trace_visible);
    target.mock = true;
    target
}

/// A run configuration wired to a mock endpoint, all five conditions.
pub fn mock_run_config(
    dataset: PathBuf,
    endpoint: &str,
    work_dir: &Path,
) -> RunConfig {
    let config = serde_json::json!({
        "dataset": dataset,
        "targets": [{
            "name": "mock-model",
            "endpoint": endpoint,
            "model_id": "mock-model",
            "trace_visible": true,
            "mock": true
        }],
        "judge": {
            "name": "mock-judge",
            "endpoint": endpoint,
            "model_id": "mock-judge",
            "mock": true
        },
        "cache_root": work_dir.join("cache"),
        "output_dir": work_dir.join("out"),
        "parallelism": 8,
        "rate_limit_per_target": 10000,
        "report_formats": ["markdown", "csv", "structured"]
    });
    serde_json::from_value(config).expect("config parses")
}

/// The headline per-condition rates used by the end-to-end gate.
pub fn deepseek_profile(seed: u64) -> MockProfile {
    let rates = [
        ("AE", 0.9304),
        ("AER", 0.8418),
        ("AMR", 0.5506),
        ("ARR", 0.4684),
        ("AF", 0.2342),
    ];
    MockProfile {
        rates: rates
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
        seed,
        citation_rate: 0.1203,
    }
}

pub fn problems_for_mock(records: &[ProblemRecord]) -> Vec<(String, String)> {
    records
        .iter()
        .map(|r| (r.id.clone(), r.ground_truth_answer.clone()))
        .collect()
}
