//! Run configuration file (JSON). Unknown keys are rejected by name so
//! typos surface as usage errors instead of silently ignored settings.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::conditions::{PromptCondition, WarningVariant};
use crate::masker::NumeralLexicon;
use crate::report::ReportFormat;
use crate::target::ModelTarget;

/// Where AER/AMR/ARR chains come from: the dataset's canonical
/// `reference_reasoning`, or each target's own cached AE transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainSource {
    #[default]
    Canonical,
    #[serde(rename = "self")]
    SelfTranscript,
}

impl ChainSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ChainSource::Canonical => "canonical",
            ChainSource::SelfTranscript => "self",
        }
    }
}

fn default_conditions() -> Vec<PromptCondition> {
    PromptCondition::ALL.to_vec()
}

fn default_parallelism() -> usize {
    4
}

fn default_rate_limit() -> u32 {
    8
}

fn default_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Markdown, ReportFormat::Structured]
}

fn default_true() -> bool {
    true
}

fn default_language() -> String {
    "en".to_string()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub targets: Vec<ModelTarget>,
    /// The grading/citation judge endpoint.
    pub judge: ModelTarget,
    #[serde(default = "default_conditions")]
    pub conditions: Vec<PromptCondition>,
    /// Warning variants scheduled on top of AE.
    #[serde(default)]
    pub warnings: Vec<WarningVariant>,
    /// Schedule the three conflict conditions for problems that carry an
    /// original counterpart.
    #[serde(default)]
    pub conflicts: bool,
    #[serde(default)]
    pub chain_source: ChainSource,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_rate_limit")]
    pub rate_limit_per_target: u32,
    pub cache_root: PathBuf,
    #[serde(default = "default_formats")]
    pub report_formats: Vec<ReportFormat>,
    pub output_dir: PathBuf,
    /// Judge citation on every AE response (the default) or skip it.
    #[serde(default = "default_true")]
    pub citation_on_ae: bool,
    /// Builtin template language, "en" or "zh".
    #[serde(default = "default_language")]
    pub template_language: String,
    /// Custom template directory; overrides `template_language`.
    #[serde(default)]
    pub template_dir: Option<PathBuf>,
    /// Permit warnings on conditions other than AE.
    #[serde(default)]
    pub allow_warning_anywhere: bool,
    /// Mask AMR chains with the judge model instead of the deterministic
    /// masker; output still has to pass deterministic verification.
    #[serde(default)]
    pub use_llm_masker: bool,
    /// Spelled-out numeral forms added to the variant set.
    #[serde(default)]
    pub numeral_lexicon: Option<NumeralLexicon>,
    /// `None` means the provider default.
    #[serde(default)]
    pub max_output_tokens: Option<u32>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {detail}")]
    Parse { detail: String },
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&raw).map_err(|e| ConfigError::Parse {
        detail: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "dataset": "d.jsonl",
            "targets": [{"name": "m", "endpoint": "http://localhost:1", "model_id": "x"}],
            "judge": {"name": "j", "endpoint": "http://localhost:2", "model_id": "y"},
            "cache_root": "cache",
            "output_dir": "out"
        })
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let config: RunConfig = serde_json::from_value(minimal()).unwrap();
        assert_eq!(config.conditions, PromptCondition::ALL.to_vec());
        assert_eq!(config.parallelism, 4);
        assert_eq!(config.chain_source, ChainSource::Canonical);
        assert!(config.citation_on_ae);
        assert!(!config.conflicts);
        assert_eq!(config.template_language, "en");
    }

    #[test]
    fn unknown_keys_are_named() {
        let mut bad = minimal();
        bad["paralelism"] = serde_json::json!(2);
        let err = serde_json::from_value::<RunConfig>(bad).unwrap_err();
        assert!(err.to_string().contains("paralelism"), "{err}");
    }

    #[test]
    fn chain_source_accepts_self() {
        let mut v = minimal();
        v["chain_source"] = serde_json::json!("self");
        let config: RunConfig = serde_json::from_value(v).unwrap();
        assert_eq!(config.chain_source, ChainSource::SelfTranscript);
    }
}
