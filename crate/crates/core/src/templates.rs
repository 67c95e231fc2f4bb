//! Prompt template assets.
//!
//! Templates are plain-text files with the named placeholders
//! `{statement}`, `{answer}`, `{reasoning}`, and optionally `{warning}`.
//! The builtin English and Chinese sets are embedded; a custom set can be
//! loaded from a directory carrying the same file names (`ae.txt`,
//! `aer.txt`, `amr.txt`, `arr.txt`, `af.txt`, `conflict.txt`,
//! `warning_soft.txt`, `warning_hard.txt`, `judge.txt`, `citation.txt`,
//! `mask.txt`, `VERSION`).

use std::path::Path;

use crate::conditions::PromptCondition;

/// A full set of prompt, warning, and judge templates plus the verdict
/// tokens the judge assets demand.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub version: String,
    ae: String,
    aer: String,
    amr: String,
    arr: String,
    af: String,
    conflict: String,
    pub soft_warning: String,
    pub hard_warning: String,
    pub judge: String,
    pub citation: String,
    pub mask: String,
    pub correct_tokens: Vec<String>,
    pub incorrect_tokens: Vec<String>,
    pub cited_tokens: Vec<String>,
    pub not_cited_tokens: Vec<String>,
    /// Appended when the judge output carried no verdict token and the
    /// request is retried once.
    pub reprompt_suffix: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown template language {0:?}; expected \"en\" or \"zh\"")]
    UnknownLanguage(String),
}

macro_rules! builtin {
    ($lang:literal, $file:literal) => {
        include_str!(concat!("../assets/templates/", $lang, "/", $file))
    };
}

impl TemplateSet {
    pub fn builtin_en() -> Self {
        TemplateSet {
            version: builtin!("en", "VERSION").trim().to_string(),
            ae: builtin!("en", "ae.txt").to_string(),
            aer: builtin!("en", "aer.txt").to_string(),
            amr: builtin!("en", "amr.txt").to_string(),
            arr: builtin!("en", "arr.txt").to_string(),
            af: builtin!("en", "af.txt").to_string(),
            conflict: builtin!("en", "conflict.txt").to_string(),
            soft_warning: builtin!("en", "warning_soft.txt").trim_end().to_string(),
            hard_warning: builtin!("en", "warning_hard.txt").trim_end().to_string(),
            judge: builtin!("en", "judge.txt").to_string(),
            citation: builtin!("en", "citation.txt").to_string(),
            mask: builtin!("en", "mask.txt").to_string(),
            correct_tokens: vec!["CORRECT".to_string()],
            incorrect_tokens: vec!["INCORRECT".to_string()],
            cited_tokens: vec!["CITED".to_string()],
            not_cited_tokens: vec!["NOT_CITED".to_string()],
            reprompt_suffix: "Reply with only the verdict token and nothing else.".to_string(),
        }
    }

    pub fn builtin_zh() -> Self {
        TemplateSet {
            version: builtin!("zh", "VERSION").trim().to_string(),
            ae: builtin!("zh", "ae.txt").to_string(),
            aer: builtin!("zh", "aer.txt").to_string(),
            amr: builtin!("zh", "amr.txt").to_string(),
            arr: builtin!("zh", "arr.txt").to_string(),
            af: builtin!("zh", "af.txt").to_string(),
            conflict: builtin!("zh", "conflict.txt").to_string(),
            soft_warning: builtin!("zh", "warning_soft.txt").trim_end().to_string(),
            hard_warning: builtin!("zh", "warning_hard.txt").trim_end().to_string(),
            judge: builtin!("zh", "judge.txt").to_string(),
            citation: builtin!("zh", "citation.txt").to_string(),
            mask: builtin!("zh", "mask.txt").to_string(),
            correct_tokens: vec!["正确".to_string()],
            incorrect_tokens: vec!["错误".to_string()],
            cited_tokens: vec!["已引用".to_string()],
            not_cited_tokens: vec!["未引用".to_string()],
            reprompt_suffix: "只回复判定词，不要输出其他内容。".to_string(),
        }
    }

    /// Looks up a builtin set by language code.
    pub fn builtin(language: &str) -> Result<Self, TemplateError> {
        match language {
            "en" => Ok(Self::builtin_en()),
            "zh" => Ok(Self::builtin_zh()),
            other => Err(TemplateError::UnknownLanguage(other.to_string())),
        }
    }

    /// Loads a template set from a directory. Verdict tokens stay at the
    /// bilingual defaults; the parser accepts either language regardless.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let read = |file: &str| -> Result<String, TemplateError> {
            let path = dir.join(file);
            std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        Ok(TemplateSet {
            version: read("VERSION")?.trim().to_string(),
            ae: read("ae.txt")?,
            aer: read("aer.txt")?,
            amr: read("amr.txt")?,
            arr: read("arr.txt")?,
            af: read("af.txt")?,
            conflict: read("conflict.txt")?,
            soft_warning: read("warning_soft.txt")?.trim_end().to_string(),
            hard_warning: read("warning_hard.txt")?.trim_end().to_string(),
            judge: read("judge.txt")?,
            citation: read("citation.txt")?,
            mask: read("mask.txt")?,
            correct_tokens: vec!["CORRECT".to_string(), "正确".to_string()],
            incorrect_tokens: vec!["INCORRECT".to_string(), "错误".to_string()],
            cited_tokens: vec!["CITED".to_string(), "已引用".to_string()],
            not_cited_tokens: vec!["NOT_CITED".to_string(), "未引用".to_string()],
            reprompt_suffix: "Reply with only the verdict token and nothing else.".to_string(),
        })
    }

    pub fn condition_template(&self, condition: PromptCondition) -> &str {
        match condition {
            PromptCondition::Ae => &self.ae,
            PromptCondition::Aer => &self.aer,
            PromptCondition::Amr => &self.amr,
            PromptCondition::Arr => &self.arr,
            PromptCondition::Af => &self.af,
        }
    }

    pub fn conflict_template(&self) -> &str {
        &self.conflict
    }
}

/// Substitutes `{name}` placeholders. Unlisted placeholders are left
/// verbatim so callers can fill in stages.
pub fn fill(template: &str, pairs: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in pairs {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}
