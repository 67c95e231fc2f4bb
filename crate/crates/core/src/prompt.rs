//! Renders the prompt text for every (problem, condition, warning) and
//! conflict combination.
//!
//! Everything except the answer-cue block is held fixed: for a given
//! problem and template version the statement portion is byte-identical
//! across all five conditions, so accuracy differences are attributable
//! to how answer information is presented.

use crate::conditions::{ConditionTag, ConflictCondition, PromptCondition, WarningVariant};
use crate::dataset::ProblemRecord;
use crate::masker::MASK_TOKEN;
use crate::templates::{fill, TemplateSet};

/// A fully materialized prompt with provenance.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct RenderedPrompt {
    pub problem_id: String,
    pub condition_tag: ConditionTag,
    pub warning: WarningVariant,
    pub text: String,
    /// Literal count of the `[MASK]` placeholder in `text`.
    pub mask_count: usize,
    pub template_version: String,
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("{condition} requires {what} for problem {problem_id:?}")]
    MissingChain {
        condition: ConditionTag,
        what: &'static str,
        problem_id: String,
    },
    #[error("conflict requires original_counterpart (problem {0:?})")]
    MissingCounterpart(String),
    #[error(
        "warning {warning} is only paired with AE (got {condition}); \
         set allow_warning_anywhere to override"
    )]
    WarningOutsideAe {
        warning: WarningVariant,
        condition: ConditionTag,
    },
}

/// Renders prompts from a template set. Pure: identical inputs yield
/// byte-identical output.
#[derive(Debug, Clone)]
pub struct PromptFactory {
    templates: TemplateSet,
    allow_warning_anywhere: bool,
}

impl PromptFactory {
    pub fn new(templates: TemplateSet) -> Self {
        PromptFactory {
            templates,
            allow_warning_anywhere: false,
        }
    }

    /// Permits warning prefixes on conditions other than AE, for
    /// exploratory runs.
    pub fn with_warning_override(mut self, allow: bool) -> Self {
        self.allow_warning_anywhere = allow;
        self
    }

    pub fn template_version(&self) -> &str {
        &self.templates.version
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    /// Renders one of the five visibility conditions. AER takes its chain
    /// from the record; AMR and ARR take the pre-masked / pre-pruned
    /// chain from the caller.
    pub fn render(
        &self,
        problem: &ProblemRecord,
        condition: PromptCondition,
        warning: WarningVariant,
        masked_chain: Option<&str>,
        pruned_chain: Option<&str>,
    ) -> Result<RenderedPrompt, PromptError> {
        let tag = ConditionTag::Prompt(condition);
        if warning != WarningVariant::None
            && condition != PromptCondition::Ae
            && !self.allow_warning_anywhere
        {
            return Err(PromptError::WarningOutsideAe {
                warning,
                condition: tag,
            });
        }

        let chain: Option<&str> = match condition {
            PromptCondition::Ae | PromptCondition::Af => None,
            PromptCondition::Aer => Some(problem.reference_reasoning.as_deref().ok_or(
                PromptError::MissingChain {
                    condition: tag,
                    what: "reference_reasoning",
                    problem_id: problem.id.clone(),
                },
            )?),
            PromptCondition::Amr => Some(masked_chain.ok_or(PromptError::MissingChain {
                condition: tag,
                what: "a masked chain",
                problem_id: problem.id.clone(),
            })?),
            PromptCondition::Arr => Some(pruned_chain.ok_or(PromptError::MissingChain {
                condition: tag,
                what: "a pruned chain",
                problem_id: problem.id.clone(),
            })?),
        };

        let template = self.templates.condition_template(condition);
        let body = fill(
            template,
            &[
                ("statement", problem.statement.as_str()),
                ("answer", problem.ground_truth_answer.as_str()),
                ("reasoning", chain.unwrap_or("")),
            ],
        );
        let text = self.compose(template, body, warning);
        Ok(self.finish(problem, tag, warning, text))
    }

    /// Renders a conflict prompt: an answer block and a reasoning block
    /// whose correctness is mismatched per the condition.
    pub fn render_conflict(
        &self,
        problem: &ProblemRecord,
        condition: ConflictCondition,
    ) -> Result<RenderedPrompt, PromptError> {
        let tag = ConditionTag::Conflict(condition);
        let counterpart = problem
            .original_counterpart
            .as_ref()
            .ok_or_else(|| PromptError::MissingCounterpart(problem.id.clone()))?;

        let (answer, reasoning): (&str, &str) = match condition {
            ConflictCondition::RaWr => (
                &problem.ground_truth_answer,
                &counterpart.original_reasoning,
            ),
            ConflictCondition::WaRr => (
                &counterpart.original_answer,
                problem.reference_reasoning.as_deref().ok_or(
                    PromptError::MissingChain {
                        condition: tag,
                        what: "reference_reasoning",
                        problem_id: problem.id.clone(),
                    },
                )?,
            ),
            ConflictCondition::WaWr => (
                &counterpart.original_answer,
                &counterpart.original_reasoning,
            ),
        };

        let template = self.templates.conflict_template();
        let body = fill(
            template,
            &[
                ("statement", problem.statement.as_str()),
                ("answer", answer),
                ("reasoning", reasoning),
            ],
        );
        let text = self.compose(template, body, WarningVariant::None);
        Ok(self.finish(problem, tag, WarningVariant::None, text))
    }

    /// Prepends the warning text and a blank line; NONE is the identity.
    pub fn apply_warning(&self, base_text: &str, variant: WarningVariant) -> String {
        match variant {
            WarningVariant::None => base_text.to_string(),
            WarningVariant::Soft => format!("{}\n\n{}", self.templates.soft_warning, base_text),
            WarningVariant::Hard => format!("{}\n\n{}", self.templates.hard_warning, base_text),
        }
    }

    fn warning_text(&self, variant: WarningVariant) -> &str {
        match variant {
            WarningVariant::None => "",
            WarningVariant::Soft => &self.templates.soft_warning,
            WarningVariant::Hard => &self.templates.hard_warning,
        }
    }

    /// Templates carrying a `{warning}` placeholder receive the warning
    /// in place; otherwise it is prepended.
    fn compose(&self, template: &str, body: String, warning: WarningVariant) -> String {
        if template.contains("{warning}") {
            fill(&body, &[("warning", self.warning_text(warning))])
        } else {
            self.apply_warning(&body, warning)
        }
    }

    fn finish(
        &self,
        problem: &ProblemRecord,
        tag: ConditionTag,
        warning: WarningVariant,
        text: String,
    ) -> RenderedPrompt {
        let mask_count = text.matches(MASK_TOKEN).count();
        RenderedPrompt {
            problem_id: problem.id.clone(),
            condition_tag: tag,
            warning,
            text,
            mask_count,
            template_version: self.templates.version.clone(),
        }
    }
}
