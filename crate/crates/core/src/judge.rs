//! Binary grading and citation detection with a judge model.
//!
//! The judge prompt asset directs the judge not to question the ground
//! truth answer and to end with a single verdict token. The parser takes
//! the last token occurrence, so analysis preceding the verdict is
//! harmless; an output with no token is reprompted once with a
//! token-only instruction, then fails hard.

use serde::{Deserialize, Serialize};

use crate::client::{Client, ClientError, CompletionRequest};
use crate::dataset::ProblemRecord;
use crate::mock::{self, JudgeMetaKind};
use crate::target::ModelTarget;
use crate::templates::{fill, TemplateSet};

/// Binary correctness verdict with the judge's raw output for audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub problem_id: String,
    /// 1 when the judged response matches the ground-truth answer.
    pub score: u8,
    pub judge_raw: String,
    pub judge_fingerprint: String,
}

/// Whether a response explicitly cites the provided answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationVerdict {
    pub problem_id: String,
    pub cited: bool,
    pub judge_raw: String,
}

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("judge output carried no verdict token after one reprompt; raw output: {raw:?}")]
    Unparseable { raw: String },
}

/// Default bilingual verdict tokens for correctness parsing.
pub fn default_correct_tokens() -> Vec<String> {
    vec!["CORRECT".to_string(), "正确".to_string()]
}

pub fn default_incorrect_tokens() -> Vec<String> {
    vec!["INCORRECT".to_string(), "错误".to_string()]
}

/// Scans for the last occurrence of any token, suppressing occurrences
/// contained inside a longer token occurrence (so the `CORRECT` inside
/// `INCORRECT` never wins). Returns the polarity of the surviving latest
/// occurrence.
pub fn parse_verdict_tokens(
    raw: &str,
    positive: &[String],
    negative: &[String],
) -> Option<bool> {
    struct Occurrence {
        start: usize,
        end: usize,
        positive: bool,
    }
    let mut occurrences: Vec<Occurrence> = Vec::new();
    for (tokens, polarity) in [(positive, true), (negative, false)] {
        for token in tokens {
            if token.is_empty() {
                continue;
            }
            let mut from = 0;
            while let Some(pos) = raw[from..].find(token.as_str()) {
                let start = from + pos;
                occurrences.push(Occurrence {
                    start,
                    end: start + token.len(),
                    positive: polarity,
                });
                from = start + 1;
                while from < raw.len() && !raw.is_char_boundary(from) {
                    from += 1;
                }
            }
        }
    }
    let survives = |o: &Occurrence| {
        !occurrences.iter().any(|other| {
            (other.end - other.start) > (o.end - o.start)
                && other.start <= o.start
                && o.end <= other.end
        })
    };
    occurrences
        .iter()
        .filter(|o| survives(o))
        .max_by_key(|o| (o.start, o.end))
        .map(|o| o.positive)
}

/// Last-occurrence binary verdict over the default bilingual token set.
pub fn parse_judge_output(raw: &str) -> Result<u8, JudgeError> {
    parse_verdict_tokens(raw, &default_correct_tokens(), &default_incorrect_tokens())
        .map(|positive| positive as u8)
        .ok_or_else(|| JudgeError::Unparseable {
            raw: raw.to_string(),
        })
}

/// Grades responses and detects citations through a model client. The
/// client cache makes identical (problem, response) pairs yield identical
/// verdicts within a run.
#[derive(Clone)]
pub struct Judge {
    client: Client,
    target: ModelTarget,
    templates: TemplateSet,
}

impl Judge {
    pub fn new(client: Client, target: ModelTarget, templates: TemplateSet) -> Self {
        Judge {
            client,
            target,
            templates,
        }
    }

    pub fn target(&self) -> &ModelTarget {
        &self.target
    }

    fn request(&self, prompt: String) -> CompletionRequest {
        CompletionRequest::new(self.target.clone(), prompt)
    }

    /// Assembles the judge prompt, optionally with the reprompt suffix;
    /// mock judge targets get the metadata line appended last.
    fn judge_prompt(
        &self,
        base: &str,
        suffix: Option<&str>,
        kind: JudgeMetaKind,
        ground_truth: &str,
        response: &str,
    ) -> String {
        let mut prompt = base.to_string();
        if let Some(suffix) = suffix {
            prompt.push_str("\n\n");
            prompt.push_str(suffix);
        }
        if self.target.mock {
            prompt = mock::append_judge_meta(&prompt, kind, ground_truth, response);
        }
        prompt
    }

    /// Binary-grades a response against the problem's ground truth. Only
    /// the final content is judged, never the reasoning trace.
    pub async fn grade(
        &self,
        problem: &ProblemRecord,
        response_content: &str,
    ) -> Result<Verdict, JudgeError> {
        let base = fill(
            &self.templates.judge,
            &[
                ("statement", problem.statement.as_str()),
                ("ground_truth", problem.ground_truth_answer.as_str()),
                ("response", response_content),
            ],
        );
        let first = self.request(self.judge_prompt(
            &base,
            None,
            JudgeMetaKind::Grade,
            &problem.ground_truth_answer,
            response_content,
        ));
        let response = self.client.complete(&first).await?;
        if let Some(positive) = parse_verdict_tokens(
            &response.content,
            &self.templates.correct_tokens,
            &self.templates.incorrect_tokens,
        ) {
            return Ok(Verdict {
                problem_id: problem.id.clone(),
                score: positive as u8,
                judge_raw: response.content,
                judge_fingerprint: response.request_fingerprint,
            });
        }

        // One reprompt demanding a bare verdict token.
        let retry = self.request(self.judge_prompt(
            &base,
            Some(&self.templates.reprompt_suffix),
            JudgeMetaKind::Grade,
            &problem.ground_truth_answer,
            response_content,
        ));
        let response = self.client.complete(&retry).await?;
        match parse_verdict_tokens(
            &response.content,
            &self.templates.correct_tokens,
            &self.templates.incorrect_tokens,
        ) {
            Some(positive) => Ok(Verdict {
                problem_id: problem.id.clone(),
                score: positive as u8,
                judge_raw: response.content,
                judge_fingerprint: response.request_fingerprint,
            }),
            None => Err(JudgeError::Unparseable {
                raw: response.content,
            }),
        }
    }

    /// Detects explicit citation of the provided answer. Ambiguous or
    /// token-free judge output conservatively counts as not cited.
    pub async fn judge_citation(
        &self,
        problem_id: &str,
        response_content: &str,
        ground_truth_answer: &str,
    ) -> Result<CitationVerdict, JudgeError> {
        let base = fill(
            &self.templates.citation,
            &[
                ("ground_truth", ground_truth_answer),
                ("response", response_content),
            ],
        );
        let request = self.request(self.judge_prompt(
            &base,
            None,
            JudgeMetaKind::Citation,
            ground_truth_answer,
            response_content,
        ));
        let response = self.client.complete(&request).await?;
        let cited = parse_verdict_tokens(
            &response.content,
            &self.templates.cited_tokens,
            &self.templates.not_cited_tokens,
        ) == Some(true);
        Ok(CitationVerdict {
            problem_id: problem_id.to_string(),
            cited,
            judge_raw: response.content,
        })
    }
}
