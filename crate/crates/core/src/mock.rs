//! Deterministic stand-in model and local chat-completion server.
//!
//! The mock answers correctly for an exact, seed-determined subset of
//! problem ids per condition (`⌊rate × n⌋` of them), so end-to-end tests
//! assert equalities within ±1/n instead of statistical bounds. It also
//! serves a judge mode whose verdict is plain substring containment of
//! the ground truth — a decidable oracle.
//!
//! Prompts aimed at the mock carry a trailing metadata line; real targets
//! receive clean prompts. Formats:
//!
//! ```text
//! #meta problem_id=<id> condition=<tag>
//! #meta judge kind=<grade|citation|mask> gt_b64=<base64> response_b64=<base64>
//! ```

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::masker;

/// Per-condition correctness rates for the mock. Keys are condition tags
/// (`AE`, `AER`, `AMR`, `ARR`, `AF`, `RA_WR`, `WA_RR`, `WA_WR`) plus the
/// warning variants (`SOFT`, `HARD`) for warned AE runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockProfile {
    pub rates: BTreeMap<String, f64>,
    pub seed: u64,
    /// Fraction of correct AE responses that explicitly cite the answer.
    #[serde(default)]
    pub citation_rate: f64,
}

impl MockProfile {
    pub fn validate(&self) -> Result<(), MockError> {
        for (tag, rate) in &self.rates {
            if !(0.0..=1.0).contains(rate) {
                return Err(MockError::InvalidProfile {
                    detail: format!("rate for {tag} is {rate}, outside [0, 1]"),
                });
            }
        }
        if !(0.0..=1.0).contains(&self.citation_rate) {
            return Err(MockError::InvalidProfile {
                detail: format!("citation_rate is {}, outside [0, 1]", self.citation_rate),
            });
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MockError {
    #[error("invalid mock profile: {detail}")]
    InvalidProfile { detail: String },
    #[error("mock profile has no rate for condition {tag:?}")]
    UnknownCondition { tag: String },
    #[error("problem id {id:?} was not in the run-wide problem set")]
    UnknownProblem { id: String },
    #[error("cannot bind mock server: {0}")]
    Bind(#[source] std::io::Error),
}

/// `⌊rate × n⌋` with a tiny epsilon so decimal rates land on the
/// mathematically intended count.
fn floor_count(rate: f64, n: usize) -> usize {
    (((rate * n as f64) + 1e-9).floor() as usize).min(n)
}

/// The deterministic responder. Built once over the run-wide problem set;
/// pure afterwards.
#[derive(Debug, Clone)]
pub struct MockModel {
    profile: MockProfile,
    n: usize,
    ground_truth: BTreeMap<String, String>,
    /// Position of each id in the seeded permutation of the
    /// lexicographically sorted id list.
    rank: HashMap<String, usize>,
}

impl MockModel {
    pub fn new(
        profile: MockProfile,
        problems: &[(String, String)],
    ) -> Result<Self, MockError> {
        profile.validate()?;
        let mut ids: Vec<&String> = problems.iter().map(|(id, _)| id).collect();
        ids.sort();
        ids.dedup();
        let n = ids.len();

        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut rank = HashMap::with_capacity(n);
        for (position, &idx) in order.iter().enumerate() {
            rank.insert(ids[idx].clone(), position);
        }

        Ok(MockModel {
            profile,
            n,
            ground_truth: problems.iter().cloned().collect(),
            rank,
        })
    }

    pub fn problem_count(&self) -> usize {
        self.n
    }

    /// Number of ids answered correctly for a condition: `⌊rate × n⌋`.
    pub fn correct_count(&self, condition_key: &str) -> Result<usize, MockError> {
        let rate = self
            .profile
            .rates
            .get(condition_key)
            .ok_or_else(|| MockError::UnknownCondition {
                tag: condition_key.to_string(),
            })?;
        Ok(floor_count(*rate, self.n))
    }

    /// Deterministic response text for one (problem, condition) pair.
    pub fn respond(&self, problem_id: &str, condition_key: &str) -> Result<String, MockError> {
        let k = self.correct_count(condition_key)?;
        let ground_truth =
            self.ground_truth
                .get(problem_id)
                .ok_or_else(|| MockError::UnknownProblem {
                    id: problem_id.to_string(),
                })?;
        let rank = *self
            .rank
            .get(problem_id)
            .ok_or_else(|| MockError::UnknownProblem {
                id: problem_id.to_string(),
            })?;
        if rank >= k {
            return Ok("the result is [DECOY]".to_string());
        }
        if condition_key == "AE" {
            let cited = floor_count(self.profile.citation_rate, k);
            if rank < cited {
                return Ok(format!(
                    "According to the answer, the answer is {ground_truth}."
                ));
            }
        }
        Ok(format!(
            "Working through it step by step, the answer is {ground_truth}."
        ))
    }
}

// --- prompt metadata -------------------------------------------------

pub const META_PREFIX: &str = "#meta ";
const CITATION_FRAME: &str = "According to the answer";

/// Appends the model metadata line for mock targets.
pub fn append_model_meta(text: &str, problem_id: &str, condition: &str) -> String {
    format!("{text}\n{META_PREFIX}problem_id={problem_id} condition={condition}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JudgeMetaKind {
    Grade,
    Citation,
    Mask,
}

impl JudgeMetaKind {
    fn as_str(self) -> &'static str {
        match self {
            JudgeMetaKind::Grade => "grade",
            JudgeMetaKind::Citation => "citation",
            JudgeMetaKind::Mask => "mask",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "grade" => Some(JudgeMetaKind::Grade),
            "citation" => Some(JudgeMetaKind::Citation),
            "mask" => Some(JudgeMetaKind::Mask),
            _ => None,
        }
    }
}

/// Appends the judge metadata line for mock judge targets. Payloads are
/// base64 so the line format stays single-line regardless of content.
pub fn append_judge_meta(
    text: &str,
    kind: JudgeMetaKind,
    ground_truth: &str,
    response: &str,
) -> String {
    format!(
        "{text}\n{META_PREFIX}judge kind={} gt_b64={} response_b64={}",
        kind.as_str(),
        BASE64.encode(ground_truth),
        BASE64.encode(response),
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedMeta {
    Model {
        problem_id: String,
        condition: String,
    },
    Judge {
        kind: JudgeMetaKind,
        ground_truth: String,
        response: String,
    },
}

/// Parses the trailing metadata line of a prompt, if present.
pub fn parse_meta(prompt: &str) -> Option<ParsedMeta> {
    let line = prompt.lines().last()?.strip_prefix(META_PREFIX)?;
    if let Some(rest) = line.strip_prefix("judge ") {
        let mut kind = None;
        let mut ground_truth = None;
        let mut response = None;
        for field in rest.split_whitespace() {
            if let Some(v) = field.strip_prefix("kind=") {
                kind = JudgeMetaKind::parse(v);
            } else if let Some(v) = field.strip_prefix("gt_b64=") {
                ground_truth = BASE64.decode(v).ok().and_then(|b| String::from_utf8(b).ok());
            } else if let Some(v) = field.strip_prefix("response_b64=") {
                response = BASE64.decode(v).ok().and_then(|b| String::from_utf8(b).ok());
            }
        }
        return Some(ParsedMeta::Judge {
            kind: kind?,
            ground_truth: ground_truth?,
            response: response?,
        });
    }
    // Ids may contain spaces; split on the final " condition=" instead of
    // tokenizing.
    let rest = line.strip_prefix("problem_id=")?;
    let split_at = rest.rfind(" condition=")?;
    Some(ParsedMeta::Model {
        problem_id: rest[..split_at].to_string(),
        condition: rest[split_at + " condition=".len()..].to_string(),
    })
}

// --- HTTP server ------------------------------------------------------

/// Fault and behavior knobs for tests.
#[derive(Debug, Clone, Default)]
pub struct MockServerOptions {
    /// Return 429 for this many requests before behaving normally.
    pub fail_first_requests: u32,
    /// Make the judge mode return token-free prose (exercises reprompt).
    pub judge_unparseable: bool,
    /// Per-request deterministic delay in `0..jitter` ms, keyed by prompt
    /// hash; shuffles completion order in batched runs.
    pub latency_jitter_ms: u64,
    /// Reply 200 with a body that is not a chat completion.
    pub malformed_body: bool,
}

#[derive(Clone)]
struct ServerState {
    model: Arc<MockModel>,
    hits: Arc<AtomicU64>,
    faults_remaining: Arc<AtomicI64>,
    options: MockServerOptions,
}

/// A running mock endpoint. Aborts the server task on drop.
pub struct MockServerHandle {
    pub addr: SocketAddr,
    hits: Arc<AtomicU64>,
    join: tokio::task::JoinHandle<()>,
}

impl MockServerHandle {
    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Total POSTs accepted, including fault-injected ones.
    pub fn request_count(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for MockServerHandle {
    fn drop(&mut self) {
        self.join.abort();
    }
}

/// Binds and serves the mock on `127.0.0.1:port` (0 picks a free port).
pub async fn serve(
    model: MockModel,
    port: u16,
    options: MockServerOptions,
) -> Result<MockServerHandle, MockError> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
        .await
        .map_err(MockError::Bind)?;
    let addr = listener.local_addr().map_err(MockError::Bind)?;
    let hits = Arc::new(AtomicU64::new(0));
    let state = ServerState {
        model: Arc::new(model),
        hits: Arc::clone(&hits),
        faults_remaining: Arc::new(AtomicI64::new(options.fail_first_requests as i64)),
        options,
    };
    let app = Router::new()
        .route("/chat/completions", post(chat_completions))
        .route("/v1/chat/completions", post(chat_completions))
        .with_state(state);
    let join = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Ok(MockServerHandle { addr, hits, join })
}

fn bad_request(detail: &str) -> Response {
    (
        StatusCode::BAD_REQUEST,
        Json(json!({"error": {"message": detail, "type": "invalid_request_error"}})),
    )
        .into_response()
}

fn completion_body(model: &str, content: &str, reasoning: Option<&str>) -> serde_json::Value {
    let mut message = json!({"role": "assistant", "content": content});
    if let Some(reasoning) = reasoning {
        message["reasoning_content"] = json!(reasoning);
    }
    json!({
        "id": "mock-completion",
        "object": "chat.completion",
        "model": model,
        "choices": [{
            "index": 0,
            "message": message,
            "finish_reason": "stop"
        }],
        "usage": {"prompt_tokens": 0, "completion_tokens": 0, "total_tokens": 0}
    })
}

async fn chat_completions(
    State(state): State<ServerState>,
    Json(body): Json<serde_json::Value>,
) -> Response {
    state.hits.fetch_add(1, Ordering::SeqCst);

    if state.faults_remaining.fetch_sub(1, Ordering::SeqCst) > 0 {
        return (
            StatusCode::TOO_MANY_REQUESTS,
            Json(json!({"error": {"message": "rate limited", "type": "rate_limit_error"}})),
        )
            .into_response();
    }
    if state.options.malformed_body {
        return (StatusCode::OK, "this is not a chat completion").into_response();
    }

    let model_name = body
        .get("model")
        .and_then(|m| m.as_str())
        .unwrap_or("mock")
        .to_string();
    let Some(prompt) = body
        .get("messages")
        .and_then(|m| m.as_array())
        .and_then(|m| m.last())
        .and_then(|m| m.get("content"))
        .and_then(|c| c.as_str())
    else {
        return bad_request("missing messages[].content");
    };

    if state.options.latency_jitter_ms > 0 {
        let mut hash = 0u64;
        for b in prompt.bytes() {
            hash = hash.wrapping_mul(31).wrapping_add(b as u64);
        }
        tokio::time::sleep(std::time::Duration::from_millis(
            hash % state.options.latency_jitter_ms,
        ))
        .await;
    }

    let mut reasoning: Option<String> = None;
    let content = match parse_meta(prompt) {
        Some(ParsedMeta::Model {
            problem_id,
            condition,
        }) => match state.model.respond(&problem_id, &condition) {
            Ok(content) => {
                reasoning = Some(format!(
                    "Considering problem {problem_id} carefully before answering."
                ));
                content
            }
            Err(e) => return bad_request(&e.to_string()),
        },
        Some(ParsedMeta::Judge {
            kind,
            ground_truth,
            response,
        }) => match kind {
            JudgeMetaKind::Grade => {
                if state.options.judge_unparseable {
                    "the verdict tokens are unavailable today".to_string()
                } else if response.contains(&ground_truth) {
                    "CORRECT".to_string()
                } else {
                    "INCORRECT".to_string()
                }
            }
            JudgeMetaKind::Citation => {
                if response.contains(CITATION_FRAME) {
                    "CITED".to_string()
                } else {
                    "NOT_CITED".to_string()
                }
            }
            JudgeMetaKind::Mask => {
                let variants = vec![ground_truth.clone()];
                match masker::mask(&response, &ground_truth, &variants) {
                    Ok((masked, _)) => masked,
                    Err(e) => return bad_request(&e.to_string()),
                }
            }
        },
        None => return bad_request("prompt carries no #meta line for the mock"),
    };

    (
        StatusCode::OK,
        Json(completion_body(&model_name, &content, reasoning.as_deref())),
    )
        .into_response()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problems(n: usize) -> Vec<(String, String)> {
        (0..n)
            .map(|i| (format!("q{i:03}"), format!("ans-{i:03}")))
            .collect()
    }

    fn profile(rate: f64) -> MockProfile {
        MockProfile {
            rates: BTreeMap::from([("AE".to_string(), rate)]),
            seed: 7,
            citation_rate: 0.0,
        }
    }

    #[test]
    fn rate_one_answers_everything_correctly() {
        let set = problems(20);
        let model = MockModel::new(profile(1.0), &set).unwrap();
        for (id, gt) in &set {
            assert!(model.respond(id, "AE").unwrap().contains(gt));
        }
    }

    #[test]
    fn rate_zero_always_decoys() {
        let set = problems(20);
        let model = MockModel::new(profile(0.0), &set).unwrap();
        for (id, _) in &set {
            assert_eq!(model.respond(id, "AE").unwrap(), "the result is [DECOY]");
        }
    }

    #[test]
    fn correct_count_is_exactly_floor_rate_n() {
        let set = problems(158);
        let model = MockModel::new(profile(0.9304), &set).unwrap();
        assert_eq!(model.correct_count("AE").unwrap(), 147);
        let correct = set
            .iter()
            .filter(|(id, gt)| model.respond(id, "AE").unwrap().contains(gt.as_str()))
            .count();
        assert_eq!(correct, 147);
    }

    #[test]
    fn responses_are_deterministic_across_instances() {
        let set = problems(50);
        let a = MockModel::new(profile(0.5), &set).unwrap();
        let b = MockModel::new(profile(0.5), &set).unwrap();
        for (id, _) in &set {
            assert_eq!(a.respond(id, "AE").unwrap(), b.respond(id, "AE").unwrap());
        }
    }

    #[test]
    fn unknown_condition_is_an_error() {
        let set = problems(3);
        let model = MockModel::new(profile(1.0), &set).unwrap();
        assert!(matches!(
            model.respond("q000", "AMR"),
            Err(MockError::UnknownCondition { .. })
        ));
    }

    #[test]
    fn citation_frame_covers_the_configured_fraction() {
        let set = problems(100);
        let mut p = profile(0.8);
        p.citation_rate = 0.25;
        let model = MockModel::new(p, &set).unwrap();
        let cited = set
            .iter()
            .filter(|(id, _)| {
                model
                    .respond(id, "AE")
                    .unwrap()
                    .starts_with("According to the answer")
            })
            .count();
        // ⌊0.25 × ⌊0.8 × 100⌋⌋ = 20
        assert_eq!(cited, 20);
    }

    #[test]
    fn meta_lines_round_trip() {
        let prompt = append_model_meta("solve it", "q 1", "AE");
        assert_eq!(
            parse_meta(&prompt),
            Some(ParsedMeta::Model {
                problem_id: "q 1".to_string(),
                condition: "AE".to_string()
            })
        );
        let judged = append_judge_meta("grade it", JudgeMetaKind::Grade, "4 corners", "I say 4\ncorners");
        assert_eq!(
            parse_meta(&judged),
            Some(ParsedMeta::Judge {
                kind: JudgeMetaKind::Grade,
                ground_truth: "4 corners".to_string(),
                response: "I say 4\ncorners".to_string()
            })
        );
        assert_eq!(parse_meta("no meta here"), None);
    }

    #[test]
    fn profile_rejects_out_of_range_rates() {
        let set = problems(3);
        let mut p = profile(1.5);
        assert!(MockModel::new(p.clone(), &set).is_err());
        p = profile(0.5);
        p.citation_rate = -0.1;
        assert!(MockModel::new(p, &set).is_err());
    }
}
