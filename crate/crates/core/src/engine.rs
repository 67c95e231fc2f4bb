//! Run orchestration: plans the (problem × condition × target) grid,
//! prepares AMR/ARR chains, dispatches batches, grades, aggregates, and
//! writes a reproducible manifest next to the reports.
//!
//! Replay determinism: the manifest plus an intact response cache fully
//! determine the request set, so re-running a finished configuration
//! performs zero upstream calls and reproduces byte-identical reports.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

use crate::client::{fingerprint, Client, ClientError, ClientOptions, CompletionRequest};
use crate::conditions::{ConditionTag, ConflictCondition, PromptCondition, WarningVariant};
use crate::config::{ChainSource, RunConfig};
use crate::dataset::{self, DatasetError, ProblemRecord};
use crate::judge::Judge;
use crate::masker;
use crate::metrics::{aggregate, conflict_matrix, AccuracyCell, MetricsError};
use crate::mock;
use crate::prompt::{PromptError, PromptFactory};
use crate::report::{
    emit_run_report, CitationReport, CitationRow, RunReport, WarningReport,
    WarningRow,
};
use crate::target::ModelTarget;
use crate::templates::{TemplateError, TemplateSet};

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("condition {condition} is requested but no (target, problem) pair can run it")]
    ConditionUnrunnable { condition: String },
    #[error("warning runs need the AE condition as their baseline")]
    WarningsRequireAe,
    #[error("the plan is empty; nothing to run")]
    EmptyPlan,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Masker(#[from] masker::MaskerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error(
        "chain_source is \"self\" but no cached AE transcript exists for target {target:?}, \
         problem {problem_id:?}; run the AE condition first"
    )]
    SelfChainMissing { target: String, problem_id: String },
    #[error("verdict log is malformed: {detail}")]
    MalformedLog { detail: String },
}

/// One scheduled request: a problem under a condition (and warning) for
/// one target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkItem {
    pub problem_id: String,
    pub condition: ConditionTag,
    pub warning: WarningVariant,
    pub target_name: String,
}

fn tag_rank(tag: ConditionTag) -> u8 {
    match tag {
        ConditionTag::Prompt(c) => c as u8,
        ConditionTag::Conflict(c) => 5 + c as u8,
    }
}

/// Builds the deterministic work-item grid, applying trace-visibility
/// gating: targets without visible traces run only AE and AF, and never
/// any chain-bearing condition (AER/AMR/ARR and all conflicts).
pub fn plan(
    records: &[ProblemRecord],
    targets: &[ModelTarget],
    conditions: &[PromptCondition],
    warnings: &[WarningVariant],
    conflicts: bool,
    chain_source: ChainSource,
) -> Result<Vec<WorkItem>, PlanError> {
    let mut items = Vec::new();
    let mut push = |problem_id: &str, condition: ConditionTag, warning: WarningVariant, target: &ModelTarget| {
        items.push(WorkItem {
            problem_id: problem_id.to_string(),
            condition,
            warning,
            target_name: target.name.clone(),
        });
    };

    let chain_data_present = |record: &ProblemRecord| match chain_source {
        ChainSource::Canonical => record.reference_reasoning.is_some(),
        // Self transcripts are resolved from the cache at prepare time.
        ChainSource::SelfTranscript => true,
    };

    for record in records {
        for &condition in conditions {
            for target in targets {
                if condition.requires_chain() && !target.trace_visible {
                    continue;
                }
                if condition.requires_chain() && !chain_data_present(record) {
                    continue;
                }
                push(&record.id, ConditionTag::Prompt(condition), WarningVariant::None, target);
            }
        }
        for &warning in warnings {
            if warning == WarningVariant::None {
                continue;
            }
            for target in targets {
                push(&record.id, ConditionTag::Prompt(PromptCondition::Ae), warning, target);
            }
        }
        if conflicts && record.original_counterpart.is_some() && chain_data_present(record) {
            for conflict in ConflictCondition::ALL {
                for target in targets {
                    if !target.trace_visible {
                        continue;
                    }
                    push(&record.id, ConditionTag::Conflict(conflict), WarningVariant::None, target);
                }
            }
        }
    }

    // Every requested condition must be runnable by someone.
    for &condition in conditions {
        let tag = ConditionTag::Prompt(condition);
        if !items
            .iter()
            .any(|i| i.condition == tag && i.warning == WarningVariant::None)
        {
            return Err(PlanError::ConditionUnrunnable {
                condition: condition.to_string(),
            });
        }
    }
    if warnings.iter().any(|&w| w != WarningVariant::None)
        && !conditions.contains(&PromptCondition::Ae)
    {
        return Err(PlanError::WarningsRequireAe);
    }
    if conflicts
        && !items
            .iter()
            .any(|i| matches!(i.condition, ConditionTag::Conflict(_)))
    {
        return Err(PlanError::ConditionUnrunnable {
            condition: "conflicts (no problem carries an original_counterpart)".to_string(),
        });
    }
    if items.is_empty() {
        return Err(PlanError::EmptyPlan);
    }

    items.sort_by(|a, b| {
        a.problem_id
            .cmp(&b.problem_id)
            .then(tag_rank(a.condition).cmp(&tag_rank(b.condition)))
            .then((a.warning as u8).cmp(&(b.warning as u8)))
            .then(a.target_name.cmp(&b.target_name))
    });
    Ok(items)
}

/// The chains rendered into AER/AMR/ARR prompts for one problem (and,
/// under self-sourced chains, one target).
#[derive(Debug, Clone)]
pub struct PreparedChains {
    pub aer_chain: String,
    pub amr_chain: String,
    pub arr_chain: String,
    pub mask_count: usize,
}

/// Prepared chains plus the provenance flags the manifest records.
#[derive(Debug, Default)]
pub struct ChainStore {
    canonical: BTreeMap<String, PreparedChains>,
    per_target: BTreeMap<(String, String), PreparedChains>,
    pub empty_pruned_chain: Vec<String>,
    pub llm_mask_fallback: Vec<String>,
}

impl ChainStore {
    pub fn chains_for(&self, target: &str, problem_id: &str) -> Option<&PreparedChains> {
        self.per_target
            .get(&(target.to_string(), problem_id.to_string()))
            .or_else(|| self.canonical.get(problem_id))
    }
}

fn expanded_variants(record: &ProblemRecord, config: &RunConfig) -> Vec<String> {
    masker::expand_variants(
        &record.ground_truth_answer,
        &record.answer_variants,
        config.numeral_lexicon,
    )
}

async fn build_chains(
    record: &ProblemRecord,
    source_chain: &str,
    config: &RunConfig,
    client: &Client,
    templates: &TemplateSet,
    store_key: Option<String>,
    store: &mut ChainStore,
) -> Result<PreparedChains, EngineError> {
    let variants = expanded_variants(record, config);
    let flag_id = store_key.clone().unwrap_or_else(|| record.id.clone());

    let (amr_chain, mask_count) = if config.use_llm_masker {
        let outcome = masker::llm_mask(
            source_chain,
            &record.ground_truth_answer,
            &variants,
            client,
            &config.judge,
            templates,
        )
        .await?;
        if outcome.fell_back && !store.llm_mask_fallback.contains(&flag_id) {
            store.llm_mask_fallback.push(flag_id.clone());
        }
        let count = outcome.text.matches(masker::MASK_TOKEN).count();
        (outcome.text, count)
    } else {
        masker::mask(source_chain, &record.ground_truth_answer, &variants)?
    };

    let arr_chain =
        masker::remove_answer_sentences(source_chain, &record.ground_truth_answer, &variants);
    if arr_chain.trim().is_empty() && !store.empty_pruned_chain.contains(&flag_id) {
        store.empty_pruned_chain.push(flag_id.clone());
    }

    Ok(PreparedChains {
        aer_chain: source_chain.to_string(),
        amr_chain,
        arr_chain,
        mask_count,
    })
}

/// Prepares AER/AMR/ARR inputs for every problem that needs them.
/// Canonical chains come from `reference_reasoning`; self-sourced chains
/// come from each target's cached AE transcript (trace then content) and
/// error out when the AE run has not happened yet.
pub async fn prepare_chains(
    records: &[ProblemRecord],
    targets: &[ModelTarget],
    config: &RunConfig,
    client: &Client,
    factory: &PromptFactory,
) -> Result<ChainStore, EngineError> {
    let mut store = ChainStore::default();
    match config.chain_source {
        ChainSource::Canonical => {
            for record in records {
                let Some(reasoning) = record.reference_reasoning.clone() else {
                    continue;
                };
                let chains = build_chains(
                    record,
                    &reasoning,
                    config,
                    client,
                    factory.templates(),
                    None,
                    &mut store,
                )
                .await?;
                store.canonical.insert(record.id.clone(), chains);
            }
        }
        ChainSource::SelfTranscript => {
            for target in targets.iter().filter(|t| t.trace_visible) {
                for record in records {
                    let rendered = factory.render(
                        record,
                        PromptCondition::Ae,
                        WarningVariant::None,
                        None,
                        None,
                    )?;
                    let prompt_text = if target.mock {
                        mock::append_model_meta(&rendered.text, &record.id, "AE")
                    } else {
                        rendered.text
                    };
                    let request = CompletionRequest::new(target.clone(), prompt_text)
                        .with_max_output_tokens(config.max_output_tokens);
                    let fp = fingerprint(&request);
                    let cached = client.cache().load(&fp)?.ok_or_else(|| {
                        EngineError::SelfChainMissing {
                            target: target.name.clone(),
                            problem_id: record.id.clone(),
                        }
                    })?;
                    let chain = match &cached.reasoning_trace {
                        Some(trace) if !trace.is_empty() => {
                            format!("{trace}\n\n{}", cached.content)
                        }
                        _ => cached.content.clone(),
                    };
                    let key = (target.name.clone(), record.id.clone());
                    let chains = build_chains(
                        record,
                        &chain,
                        config,
                        client,
                        factory.templates(),
                        Some(format!("{}:{}", target.name, record.id)),
                        &mut store,
                    )
                    .await?;
                    store.per_target.insert(key, chains);
                }
            }
        }
    }
    Ok(store)
}

// --- manifest ----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub name: String,
    pub endpoint: String,
    pub model_id: String,
    pub temperature: f64,
    pub trace_visible: bool,
    pub mock: bool,
}

impl From<&ModelTarget> for TargetSummary {
    fn from(t: &ModelTarget) -> Self {
        TargetSummary {
            name: t.name.clone(),
            endpoint: t.endpoint.clone(),
            model_id: t.model_id.clone(),
            temperature: t.temperature,
            trace_visible: t.trace_visible,
            mock: t.mock,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestFlags {
    /// Problems whose statement already contains the answer or a variant;
    /// AF renders them untouched, analysts can stratify.
    pub statement_contains_answer: Vec<String>,
    pub empty_pruned_chain: Vec<String>,
    pub llm_mask_fallback: Vec<String>,
}

/// The reproducibility envelope: with the response cache, this record
/// fully determines the request set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset_fingerprint: String,
    pub template_version: String,
    pub targets: Vec<TargetSummary>,
    /// Scheduled condition tags, warnings rendered as `AE+SOFT`.
    pub conditions: Vec<String>,
    pub chain_source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<u32>,
    pub flags: ManifestFlags,
}

pub fn manifest_fingerprint(manifest: &RunManifest) -> String {
    let body = serde_json::to_string(manifest).expect("manifest serializes");
    let digest = Sha256::digest(body.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// --- verdict log ---------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledCell {
    pub model: String,
    pub condition: ConditionTag,
    pub warning: WarningVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub manifest_fingerprint: String,
    pub dataset_fingerprint: String,
    pub template_version: String,
    pub targets: Vec<TargetSummary>,
    pub scheduled: Vec<ScheduledCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub model: String,
    pub problem_id: String,
    pub condition: ConditionTag,
    pub warning: WarningVariant,
    pub score: u8,
    pub judge_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitationLogRow {
    pub model: String,
    pub problem_id: String,
    pub cited: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LogLine {
    Header(LogHeader),
    Verdict(VerdictRow),
    Citation(CitationLogRow),
}

/// Every graded outcome of a run, in plan order; the sole input the
/// re-aggregation command needs.
#[derive(Debug, Clone, PartialEq)]
pub struct VerdictLog {
    pub header: LogHeader,
    pub verdicts: Vec<VerdictRow>,
    pub citations: Vec<CitationLogRow>,
}

impl VerdictLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &LogLine| {
            out.push_str(&serde_json::to_string(line).expect("log line serializes"));
            out.push('\n');
        };
        push(&LogLine::Header(self.header.clone()));
        for v in &self.verdicts {
            push(&LogLine::Verdict(v.clone()));
        }
        for c in &self.citations {
            push(&LogLine::Citation(c.clone()));
        }
        out
    }

    pub fn parse(raw: &str) -> Result<Self, EngineError> {
        let mut header = None;
        let mut verdicts = Vec::new();
        let mut citations = Vec::new();
        for (idx, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine =
                serde_json::from_str(line).map_err(|e| EngineError::MalformedLog {
                    detail: format!("line {}: {e}", idx + 1),
                })?;
            match parsed {
                LogLine::Header(h) => header = Some(h),
                LogLine::Verdict(v) => verdicts.push(v),
                LogLine::Citation(c) => citations.push(c),
            }
        }
        let header = header.ok_or_else(|| EngineError::MalformedLog {
            detail: "missing header line".to_string(),
        })?;
        Ok(VerdictLog {
            header,
            verdicts,
            citations,
        })
    }
}

/// Rebuilds the report tables from a verdict log. Used both by the run
/// itself and by offline re-aggregation, so the two produce identical
/// bytes.
pub fn build_report(log: &VerdictLog) -> Result<RunReport, MetricsError> {
    let mut by_cell: BTreeMap<(String, ConditionTag, WarningVariant), (usize, usize)> =
        BTreeMap::new();
    for v in &log.verdicts {
        let entry = by_cell
            .entry((v.model.clone(), v.condition, v.warning))
            .or_insert((0, 0));
        entry.0 += 1;
        entry.1 += v.score as usize;
    }
    let accuracy_of = |model: &str, condition: ConditionTag, warning: WarningVariant| {
        by_cell
            .get(&(model.to_string(), condition, warning))
            .map(|&(n, ones)| (n, ones as f64 / n as f64))
    };

    let model_order: Vec<String> = log.header.targets.iter().map(|t| t.name.clone()).collect();

    // Main five-condition grid.
    let mut main_cells: Vec<AccuracyCell> = Vec::new();
    let mut any_main = false;
    for model in &model_order {
        for condition in PromptCondition::ALL {
            let tag = ConditionTag::Prompt(condition);
            let scheduled = log.header.scheduled.iter().any(|s| {
                s.model == *model && s.condition == tag && s.warning == WarningVariant::None
            });
            if !scheduled {
                continue;
            }
            any_main = true;
            match accuracy_of(model, tag, WarningVariant::None) {
                Some((n, acc)) => main_cells.push(AccuracyCell::available(model, tag, n, acc)),
                // Scheduled but nothing graded (all items failed).
                None => main_cells.push(AccuracyCell::unavailable(model, tag)),
            }
        }
    }
    let main = if any_main {
        Some(aggregate(&main_cells)?)
    } else {
        None
    };

    // Conflict triads: only models with all three columns populated.
    let mut conflict_cells: Vec<AccuracyCell> = Vec::new();
    for model in &model_order {
        let triad: Vec<(ConditionTag, (usize, f64))> = ConflictCondition::ALL
            .iter()
            .filter_map(|&c| {
                let tag = ConditionTag::Conflict(c);
                accuracy_of(model, tag, WarningVariant::None).map(|cell| (tag, cell))
            })
            .collect();
        if triad.len() == ConflictCondition::ALL.len() {
            for (tag, (n, acc)) in triad {
                conflict_cells.push(AccuracyCell::available(model, tag, n, acc));
            }
        }
    }
    let conflicts = if conflict_cells.is_empty() {
        None
    } else {
        Some(conflict_matrix(&conflict_cells)?)
    };

    // Warned-AE rows.
    let mut warning_rows = Vec::new();
    for model in &model_order {
        let ae = accuracy_of(model, ConditionTag::Prompt(PromptCondition::Ae), WarningVariant::None);
        let soft = accuracy_of(model, ConditionTag::Prompt(PromptCondition::Ae), WarningVariant::Soft);
        let hard = accuracy_of(model, ConditionTag::Prompt(PromptCondition::Ae), WarningVariant::Hard);
        if soft.is_none() && hard.is_none() {
            continue;
        }
        if let Some((_, ae_acc)) = ae {
            warning_rows.push(WarningRow {
                model_name: model.clone(),
                ae: ae_acc,
                soft: soft.map(|(_, a)| a),
                hard: hard.map(|(_, a)| a),
                soft_delta: soft.map(|(_, a)| a - ae_acc),
                hard_delta: hard.map(|(_, a)| a - ae_acc),
            });
        }
    }
    let warnings = if warning_rows.is_empty() {
        None
    } else {
        Some(WarningReport { rows: warning_rows })
    };

    // Citation rates per model, averaged as a mean of rates.
    let mut citation_rows: Vec<CitationRow> = Vec::new();
    for model in &model_order {
        let rows: Vec<&CitationLogRow> =
            log.citations.iter().filter(|c| c.model == *model).collect();
        if rows.is_empty() {
            continue;
        }
        let cited = rows.iter().filter(|c| c.cited).count();
        citation_rows.push(CitationRow {
            model_name: model.clone(),
            n: rows.len(),
            rate: cited as f64 / rows.len() as f64,
        });
    }
    let citations = if citation_rows.is_empty() {
        None
    } else {
        let avg_rate =
            citation_rows.iter().map(|r| r.rate).sum::<f64>() / citation_rows.len() as f64;
        Some(CitationReport {
            rows: citation_rows,
            avg_rate,
        })
    };

    Ok(RunReport {
        run_manifest_fingerprint: log.header.manifest_fingerprint.clone(),
        main,
        conflicts,
        warnings,
        citations,
    })
}

// --- execution -----------------------------------------------------------

/// What a finished run leaves behind.
#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub manifest_fingerprint: String,
    pub log: VerdictLog,
    pub report: RunReport,
    /// Files written under the output directory.
    pub written: Vec<PathBuf>,
    /// Per-item failures (transport or judge); the run still completes.
    pub failures: Vec<String>,
}

pub async fn execute(config: &RunConfig) -> Result<RunOutcome, EngineError> {
    execute_with(config, ClientOptions::default()).await
}

pub async fn execute_with(
    config: &RunConfig,
    client_options: ClientOptions,
) -> Result<RunOutcome, EngineError> {
    // Dataset.
    let dataset_bytes = std::fs::read(&config.dataset).map_err(|source| DatasetError::Io {
        path: config.dataset.display().to_string(),
        source,
    })?;
    let dataset_fp = dataset::dataset_fingerprint(&dataset_bytes);
    let raw = String::from_utf8_lossy(&dataset_bytes);
    let (records, issues) = dataset::parse_dataset_str(&raw)?;
    if !issues.is_empty() {
        return Err(DatasetError::Invalid { issues }.into());
    }
    let by_id: BTreeMap<&str, &ProblemRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();

    // Templates and factory.
    let templates = match &config.template_dir {
        Some(dir) => TemplateSet::from_dir(dir)?,
        None => TemplateSet::builtin(&config.template_language)?,
    };
    let factory =
        PromptFactory::new(templates.clone()).with_warning_override(config.allow_warning_anywhere);

    let client = Client::new(&config.cache_root, client_options);

    // Plan and chains.
    let items = plan(
        &records,
        &config.targets,
        &config.conditions,
        &config.warnings,
        config.conflicts,
        config.chain_source,
    )?;
    let needs_chains = items.iter().any(|i| i.condition.requires_chain());
    let chains = if needs_chains {
        prepare_chains(&records, &config.targets, config, &client, &factory).await?
    } else {
        ChainStore::default()
    };

    // Manifest.
    let mut statement_flags = Vec::new();
    for record in &records {
        let variants = expanded_variants(record, config);
        if !masker::detect_answer_spans(&record.statement, &record.ground_truth_answer, &variants)
            .is_empty()
        {
            statement_flags.push(record.id.clone());
        }
    }
    let mut scheduled_tags: Vec<String> = Vec::new();
    for item in &items {
        let label = if item.warning == WarningVariant::None {
            item.condition.to_string()
        } else {
            format!("{}+{}", item.condition, item.warning)
        };
        if !scheduled_tags.contains(&label) {
            scheduled_tags.push(label);
        }
    }
    let manifest = RunManifest {
        dataset_fingerprint: dataset_fp.clone(),
        template_version: factory.template_version().to_string(),
        targets: config.targets.iter().map(TargetSummary::from).collect(),
        conditions: scheduled_tags,
        chain_source: config.chain_source.as_str().to_string(),
        max_output_tokens: config.max_output_tokens,
        flags: ManifestFlags {
            statement_contains_answer: statement_flags,
            empty_pruned_chain: chains.empty_pruned_chain.clone(),
            llm_mask_fallback: chains.llm_mask_fallback.clone(),
        },
    };
    let manifest_fp = manifest_fingerprint(&manifest);

    // Render prompts and dispatch.
    let targets_by_name: BTreeMap<&str, &ModelTarget> =
        config.targets.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut failures: Vec<String> = Vec::new();
    let mut requests = Vec::with_capacity(items.len());
    for item in &items {
        let record = by_id[item.problem_id.as_str()];
        let target = targets_by_name[item.target_name.as_str()];
        let rendered = match item.condition {
            ConditionTag::Prompt(condition) => {
                let prepared = chains.chains_for(&item.target_name, &item.problem_id);
                let effective = effective_problem(record, prepared, config.chain_source);
                factory.render(
                    &effective,
                    condition,
                    item.warning,
                    prepared.map(|c| c.amr_chain.as_str()),
                    prepared.map(|c| c.arr_chain.as_str()),
                )?
            }
            ConditionTag::Conflict(condition) => {
                let prepared = chains.chains_for(&item.target_name, &item.problem_id);
                let effective = effective_problem(record, prepared, config.chain_source);
                factory.render_conflict(&effective, condition)?
            }
        };
        let prompt_text = if target.mock {
            let key = if item.warning == WarningVariant::None {
                item.condition.to_string()
            } else {
                item.warning.to_string()
            };
            mock::append_model_meta(&rendered.text, &item.problem_id, &key)
        } else {
            rendered.text
        };
        requests.push(
            CompletionRequest::new(target.clone(), prompt_text)
                .with_max_output_tokens(config.max_output_tokens),
        );
    }
    let responses = client
        .run_batch(requests, config.parallelism, config.rate_limit_per_target)
        .await;

    // Grade completions (bounded concurrency, order preserved).
    let judge = Judge::new(client.clone(), config.judge.clone(), templates.clone());
    let semaphore = Arc::new(Semaphore::new(config.parallelism.max(1)));
    let mut grade_tasks = Vec::new();
    for (idx, (item, result)) in items.iter().zip(&responses).enumerate() {
        match result {
            Ok(response) => {
                let judge = judge.clone();
                let record = (*by_id[item.problem_id.as_str()]).clone();
                let content = response.content.clone();
                let semaphore = Arc::clone(&semaphore);
                grade_tasks.push((
                    idx,
                    tokio::spawn(async move {
                        let _permit = semaphore.acquire().await.expect("semaphore open");
                        judge.grade(&record, &content).await
                    }),
                ));
            }
            Err(e) => failures.push(format!(
                "{} / {} / {}: {e}",
                item.problem_id, item.condition, item.target_name
            )),
        }
    }
    let mut verdicts_by_idx: BTreeMap<usize, u8> = BTreeMap::new();
    let mut judge_fp_by_idx: BTreeMap<usize, String> = BTreeMap::new();
    for (idx, task) in grade_tasks {
        match task.await {
            Ok(Ok(verdict)) => {
                verdicts_by_idx.insert(idx, verdict.score);
                judge_fp_by_idx.insert(idx, verdict.judge_fingerprint);
            }
            Ok(Err(e)) => {
                let item = &items[idx];
                failures.push(format!(
                    "{} / {} / {} (judge): {e}",
                    item.problem_id, item.condition, item.target_name
                ));
            }
            Err(e) => failures.push(format!("judge worker panicked: {e}")),
        }
    }

    // Citation judging over AE responses.
    let mut citation_rows: Vec<CitationLogRow> = Vec::new();
    if config.citation_on_ae {
        let mut citation_tasks = Vec::new();
        for (idx, (item, result)) in items.iter().zip(&responses).enumerate() {
            let is_plain_ae = item.condition == ConditionTag::Prompt(PromptCondition::Ae)
                && item.warning == WarningVariant::None;
            let Ok(response) = result else { continue };
            if !is_plain_ae {
                continue;
            }
            let judge = judge.clone();
            let record = (*by_id[item.problem_id.as_str()]).clone();
            let content = response.content.clone();
            let semaphore = Arc::clone(&semaphore);
            citation_tasks.push((
                idx,
                tokio::spawn(async move {
                    let _permit = semaphore.acquire().await.expect("semaphore open");
                    judge
                        .judge_citation(&record.id, &content, &record.ground_truth_answer)
                        .await
                }),
            ));
        }
        for (idx, task) in citation_tasks {
            let item = &items[idx];
            match task.await {
                Ok(Ok(citation)) => citation_rows.push(CitationLogRow {
                    model: item.target_name.clone(),
                    problem_id: citation.problem_id,
                    cited: citation.cited,
                }),
                Ok(Err(e)) => failures.push(format!(
                    "{} / citation / {}: {e}",
                    item.problem_id, item.target_name
                )),
                Err(e) => failures.push(format!("citation worker panicked: {e}")),
            }
        }
    }

    // Assemble the log in plan order.
    let mut scheduled: Vec<ScheduledCell> = Vec::new();
    for item in &items {
        let cell = ScheduledCell {
            model: item.target_name.clone(),
            condition: item.condition,
            warning: item.warning,
        };
        if !scheduled.contains(&cell) {
            scheduled.push(cell);
        }
    }
    let verdict_rows: Vec<VerdictRow> = items
        .iter()
        .enumerate()
        .filter_map(|(idx, item)| {
            verdicts_by_idx.get(&idx).map(|&score| VerdictRow {
                model: item.target_name.clone(),
                problem_id: item.problem_id.clone(),
                condition: item.condition,
                warning: item.warning,
                score,
                judge_fingerprint: judge_fp_by_idx[&idx].clone(),
            })
        })
        .collect();
    let log = VerdictLog {
        header: LogHeader {
            manifest_fingerprint: manifest_fp.clone(),
            dataset_fingerprint: dataset_fp,
            template_version: factory.template_version().to_string(),
            targets: manifest.targets.clone(),
            scheduled,
        },
        verdicts: verdict_rows,
        citations: citation_rows,
    };

    let report = build_report(&log)?;

    // Write outputs.
    std::fs::create_dir_all(&config.output_dir)?;
    let mut written = Vec::new();
    let write = |name: &str, body: &str| -> std::io::Result<PathBuf> {
        let path = config.output_dir.join(name);
        std::fs::write(&path, body)?;
        Ok(path)
    };
    written.push(write(
        "manifest.json",
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?);
    written.push(write("verdicts.jsonl", &log.to_jsonl())?);
    for &format in &config.report_formats {
        written.push(write(format.file_name(), &emit_run_report(&report, format))?);
    }
    if !failures.is_empty() {
        let mut appendix = failures.clone();
        appendix.sort();
        written.push(write("failures.txt", &(appendix.join("\n") + "\n"))?);
    }

    Ok(RunOutcome {
        manifest,
        manifest_fingerprint: manifest_fp,
        log,
        report,
        written,
        failures,
    })
}

/// Under self-sourced chains the record's reference reasoning is replaced
/// by the prepared (per-target) chain, so AER and WA_RR render from the
/// same transcript that AMR/ARR were derived from.
fn effective_problem<'a>(
    record: &'a ProblemRecord,
    prepared: Option<&PreparedChains>,
    source: ChainSource,
) -> std::borrow::Cow<'a, ProblemRecord> {
    match (source, prepared) {
        (ChainSource::SelfTranscript, Some(chains)) => {
            let mut clone = record.clone();
            clone.reference_reasoning = Some(chains.aer_chain.clone());
            std::borrow::Cow::Owned(clone)
        }
        _ => std::borrow::Cow::Borrowed(record),
    }
}
