//! End-to-end pipeline coverage beyond the acceptance gate: conflicts,
//! warnings, citation measurement, self-sourced chains, and the
//! LLM-backed masking path, all against the deterministic mock.

mod common;

use anchor_probe::client::{Client, ClientOptions};
use anchor_probe::conditions::WarningVariant;
use anchor_probe::engine::{self, EngineError};
use anchor_probe::masker;
use anchor_probe::mock::{self, MockModel, MockServerOptions};
use anchor_probe::target::ModelTarget;
use anchor_probe::templates::TemplateSet;

fn tolerance(n: usize) -> f64 {
    1.0 / n as f64 + 1e-12
}

#[tokio::test(flavor = "multi_thread")]
async fn conflicts_warnings_and_citations_flow_through() {
    let work = tempfile::tempdir().unwrap();
    let n = 40;
    let records = common::synthetic_records(n, true);
    let dataset = common::write_dataset(work.path(), &records);

    let mut profile = common::deepseek_profile(29);
    for (tag, rate) in [
        ("RA_WR", 0.5253),
        ("WA_RR", 0.3924),
        ("WA_WR", 0.0696),
        ("SOFT", 0.75),
        ("HARD", 0.513),
    ] {
        profile.rates.insert(tag.to_string(), rate);
    }
    profile.citation_rate = 0.5;

    let model = MockModel::new(profile.clone(), &common::problems_for_mock(&records)).unwrap();
    let server = mock::serve(model, 0, MockServerOptions::default())
        .await
        .unwrap();

    let mut config = common::mock_run_config(dataset, &server.endpoint(), work.path());
    config.conflicts = true;
    config.warnings = vec![WarningVariant::Soft, WarningVariant::Hard];
    let outcome = engine::execute(&config).await.expect("run completes");
    assert!(outcome.failures.is_empty(), "failures: {:?}", outcome.failures);

    // Conflict columns (order WA_WR, WA_RR, RA_WR) within ±1/n.
    let conflicts = outcome.report.conflicts.as_ref().expect("conflict table");
    let expected = [0.0696, 0.3924, 0.5253];
    for (col, expected) in conflicts.columns.iter().zip(expected) {
        let avg = col.avg.unwrap();
        assert!(
            (avg - expected).abs() <= tolerance(n),
            "{}: avg {avg:.4} vs profile {expected}",
            col.condition
        );
    }

    // Warned-AE accuracies and deltas.
    let warnings = outcome.report.warnings.as_ref().expect("warning rows");
    assert_eq!(warnings.rows.len(), 1);
    let row = &warnings.rows[0];
    assert!((row.soft.unwrap() - 0.75).abs() <= tolerance(n));
    assert!((row.hard.unwrap() - 0.513).abs() <= tolerance(n));
    assert!((row.soft_delta.unwrap() - (row.soft.unwrap() - row.ae)).abs() < 1e-12);
    assert!(row.hard_delta.unwrap() < 0.0, "hard warning should cost accuracy");

    // Citation rate over all AE responses: ⌊0.5 × ⌊0.9304 × 40⌋⌋ = 18 of 40.
    let citations = outcome.report.citations.as_ref().expect("citation rows");
    assert_eq!(citations.rows.len(), 1);
    assert_eq!(citations.rows[0].n, n);
    let expected_cited = 18.0 / 40.0;
    assert!((citations.rows[0].rate - expected_cited).abs() < 1e-12);
    assert!((citations.avg_rate - expected_cited).abs() < 1e-12);

    // The manifest schedules every combination it ran.
    for tag in ["AE", "AER", "AMR", "ARR", "AF", "AE+SOFT", "AE+HARD", "RA_WR", "WA_RR", "WA_WR"] {
        assert!(
            outcome.manifest.conditions.iter().any(|c| c == tag),
            "manifest missing {tag}"
        );
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn self_sourced_chains_require_a_prior_ae_run() {
    let work = tempfile::tempdir().unwrap();
    let records = common::synthetic_records(6, false);
    let dataset = common::write_dataset(work.path(), &records);

    let profile = common::deepseek_profile(17);
    let model = MockModel::new(profile, &common::problems_for_mock(&records)).unwrap();
    let server = mock::serve(model, 0, MockServerOptions::default())
        .await
        .unwrap();

    let mut config = common::mock_run_config(dataset, &server.endpoint(), work.path());
    config.chain_source = serde_json::from_value(serde_json::json!("self")).unwrap();

    // Cold cache: the run must point at the missing AE transcripts.
    let err = engine::execute(&config).await.expect_err("cold self-chains fail");
    assert!(matches!(err, EngineError::SelfChainMissing { .. }));
    assert!(err.to_string().contains("run the AE condition first"));

    // Seed the cache with an AE-only run, then the full grid works.
    let mut ae_only = config.clone();
    ae_only.conditions = vec![anchor_probe::PromptCondition::Ae];
    ae_only.chain_source = Default::default();
    engine::execute(&ae_only).await.expect("AE seeding run");

    let outcome = engine::execute(&config).await.expect("self-chain run");
    assert!(outcome.failures.is_empty());
    let table = outcome.report.main.as_ref().unwrap();
    assert!(table.rows[0].cells.iter().all(|c| c.is_some()));
    assert_eq!(outcome.manifest.chain_source, "self");
}

#[tokio::test(flavor = "multi_thread")]
async fn llm_masking_path_verifies_and_falls_back() {
    let work = tempfile::tempdir().unwrap();
    let records = common::synthetic_records(4, false);

    let profile = common::deepseek_profile(23);
    let model = MockModel::new(profile, &common::problems_for_mock(&records)).unwrap();
    let server = mock::serve(model, 0, MockServerOptions::default())
        .await
        .unwrap();
    let client = Client::new(work.path().join("cache"), ClientOptions::default());
    let masker_target = common::mock_target("mock-judge", &server.endpoint(), "mock-judge", false);
    let templates = TemplateSet::builtin_en();

    // The mock masks exactly the answer string, so verification passes
    // and the model output is used verbatim.
    let chain = "The analysis is stable. The count settles at vtoken000. Done.";
    let variants = vec!["vtoken000".to_string()];
    let outcome = masker::llm_mask(chain, "vtoken000", &variants, &client, &masker_target, &templates)
        .await
        .unwrap();
    assert!(!outcome.fell_back);
    assert!(outcome.text.contains(masker::MASK_TOKEN));
    assert!(!outcome.text.contains("vtoken000"));

    // A registered variant the server does not know about survives its
    // masking, verification fails, and the deterministic path takes over.
    let chain = "The tally is forty beads. The count settles at vtoken000.";
    let variants = vec!["vtoken000".to_string(), "forty beads".to_string()];
    let outcome = masker::llm_mask(chain, "vtoken000", &variants, &client, &masker_target, &templates)
        .await
        .unwrap();
    assert!(outcome.fell_back);
    assert!(!outcome.text.contains("forty beads"));
    assert!(!outcome.text.contains("vtoken000"));
}

#[tokio::test(flavor = "multi_thread")]
async fn llm_masker_fallbacks_are_recorded_in_the_manifest() {
    let work = tempfile::tempdir().unwrap();
    let mut records = common::synthetic_records(3, false);
    // One problem registers a paraphrase variant the mock masker misses.
    records[1].answer_variants.push("the stable count".to_string());
    records[1].reference_reasoning = Some(format!(
        "Observers call it the stable count. It equals {}.",
        records[1].ground_truth_answer
    ));
    let dataset = common::write_dataset(work.path(), &records);

    let profile = common::deepseek_profile(31);
    let model = MockModel::new(profile, &common::problems_for_mock(&records)).unwrap();
    let server = mock::serve(model, 0, MockServerOptions::default())
        .await
        .unwrap();

    let mut config = common::mock_run_config(dataset, &server.endpoint(), work.path());
    config.use_llm_masker = true;
    let outcome = engine::execute(&config).await.expect("run completes");
    assert!(outcome.failures.is_empty());
    assert_eq!(outcome.manifest.flags.llm_mask_fallback, vec!["p001".to_string()]);
}

#[tokio::test(flavor = "multi_thread")]
async fn offline_target_rows_stay_unavailable_and_failures_are_listed() {
    let work = tempfile::tempdir().unwrap();
    let records = common::synthetic_records(4, false);
    let dataset = common::write_dataset(work.path(), &records);

    let profile = common::deepseek_profile(41);
    let model = MockModel::new(profile, &common::problems_for_mock(&records)).unwrap();
    let server = mock::serve(model, 0, MockServerOptions::default())
        .await
        .unwrap();

    let mut config = common::mock_run_config(dataset, &server.endpoint(), work.path());
    // Second target points at a dead endpoint.
    let mut offline = ModelTarget::new("offline", "http://127.0.0.1:9", "dead");
    offline.trace_visible = true;
    offline.mock = true;
    config.targets.push(offline);

    let outcome = engine::execute_with(
        &config,
        ClientOptions {
            max_attempts: 2,
            backoff_base: std::time::Duration::from_millis(5),
            request_timeout: std::time::Duration::from_secs(2),
            ..ClientOptions::default()
        },
    )
    .await
    .expect("run completes despite the dead target");
    assert!(!outcome.failures.is_empty());
    assert!(outcome
        .written
        .iter()
        .any(|p| p.file_name().is_some_and(|f| f == "failures.txt")));

    let table = outcome.report.main.as_ref().unwrap();
    let offline_row = table
        .rows
        .iter()
        .find(|r| r.model_name == "offline")
        .expect("offline row present");
    assert!(offline_row.cells.iter().all(|c| c.is_none()));
    let live_row = table.rows.iter().find(|r| r.model_name == "mock-model").unwrap();
    assert!(live_row.cells.iter().all(|c| c.is_some()));
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_provider_body_names_the_fingerprint() {
    use anchor_probe::client::{fingerprint, ClientError, CompletionRequest};

    let work = tempfile::tempdir().unwrap();
    let records = common::synthetic_records(1, false);
    let profile = common::deepseek_profile(37);
    let model = MockModel::new(profile, &common::problems_for_mock(&records)).unwrap();
    let server = mock::serve(
        model,
        0,
        MockServerOptions {
            malformed_body: true,
            ..Default::default()
        },
    )
    .await
    .unwrap();

    let client = Client::new(work.path().join("cache"), ClientOptions::default());
    let target = common::mock_target("mock-model", &server.endpoint(), "mock-model", true);
    let request = CompletionRequest::new(
        target,
        mock::append_model_meta("solve", "p000", "AE"),
    );
    let fp = fingerprint(&request);
    let err = client.complete(&request).await.expect_err("parse must fail");
    match err {
        ClientError::Parse { fingerprint, .. } => assert_eq!(fingerprint, fp),
        other => panic!("expected a parse error, got {other}"),
    }
    // Nothing gets cached for a response that never parsed.
    assert_eq!(client.cache().record_count(), 0);
}

#[tokio::test(flavor = "multi_thread")]
async fn empty_pruned_chains_are_flagged() {
    let work = tempfile::tempdir().unwrap();
    let mut records = common::synthetic_records(2, false);
    // A chain that is one answer-bearing sentence prunes to nothing.
    records[0].reference_reasoning =
        Some(format!("The answer is {}.", records[0].ground_truth_answer));
    let dataset = common::write_dataset(work.path(), &records);

    let profile = common::deepseek_profile(43);
    let model = MockModel::new(profile, &common::problems_for_mock(&records)).unwrap();
    let server = mock::serve(model, 0, MockServerOptions::default())
        .await
        .unwrap();

    let config = common::mock_run_config(dataset, &server.endpoint(), work.path());
    let outcome = engine::execute(&config).await.expect("run completes");
    assert_eq!(outcome.manifest.flags.empty_pruned_chain, vec!["p000".to_string()]);
    // The ARR prompt for the flagged problem still renders (empty block).
    assert!(outcome.failures.is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn statement_containing_answer_is_flagged_not_redacted() {
    let work = tempfile::tempdir().unwrap();
    let mut records = common::synthetic_records(2, false);
    records[1].statement = format!(
        "Everyone says the tally is {}. Is that still true after the change?",
        records[1].ground_truth_answer
    );
    let dataset = common::write_dataset(work.path(), &records);

    let profile = common::deepseek_profile(47);
    let model = MockModel::new(profile, &common::problems_for_mock(&records)).unwrap();
    let server = mock::serve(model, 0, MockServerOptions::default())
        .await
        .unwrap();

    let config = common::mock_run_config(dataset, &server.endpoint(), work.path());
    let outcome = engine::execute(&config).await.expect("run completes");
    assert_eq!(
        outcome.manifest.flags.statement_contains_answer,
        vec!["p001".to_string()]
    );

    // AF keeps the statement byte-identical: no self-redaction.
    let statement = &records[1].statement;
    let cache = Client::new(work.path().join("cache"), ClientOptions::default());
    let _ = cache; // cache inspected indirectly: render again and compare
    let factory = anchor_probe::PromptFactory::new(TemplateSet::builtin_en());
    let rendered = factory
        .render(
            &records[1],
            anchor_probe::PromptCondition::Af,
            WarningVariant::None,
            None,
            None,
        )
        .unwrap();
    assert!(rendered.text.contains(statement));
}
