//! Command-line entry point.
//!
//! Exit statuses: 0 success; 1 usage error; 2 data validation failure;
//! 3 run completed with item failures; 4 infrastructure failure.
//! Diagnostics go to stderr, data to stdout or files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use anchor_probe::client::ClientError;
use anchor_probe::conditions::{ConditionTag, PromptCondition, WarningVariant};
use anchor_probe::config::{self, ConfigError, RunConfig};
use anchor_probe::dataset::{self, DatasetError};
use anchor_probe::engine::{self, EngineError};
use anchor_probe::masker::{self, NumeralLexicon};
use anchor_probe::mock::{self, MockProfile, MockServerOptions};
use anchor_probe::prompt::PromptFactory;
use anchor_probe::report::{emit_run_report, ReportFormat};
use anchor_probe::templates::TemplateSet;

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_PARTIAL: u8 = 3;
const EXIT_INFRA: u8 = 4;

#[derive(Parser)]
#[command(
    name = "anchor-probe",
    about = "Answer-visibility probing harness for chat-completion models",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset file and list per-record violations.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Render the prompt for one (problem, condition, warning) to stdout.
    Render(RenderArgs),
    /// Execute a full run from a config file.
    Run(RunArgs),
    /// Re-aggregate a verdict log into a report, offline.
    Report {
        #[arg(long)]
        verdicts: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: String,
    },
    /// Serve the deterministic mock model until interrupted.
    MockServe {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 8090)]
        port: u16,
    },
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    problem_id: String,
    #[arg(long)]
    condition: String,
    #[arg(long, default_value = "NONE")]
    warning: String,
    #[arg(long, default_value = "en")]
    template_lang: String,
    #[arg(long)]
    template_dir: Option<PathBuf>,
    #[arg(long)]
    numeral_lexicon: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Flag overrides for the matching config keys.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    cache_root: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    condition: Vec<String>,
    #[arg(long)]
    warning: Vec<String>,
    #[arg(long)]
    format: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Keep help/version on stdout with status 0; real usage
            // errors exit 1.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::from(EXIT_OK);
            }
            eprint!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };

    let status = match cli.command {
        Command::Validate { dataset } => cmd_validate(&dataset),
        Command::Render(args) => cmd_render(&args),
        Command::Run(args) => cmd_run(&args),
        Command::Report { verdicts, format } => cmd_report(&verdicts, &format),
        Command::MockServe {
            profile,
            dataset,
            port,
        } => cmd_mock_serve(&profile, &dataset, port),
    };
    ExitCode::from(status)
}

fn dataset_exit(e: &DatasetError) -> u8 {
    match e {
        DatasetError::Io { .. } => EXIT_INFRA,
        _ => EXIT_DATA,
    }
}

fn cmd_validate(dataset_path: &Path) -> u8 {
    match dataset::load_dataset_lenient(dataset_path) {
        Ok((records, issues)) if issues.is_empty() => {
            println!("{} records OK", records.len());
            EXIT_OK
        }
        Ok((_, issues)) => {
            for issue in &issues {
                eprintln!("{issue}");
            }
            eprintln!("{} invalid record(s)", issues.len());
            EXIT_DATA
        }
        Err(e) => {
            eprintln!("{e}");
            dataset_exit(&e)
        }
    }
}

fn cmd_render(args: &RenderArgs) -> u8 {
    let condition: ConditionTag = match args.condition.parse() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_USAGE;
        }
    };
    let warning: WarningVariant = match args.warning.parse() {
        Ok(w) => w,
        Err(e) => {
            eprintln!("{e}; valid warnings: NONE, SOFT, HARD");
            return EXIT_USAGE;
        }
    };
    let lexicon = match args.numeral_lexicon.as_deref() {
        None | Some("none") => None,
        Some("en") => Some(NumeralLexicon::En),
        Some("zh") => Some(NumeralLexicon::Zh),
        Some(other) => {
            eprintln!("unknown numeral lexicon {other:?}; valid: en, zh, none");
            return EXIT_USAGE;
        }
    };
    let templates = match &args.template_dir {
        Some(dir) => TemplateSet::from_dir(dir),
        None => TemplateSet::builtin(&args.template_lang),
    };
    let templates = match templates {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_USAGE;
        }
    };
    let records = match dataset::load_dataset(&args.dataset) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return dataset_exit(&e);
        }
    };
    let Some(record) = records.iter().find(|r| r.id == args.problem_id) else {
        eprintln!("problem {:?} not found in {}", args.problem_id, args.dataset.display());
        return EXIT_DATA;
    };

    let factory = PromptFactory::new(templates);
    let rendered = match condition {
        ConditionTag::Prompt(c) => {
            let variants = masker::expand_variants(
                &record.ground_truth_answer,
                &record.answer_variants,
                lexicon,
            );
            let (masked, pruned) = match record.reference_reasoning.as_deref() {
                Some(chain) if c.requires_chain() => {
                    let masked = match masker::mask(chain, &record.ground_truth_answer, &variants) {
                        Ok((m, _)) => m,
                        Err(e) => {
                            eprintln!("{e}");
                            return EXIT_DATA;
                        }
                    };
                    let pruned = masker::remove_answer_sentences(
                        chain,
                        &record.ground_truth_answer,
                        &variants,
                    );
                    (Some(masked), Some(pruned))
                }
                _ => (None, None),
            };
            factory.render(record, c, warning, masked.as_deref(), pruned.as_deref())
        }
        ConditionTag::Conflict(c) => factory.render_conflict(record, c),
    };
    match rendered {
        Ok(prompt) => {
            if prompt.mask_count > 0 {
                eprintln!("mask count: {}", prompt.mask_count);
            }
            println!("{}", prompt.text);
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{e}");
            EXIT_DATA
        }
    }
}

fn apply_overrides(config: &mut RunConfig, args: &RunArgs) -> Result<(), String> {
    if let Some(dataset) = &args.dataset {
        config.dataset = dataset.clone();
    }
    if let Some(cache_root) = &args.cache_root {
        config.cache_root = cache_root.clone();
    }
    if let Some(output_dir) = &args.output_dir {
        config.output_dir = output_dir.clone();
    }
    if let Some(parallelism) = args.parallelism {
        config.parallelism = parallelism;
    }
    if !args.condition.is_empty() {
        let mut conditions = Vec::new();
        for c in &args.condition {
            conditions.push(c.parse::<PromptCondition>().map_err(|e| e.to_string())?);
        }
        config.conditions = conditions;
    }
    if !args.warning.is_empty() {
        let mut warnings = Vec::new();
        for w in &args.warning {
            warnings.push(w.parse::<WarningVariant>().map_err(|e| e.to_string())?);
        }
        config.warnings = warnings;
    }
    if !args.format.is_empty() {
        let mut formats = Vec::new();
        for f in &args.format {
            formats.push(f.parse::<ReportFormat>()?);
        }
        config.report_formats = formats;
    }
    Ok(())
}

fn engine_exit(e: &EngineError) -> u8 {
    match e {
        EngineError::Dataset(d) => dataset_exit(d),
        EngineError::Plan(_) | EngineError::Template(_) => EXIT_USAGE,
        EngineError::Prompt(_)
        | EngineError::Masker(_)
        | EngineError::Metrics(_)
        | EngineError::MalformedLog { .. } => EXIT_DATA,
        EngineError::SelfChainMissing { .. } => EXIT_DATA,
        EngineError::Client(c) => match c {
            ClientError::InvalidRequest { .. } => EXIT_DATA,
            _ => EXIT_INFRA,
        },
        EngineError::Io(_) => EXIT_INFRA,
    }
}

fn cmd_run(args: &RunArgs) -> u8 {
    let mut config = match config::load_config(&args.config) {
        Ok(c) => c,
        Err(e @ ConfigError::Io { .. }) => {
            eprintln!("{e}");
            return EXIT_INFRA;
        }
        Err(e) => {
            eprintln!("{e}");
            return EXIT_USAGE;
        }
    };
    if let Err(msg) = apply_overrides(&mut config, args) {
        eprintln!("{msg}");
        return EXIT_USAGE;
    }

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("cannot start async runtime: {e}");
            return EXIT_INFRA;
        }
    };
    match runtime.block_on(engine::execute(&config)) {
        Ok(outcome) => {
            for path in &outcome.written {
                eprintln!("wrote {}", path.display());
            }
            if outcome.failures.is_empty() {
                eprintln!("run complete: {} verdicts", outcome.log.verdicts.len());
                EXIT_OK
            } else {
                eprintln!(
                    "run completed with {} item failure(s); see failures.txt",
                    outcome.failures.len()
                );
                EXIT_PARTIAL
            }
        }
        Err(e) => {
            eprintln!("{e}");
            engine_exit(&e)
        }
    }
}

fn cmd_report(verdicts: &Path, format: &str) -> u8 {
    let format: ReportFormat = match format.parse() {
        Ok(f) => f,
        Err(msg) => {
            eprintln!("{msg}");
            return EXIT_USAGE;
        }
    };
    let raw = match std::fs::read_to_string(verdicts) {
        Ok(raw) => raw,
        Err(e) => {
            eprintln!("cannot read {}: {e}", verdicts.display());
            return EXIT_INFRA;
        }
    };
    if raw.trim().is_empty() {
        eprintln!("verdict log {} is empty", verdicts.display());
        return EXIT_DATA;
    }
    let log = match engine::VerdictLog::parse(&raw) {
        Ok(log) => log,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_DATA;
        }
    };
    match engine::build_report(&log) {
        Ok(report) => {
            print!("{}", emit_run_report(&report, format));
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{e}");
            EXIT_DATA
        }
    }
}

fn cmd_mock_serve(profile_path: &Path, dataset_path: &Path, port: u16) -> u8 {
    let raw = match std::fs::read_to_string(profile_path) {
        Ok(raw) => raw,
        Err(e) => {
            eprintln!("cannot read {}: {e}", profile_path.display());
            return EXIT_INFRA;
        }
    };
    let profile: MockProfile = match serde_json::from_str(&raw) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("invalid mock profile: {e}");
            return EXIT_DATA;
        }
    };
    if let Err(e) = profile.validate() {
        eprintln!("{e}");
        return EXIT_DATA;
    }
    let records = match dataset::load_dataset(dataset_path) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return dataset_exit(&e);
        }
    };
    let problems: Vec<(String, String)> = records
        .iter()
        .map(|r| (r.id.clone(), r.ground_truth_answer.clone()))
        .collect();
    let model = match mock::MockModel::new(profile, &problems) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_DATA;
        }
    };

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("cannot start async runtime: {e}");
            return EXIT_INFRA;
        }
    };
    runtime.block_on(async move {
        let handle = match mock::serve(model, port, MockServerOptions::default()).await {
            Ok(h) => h,
            Err(e) => {
                eprintln!("{e}");
                return EXIT_INFRA;
            }
        };
        eprintln!("mock server listening on {}", handle.addr);
        match tokio::signal::ctrl_c().await {
            Ok(()) => {
                eprintln!("shutting down");
                EXIT_OK
            }
            Err(e) => {
                eprintln!("signal handling failed: {e}");
                EXIT_INFRA
            }
        }
    })
}
