//! Command implementations.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use tabgr_core::atg::build_atg;
use tabgr_core::eval::{
    build_report, load_dataset, run_eval, run_permutation_experiment, EvalOptions, QuestionRecord,
};
use tabgr_core::llm::{
    LlmClient, LlmSession, MockLlmClient, PromptLibrary, RemoteLlmClient, UsageLedger,
};
use tabgr_core::pipeline::{answer_question, score_question, Mode};
use tabgr_core::reasoner::ParseStatus;
use tabgr_core::table::{parse_table, Table, TableRecord};
use tabgr_core::{eval::score_qa, render_triple};

use crate::config::{write_provenance, RunConfig};
use crate::CliError;

/// Load a table from a file holding one JSON record or JSON Lines. With a
/// `table_id` the matching record is picked, otherwise the first one.
pub fn load_table_file(path: &Path, table_id: Option<&str>) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut first_error = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<TableRecord>(line) {
            Ok(record) => {
                if table_id.is_none() || table_id == Some(record.id.as_str()) {
                    return parse_table(&record)
                        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())));
                }
            }
            Err(e) => first_error = Some(e.to_string()),
        }
    }
    // Maybe the whole file is one pretty-printed record.
    if let Ok(record) = serde_json::from_str::<TableRecord>(&text) {
        if table_id.is_none() || table_id == Some(record.id.as_str()) {
            return parse_table(&record)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())));
        }
    }
    Err(CliError::Input(match (table_id, first_error) {
        (Some(id), _) => format!("{}: no table with id {id:?}", path.display()),
        (None, Some(err)) => format!("{}: {err}", path.display()),
        (None, None) => format!("{}: no table records", path.display()),
    }))
}

fn build_client(config: &RunConfig) -> Result<Option<Box<dyn LlmClient>>, CliError> {
    if let Some(script) = &config.mock_script {
        let mock = MockLlmClient::from_file(script)
            .map_err(|e| CliError::Input(format!("mock script: {e}")))?;
        return Ok(Some(Box::new(mock)));
    }
    if let Some(base_url) = &config.llm_base_url {
        let remote = RemoteLlmClient::new(base_url.clone(), None)
            .map_err(|e| CliError::External(e.to_string()))?;
        return Ok(Some(Box::new(remote)));
    }
    Ok(None)
}

fn require_client(
    config: &RunConfig,
    no_llm: bool,
) -> Result<Option<Box<dyn LlmClient>>, CliError> {
    if no_llm {
        if config.mode == Mode::Decomposed {
            return Err(CliError::Config(
                "decomposed mode requires an llm (remote or mock)".to_string(),
            ));
        }
        return Ok(None);
    }
    let client = build_client(config)?;
    if client.is_none() && config.mode == Mode::Decomposed {
        return Err(CliError::Config(
            "decomposed mode requires an llm (remote or mock)".to_string(),
        ));
    }
    Ok(client)
}

pub fn cmd_build_graph(
    table_path: &Path,
    table_id: Option<&str>,
    export_edges: Option<&Path>,
    export_json: Option<&Path>,
) -> Result<(), CliError> {
    let table = load_table_file(table_path, table_id)?;
    let start = Instant::now();
    let graph = build_atg(&table);
    let build_ms = start.elapsed().as_secs_f64() * 1000.0;
    println!(
        "nodes={} edges={} triples={} build_ms={build_ms:.3}",
        graph.nodes().len(),
        graph.edges().len(),
        graph.triples().len()
    );
    if let Some(path) = export_edges {
        std::fs::write(path, graph.export_edges_text())
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    if let Some(path) = export_json {
        std::fs::write(path, graph.triples_json())
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

pub fn cmd_score(
    config: &RunConfig,
    table_path: &Path,
    table_id: Option<&str>,
    question: &str,
    no_llm: bool,
) -> Result<(), CliError> {
    let table = load_table_file(table_path, table_id)?;
    let client = require_client(config, no_llm)?;
    let prompts = PromptLibrary::default();
    let ledger = UsageLedger::new();
    let session = client.as_ref().map(|c| {
        LlmSession::new(
            c.as_ref(),
            &prompts,
            config.llm_model.clone(),
            Some(&ledger),
            "cli-score",
        )
        .with_temperature(config.llm_temperature)
    });
    let scored = score_question(
        &table,
        question,
        &config.pipeline_config(),
        session.as_ref(),
    )
    .map_err(crate::map_pipeline_error)?;
    println!(
        "# mode={} order_sensitive={} llm_degraded={} evidence={}",
        config.mode.as_str(),
        scored.order_sensitive,
        scored.keysets_degraded,
        scored.evidence.len()
    );
    // Scores follow the evidence (id) order; re-associate for the ranked view.
    let score_of: std::collections::HashMap<usize, f64> = scored
        .evidence
        .iter()
        .zip(&scored.salience.scores)
        .map(|(t, &s)| (t.id, s))
        .collect();
    for (position, triple) in scored.ranked.iter().enumerate() {
        println!(
            "{}\t{:.6e}\t{}",
            position + 1,
            score_of[&triple.id],
            render_triple(triple)
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct AnswerRecord {
    question: String,
    mode: String,
    answer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    gold: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    correct: Option<bool>,
    parse_status: ParseStatus,
    path: Vec<String>,
    grounded_fraction: f64,
    order_sensitive: bool,
    input_tokens: u64,
    output_tokens: u64,
    llm_calls: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    decompose: Option<tabgr_core::decompose::DecomposeTrace>,
    atg_build_ms: f64,
}

pub fn cmd_answer(
    config: &RunConfig,
    table_path: &Path,
    table_id: Option<&str>,
    question: &str,
    gold: Option<&str>,
) -> Result<(), CliError> {
    let table = load_table_file(table_path, table_id)?;
    let client = require_client(config, false)?.ok_or_else(|| {
        CliError::Config("answer generation requires an llm (remote or mock)".to_string())
    })?;
    let prompts = PromptLibrary::default();
    let ledger = UsageLedger::new();
    let session = LlmSession::new(
        client.as_ref(),
        &prompts,
        config.llm_model.clone(),
        Some(&ledger),
        "cli-answer",
    )
    .with_temperature(config.llm_temperature);
    let outcome = answer_question(&table, question, &config.pipeline_config(), &session)
        .map_err(crate::map_pipeline_error)?;
    let usage = ledger.question_totals("cli-answer");
    let record = AnswerRecord {
        question: question.to_string(),
        mode: config.mode.as_str().to_string(),
        answer: outcome.result.answer.clone(),
        gold: gold.map(str::to_string),
        correct: gold.map(|g| score_qa(&outcome.result.answer, &[g.to_string()])),
        parse_status: outcome.result.parse_status,
        path: outcome.result.path.clone(),
        grounded_fraction: outcome.grounded_fraction,
        order_sensitive: outcome.order_sensitive,
        input_tokens: usage.input_tokens,
        output_tokens: usage.output_tokens,
        llm_calls: usage.calls,
        decompose: outcome.decompose_trace,
        atg_build_ms: outcome.atg_build_ms,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&record).map_err(|e| CliError::Input(e.to_string()))?
    );
    Ok(())
}

fn read_existing_records(path: &Path) -> Result<Vec<QuestionRecord>, CliError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let record: QuestionRecord = serde_json::from_str(line)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        records.push(record);
    }
    Ok(records)
}

fn append_records(path: &Path, records: &[QuestionRecord]) -> Result<(), CliError> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| CliError::Input(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| CliError::Input(e.to_string()))?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_eval_inputs(
    config: &RunConfig,
) -> Result<(Vec<tabgr_core::eval::Example>, tabgr_core::eval::TableStore), CliError> {
    let dataset = config
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::Config("eval requires a dataset path".to_string()))?;
    let tables = config
        .tables
        .as_ref()
        .ok_or_else(|| CliError::Config("eval requires a tables path".to_string()))?;
    load_dataset(dataset, tables, config.task).map_err(|e| CliError::Input(e.to_string()))
}

fn eval_options(config: &RunConfig) -> EvalOptions {
    EvalOptions {
        pipeline: config.pipeline_config(),
        workers: config.workers,
        model: config.llm_model.clone(),
        temperature: config.llm_temperature,
    }
}

pub fn cmd_eval(config: &RunConfig, resume: bool) -> Result<(), CliError> {
    let started = Instant::now();
    let (examples, store) = load_eval_inputs(config)?;
    let client = require_client(config, false)?;
    std::fs::create_dir_all(&config.out)
        .map_err(|e| CliError::Input(format!("{}: {e}", config.out.display())))?;
    write_provenance(config, &config.out)?;

    let records_path = config.out.join("per_question.jsonl");
    let existing = if resume {
        read_existing_records(&records_path)?
    } else {
        if records_path.exists() {
            std::fs::remove_file(&records_path)
                .map_err(|e| CliError::Input(format!("{}: {e}", records_path.display())))?;
        }
        Vec::new()
    };
    let skip: BTreeSet<String> = existing.iter().map(|r| r.id.clone()).collect();

    // Stream records to disk as they finish so an interrupted run can be
    // resumed from whatever made it out.
    let sink_file = std::sync::Mutex::new(
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&records_path)
            .map_err(|e| CliError::Input(format!("{}: {e}", records_path.display())))?,
    );
    let (new_records, _usage) = tabgr_core::eval::run_eval_with_sink(
        &examples,
        &store,
        &eval_options(config),
        client.as_deref(),
        None,
        &skip,
        &|record| {
            if let (Ok(mut file), Ok(line)) = (sink_file.lock(), serde_json::to_string(record)) {
                let _ = writeln!(file, "{line}");
            }
        },
    );

    let mut all_records = existing;
    all_records.extend(new_records);
    all_records.sort_by(|a, b| a.id.cmp(&b.id));

    let wall_ms = started.elapsed().as_secs_f64() * 1000.0;
    let (report, timing) = build_report(&all_records, config.snapshot(), None, wall_ms);
    write_json(&config.out.join("summary.json"), &report)?;
    write_json(&config.out.join("timings.json"), &timing)?;
    println!(
        "questions={} correct={} incorrect={} failed={} accuracy={:.4} parse_misses={}",
        report.dataset_size,
        report.correct,
        report.incorrect,
        report.failed,
        report.accuracy,
        report.parse_misses
    );
    Ok(())
}

pub fn cmd_shuffle_eval(config: &RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let (examples, store) = load_eval_inputs(config)?;
    let client = require_client(config, false)?;
    std::fs::create_dir_all(&config.out)
        .map_err(|e| CliError::Input(format!("{}: {e}", config.out.display())))?;
    write_provenance(config, &config.out)?;

    if config.seeds.is_empty() {
        return Err(CliError::Config(
            "shuffle-eval requires at least one seed".to_string(),
        ));
    }
    let opts = eval_options(config);
    let permutation =
        run_permutation_experiment(&examples, &store, &opts, client.as_deref(), &config.seeds);

    // Baseline records for the report body.
    let (baseline_records, _) = run_eval(
        &examples,
        &store,
        &opts,
        client.as_deref(),
        None,
        &BTreeSet::new(),
    );
    let records_path = config.out.join("per_question.jsonl");
    if records_path.exists() {
        std::fs::remove_file(&records_path)
            .map_err(|e| CliError::Input(format!("{}: {e}", records_path.display())))?;
    }
    append_records(&records_path, &baseline_records)?;

    let wall_ms = started.elapsed().as_secs_f64() * 1000.0;
    let (report, timing) = build_report(
        &baseline_records,
        config.snapshot(),
        Some(permutation.clone()),
        wall_ms,
    );
    write_json(&config.out.join("summary.json"), &report)?;
    write_json(&config.out.join("timings.json"), &timing)?;
    for seed in &permutation.per_seed {
        println!(
            "seed={} row_only_delta={:+.4} row_and_col_delta={:+.4}",
            seed.seed, seed.row_only_delta, seed.row_and_col_delta
        );
    }
    println!(
        "baseline_accuracy={:.4} mean_row_only_delta={:+.4} mean_row_and_col_delta={:+.4}",
        permutation.baseline_accuracy,
        permutation.mean_row_only_delta,
        permutation.mean_row_and_col_delta
    );
    Ok(())
}
