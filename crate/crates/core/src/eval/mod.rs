//! Evaluation harness: run the pipeline over a dataset with bounded
//! parallelism, score answers, and aggregate a report.
//!
//! Individual question failures are recorded and the run continues. Under a
//! scripted mock and fixed seeds the whole report is deterministic: records
//! are sorted by question id before aggregation, and wall-clock timings are
//! kept out of the summary (they live in a separate timing report).

pub mod dataset;
pub mod scoring;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{load_dataset, load_tables, Example, Gold, TableStore, Task};
pub use scoring::{bucket_of, bucket_of_tokens, score_fv, score_qa, Bucket};

use crate::decompose::DecomposeTrace;
use crate::llm::{LlmClient, LlmSession, PromptLibrary, UsageLedger, UsageSnapshot};
use crate::pipeline::{answer_question, PipelineConfig, PipelineError};
use crate::qgppr::order_sensitive_for;
use crate::reasoner::ParseStatus;
use crate::table::{permute, Permutation};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("missing table: {0}")]
    MissingTable(String),
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Documented basis for every token number in the reports.
pub const TOKEN_BASIS_NOTE: &str =
    "provider-reported usage when available, otherwise ceil(chars/4)";

/// Harness settings on top of the per-question pipeline config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOptions {
    pub pipeline: PipelineConfig,
    /// Worker count for question-level parallelism (1 = sequential; ignored
    /// when the `parallel` feature is off).
    pub workers: usize,
    pub model: String,
    /// Decoding temperature; 0 (greedy) unless overridden per run.
    pub temperature: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            pipeline: PipelineConfig::default(),
            workers: 1,
            model: "default".to_string(),
            temperature: 0.0,
        }
    }
}

/// Table shuffling applied during permutation experiments.
#[derive(Debug, Clone, Copy)]
pub struct ShuffleSpec {
    pub seed: u64,
    pub cols_too: bool,
}

/// One per-question result line (JSON Lines in the output directory).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub table_id: String,
    pub question: String,
    pub task: String,
    pub mode: String,
    pub answer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold_answers: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<bool>,
    pub correct: bool,
    /// Pipeline-level failure (the question never produced an answer).
    pub failed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parse_status: Option<ParseStatus>,
    pub parse_miss: bool,
    pub path: Vec<String>,
    pub grounded_fraction: f64,
    pub order_sensitive: bool,
    pub shuffled: bool,
    pub bucket: Bucket,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub llm_calls: u64,
    pub llm_degraded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decompose: Option<DecomposeTrace>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub atg_build_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketStats {
    pub bucket: Bucket,
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenReport {
    pub input_total: u64,
    pub output_total: u64,
    pub input_mean_per_question: f64,
    pub output_mean_per_question: f64,
    pub basis: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedDeltas {
    pub seed: u64,
    pub row_only_delta: f64,
    pub row_and_col_delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PermutationReport {
    pub baseline_accuracy: f64,
    pub per_seed: Vec<SeedDeltas>,
    pub mean_row_only_delta: f64,
    pub mean_row_and_col_delta: f64,
}

/// The run summary. Serialization is deterministic under a scripted mock:
/// no wall-clock fields here (see [`TimingReport`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_size: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub failed: usize,
    pub accuracy: f64,
    pub parse_misses: usize,
    pub order_sensitive_count: usize,
    pub llm_degraded_count: usize,
    pub buckets: Vec<BucketStats>,
    pub tokens: TokenReport,
    pub grounded_fraction_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub permutation: Option<PermutationReport>,
    pub config: serde_json::Value,
}

/// Wall-clock measurements, reported separately from the summary so the
/// summary stays byte-identical across runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingReport {
    pub atg_build_mean_ms: f64,
    pub atg_build_max_ms: f64,
    pub wall_ms: f64,
}

fn failed_record(example: &Example, opts: &EvalOptions, error: String) -> QuestionRecord {
    let (gold_answers, gold_label) = split_gold(&example.gold);
    QuestionRecord {
        id: example.id.clone(),
        table_id: example.table_id.clone(),
        question: example.question.clone(),
        task: example.task.as_str().to_string(),
        mode: opts.pipeline.mode.as_str().to_string(),
        answer: String::new(),
        gold_answers,
        gold_label,
        correct: false,
        failed: true,
        parse_status: None,
        parse_miss: false,
        path: Vec::new(),
        grounded_fraction: 0.0,
        order_sensitive: false,
        shuffled: false,
        bucket: Bucket::Small,
        input_tokens: 0,
        output_tokens: 0,
        llm_calls: 0,
        llm_degraded: false,
        decompose: None,
        error: Some(error),
        atg_build_ms: 0.0,
    }
}

fn split_gold(gold: &Gold) -> (Option<Vec<String>>, Option<bool>) {
    match gold {
        Gold::Answers(a) => (Some(a.clone()), None),
        Gold::Label(l) => (None, Some(*l)),
    }
}

fn run_one(
    example: &Example,
    store: &TableStore,
    opts: &EvalOptions,
    llm: Option<&dyn LlmClient>,
    prompts: &PromptLibrary,
    ledger: &UsageLedger,
    shuffle: Option<&ShuffleSpec>,
) -> QuestionRecord {
    let Some(table) = store.get(&example.table_id) else {
        return failed_record(example, opts, format!("missing table {}", example.table_id));
    };
    let bucket = bucket_of(table);
    let order_sensitive = order_sensitive_for(
        &example.question,
        &opts.pipeline.ppr,
        opts.pipeline.order_triggers.as_deref(),
    );

    // Order-sensitive questions keep their tables unshuffled.
    let mut shuffled = false;
    let table = match shuffle {
        Some(spec) if !order_sensitive => {
            let perm = if spec.cols_too {
                Permutation::random_swap(table.row_count(), table.col_count(), spec.seed)
            } else {
                Permutation::random_swap_rows_only(table.row_count(), table.col_count(), spec.seed)
            };
            shuffled = true;
            permute(table, &perm).expect("permutation built from table dims")
        }
        _ => table.clone(),
    };

    let Some(client) = llm else {
        return failed_record(
            example,
            opts,
            "answer generation requires an llm (remote or mock)".to_string(),
        );
    };
    let session = LlmSession::new(
        client,
        prompts,
        opts.model.clone(),
        Some(ledger),
        &example.id,
    );

    match answer_question(&table, &example.question, &opts.pipeline, &session) {
        Ok(outcome) => {
            let parse_failed = outcome.result.parse_status == ParseStatus::Failed;
            let (correct, parse_miss) = match &example.gold {
                Gold::Answers(gold) => (score_qa(&outcome.result.answer, gold), parse_failed),
                Gold::Label(gold) => {
                    let fv = score_fv(&outcome.result.answer, *gold);
                    (fv.correct, parse_failed || !fv.mappable)
                }
            };
            let usage = ledger.question_totals(&example.id);
            let (gold_answers, gold_label) = split_gold(&example.gold);
            QuestionRecord {
                id: example.id.clone(),
                table_id: example.table_id.clone(),
                question: example.question.clone(),
                task: example.task.as_str().to_string(),
                mode: opts.pipeline.mode.as_str().to_string(),
                answer: outcome.result.answer.clone(),
                gold_answers,
                gold_label,
                correct,
                failed: false,
                parse_status: Some(outcome.result.parse_status),
                parse_miss,
                path: outcome.result.path.clone(),
                grounded_fraction: outcome.grounded_fraction,
                order_sensitive,
                shuffled,
                bucket,
                input_tokens: usage.input_tokens,
                output_tokens: usage.output_tokens,
                llm_calls: usage.calls,
                llm_degraded: outcome.keysets_degraded,
                decompose: outcome.decompose_trace,
                error: None,
                atg_build_ms: outcome.atg_build_ms,
            }
        }
        Err(err) => {
            let mut record = failed_record(example, opts, err.to_string());
            record.bucket = bucket;
            record.order_sensitive = order_sensitive;
            record.shuffled = shuffled;
            let usage = ledger.question_totals(&example.id);
            record.input_tokens = usage.input_tokens;
            record.output_tokens = usage.output_tokens;
            record.llm_calls = usage.calls;
            if matches!(err, PipelineError::Llm(_)) {
                record.parse_miss = false;
            }
            record
        }
    }
}

/// Evaluate every example not in `skip`. Records come back sorted by
/// question id. Parallel over questions when `workers > 1` and the
/// `parallel` feature is on.
pub fn run_eval(
    examples: &[Example],
    store: &TableStore,
    opts: &EvalOptions,
    llm: Option<&dyn LlmClient>,
    shuffle: Option<&ShuffleSpec>,
    skip: &BTreeSet<String>,
) -> (Vec<QuestionRecord>, UsageSnapshot) {
    run_eval_with_sink(examples, store, opts, llm, shuffle, skip, &|_| {})
}

/// [`run_eval`] with a sink invoked as each record completes (in completion
/// order, possibly from worker threads), so callers can persist progress
/// append-only and survive interruption.
pub fn run_eval_with_sink(
    examples: &[Example],
    store: &TableStore,
    opts: &EvalOptions,
    llm: Option<&dyn LlmClient>,
    shuffle: Option<&ShuffleSpec>,
    skip: &BTreeSet<String>,
    on_record: &(dyn Fn(&QuestionRecord) + Sync),
) -> (Vec<QuestionRecord>, UsageSnapshot) {
    let prompts = PromptLibrary::default();
    let ledger = UsageLedger::new();
    let todo: Vec<&Example> = examples.iter().filter(|e| !skip.contains(&e.id)).collect();

    let mut records = execute(
        &todo,
        |example| {
            let record = run_one(example, store, opts, llm, &prompts, &ledger, shuffle);
            on_record(&record);
            record
        },
        opts.workers,
    );

    records.sort_by(|a, b| a.id.cmp(&b.id));
    (records, ledger.snapshot())
}

#[cfg(feature = "parallel")]
fn execute<F>(todo: &[&Example], f: F, workers: usize) -> Vec<QuestionRecord>
where
    F: Fn(&Example) -> QuestionRecord + Sync,
{
    use rayon::prelude::*;
    if workers > 1 {
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => return pool.install(|| todo.par_iter().map(|e| f(e)).collect()),
            Err(err) => log::warn!("thread pool unavailable, running sequentially: {err}"),
        }
    }
    todo.iter().map(|e| f(e)).collect()
}

#[cfg(not(feature = "parallel"))]
fn execute<F>(todo: &[&Example], f: F, _workers: usize) -> Vec<QuestionRecord>
where
    F: Fn(&Example) -> QuestionRecord + Sync,
{
    todo.iter().map(|e| f(e)).collect()
}

/// Aggregate records into the summary and the timing sidecar.
pub fn build_report(
    records: &[QuestionRecord],
    config_snapshot: serde_json::Value,
    permutation: Option<PermutationReport>,
    wall_ms: f64,
) -> (EvalReport, TimingReport) {
    let size = records.len();
    let correct = records.iter().filter(|r| r.correct).count();
    let failed = records.iter().filter(|r| r.failed).count();
    let incorrect = size - correct - failed;
    let parse_misses = records.iter().filter(|r| r.parse_miss).count();
    let order_sensitive_count = records.iter().filter(|r| r.order_sensitive).count();
    let llm_degraded_count = records.iter().filter(|r| r.llm_degraded).count();

    let buckets = Bucket::ALL
        .iter()
        .map(|&bucket| {
            let in_bucket: Vec<&QuestionRecord> =
                records.iter().filter(|r| r.bucket == bucket).collect();
            let bucket_correct = in_bucket.iter().filter(|r| r.correct).count();
            BucketStats {
                bucket,
                count: in_bucket.len(),
                correct: bucket_correct,
                accuracy: ratio(bucket_correct, in_bucket.len()),
            }
        })
        .collect();

    let input_total: u64 = records.iter().map(|r| r.input_tokens).sum();
    let output_total: u64 = records.iter().map(|r| r.output_tokens).sum();

    let scored: Vec<&QuestionRecord> = records.iter().filter(|r| !r.failed).collect();
    let grounded_fraction_mean = if scored.is_empty() {
        0.0
    } else {
        scored.iter().map(|r| r.grounded_fraction).sum::<f64>() / scored.len() as f64
    };

    let report = EvalReport {
        dataset_size: size,
        correct,
        incorrect,
        failed,
        accuracy: ratio(correct, size),
        parse_misses,
        order_sensitive_count,
        llm_degraded_count,
        buckets,
        tokens: TokenReport {
            input_total,
            output_total,
            input_mean_per_question: ratio_u64(input_total, size),
            output_mean_per_question: ratio_u64(output_total, size),
            basis: TOKEN_BASIS_NOTE.to_string(),
        },
        grounded_fraction_mean,
        permutation,
        config: config_snapshot,
    };
    let timing = TimingReport {
        atg_build_mean_ms: if size == 0 {
            0.0
        } else {
            records.iter().map(|r| r.atg_build_ms).sum::<f64>() / size as f64
        },
        atg_build_max_ms: records.iter().map(|r| r.atg_build_ms).fold(0.0, f64::max),
        wall_ms,
    };
    (report, timing)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn ratio_u64(num: u64, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn accuracy_of(records: &[QuestionRecord]) -> f64 {
    ratio(records.iter().filter(|r| r.correct).count(), records.len())
}

/// Rerun the dataset under row-only and row-and-column shuffles for each
/// seed and report accuracy deltas against the unshuffled baseline
/// (negative delta = drop). Order-sensitive questions keep their original
/// tables in every run.
pub fn run_permutation_experiment(
    examples: &[Example],
    store: &TableStore,
    opts: &EvalOptions,
    llm: Option<&dyn LlmClient>,
    seeds: &[u64],
) -> PermutationReport {
    let empty = BTreeSet::new();
    let (baseline_records, _) = run_eval(examples, store, opts, llm, None, &empty);
    let baseline_accuracy = accuracy_of(&baseline_records);

    let mut per_seed = Vec::new();
    for &seed in seeds {
        let (row_records, _) = run_eval(
            examples,
            store,
            opts,
            llm,
            Some(&ShuffleSpec {
                seed,
                cols_too: false,
            }),
            &empty,
        );
        let (rowcol_records, _) = run_eval(
            examples,
            store,
            opts,
            llm,
            Some(&ShuffleSpec {
                seed,
                cols_too: true,
            }),
            &empty,
        );
        per_seed.push(SeedDeltas {
            seed,
            row_only_delta: accuracy_of(&row_records) - baseline_accuracy,
            row_and_col_delta: accuracy_of(&rowcol_records) - baseline_accuracy,
        });
    }
    let mean = |values: Vec<f64>| {
        if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        }
    };
    let mean_row_only_delta = mean(per_seed.iter().map(|d| d.row_only_delta).collect());
    let mean_row_and_col_delta = mean(per_seed.iter().map(|d| d.row_and_col_delta).collect());
    PermutationReport {
        baseline_accuracy,
        per_seed,
        mean_row_only_delta,
        mean_row_and_col_delta,
    }
}
