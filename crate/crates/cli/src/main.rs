//! `tabgr` — graph-based table reasoning runner.
//!
//! Subcommands: `build-graph` (graph statistics and exports), `score`
//! (salience-ranked triples for one question), `answer` (full pipeline for
//! one question), `eval` (dataset run with reports), and `shuffle-eval`
//! (permutation robustness experiment).
//!
//! Exit codes: 0 success, 2 input error, 3 external-service error,
//! 4 config error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Overrides;
use tabgr_core::pipeline::PipelineError;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    External(String),
    Config(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::External(_) => 3,
            CliError::Config(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::External(m) | CliError::Config(m) => m,
        }
    }
}

pub(crate) fn map_pipeline_error(err: PipelineError) -> CliError {
    match err {
        PipelineError::Llm(e) => CliError::External(e.to_string()),
        PipelineError::Decompose(e) => CliError::External(e.to_string()),
        PipelineError::Qgppr(e) => CliError::Config(e.to_string()),
        PipelineError::EmptyEvidence => CliError::Input(err.to_string()),
    }
}

#[derive(Parser)]
#[command(name = "tabgr", version, about = "Graph-based table reasoning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the attributed table graph and print its statistics.
    BuildGraph {
        /// Table record file (JSON or JSON Lines).
        #[arg(long)]
        table: PathBuf,
        /// Pick one table from a multi-table file.
        #[arg(long)]
        table_id: Option<String>,
        /// Write the one-line-per-edge debug dump here.
        #[arg(long)]
        export_edges: Option<PathBuf>,
        /// Write the triple list as JSON here.
        #[arg(long)]
        export_json: Option<PathBuf>,
    },
    /// Rank a table's triples against a question and print the salience.
    Score {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        table_id: Option<String>,
        #[arg(long)]
        question: String,
        /// Key sets from exact matching only; no LLM calls.
        #[arg(long)]
        no_llm: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Answer one question over one table and print the result record.
    Answer {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        table_id: Option<String>,
        #[arg(long)]
        question: String,
        /// Gold answer to score against.
        #[arg(long)]
        gold: Option<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a dataset and write summary.json / per_question.jsonl / timings.json.
    Eval {
        /// Skip question ids already present in per_question.jsonl.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Permutation robustness: rerun under row and row+column shuffles.
    ShuffleEval {
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::BuildGraph {
            table,
            table_id,
            export_edges,
            export_json,
        } => commands::cmd_build_graph(
            &table,
            table_id.as_deref(),
            export_edges.as_deref(),
            export_json.as_deref(),
        ),
        Command::Score {
            table,
            table_id,
            question,
            no_llm,
            overrides,
        } => {
            let config = config::resolve(&overrides)?;
            commands::cmd_score(&config, &table, table_id.as_deref(), &question, no_llm)
        }
        Command::Answer {
            table,
            table_id,
            question,
            gold,
            overrides,
        } => {
            let config = config::resolve(&overrides)?;
            commands::cmd_answer(
                &config,
                &table,
                table_id.as_deref(),
                &question,
                gold.as_deref(),
            )
        }
        Command::Eval { resume, overrides } => {
            let config = config::resolve(&overrides)?;
            commands::cmd_eval(&config, resume)
        }
        Command::ShuffleEval { overrides } => {
            let config = config::resolve(&overrides)?;
            commands::cmd_shuffle_eval(&config)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}
