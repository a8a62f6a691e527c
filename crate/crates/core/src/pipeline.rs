//! Per-question orchestration: graph construction, key-set building,
//! salience scoring, reranking, and answer generation, in full-graph or
//! decomposed mode.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atg::{build_atg, AtgGraph, Triple};
use crate::decompose::{decompose, DecomposeError, DecomposeTrace, DEFAULT_MAX_ROUNDS};
use crate::llm::{LlmError, LlmSession};
use crate::qgppr::{
    build_personalization, build_propagation, exact_match_headers, exact_match_values,
    order_sensitive_for, rank, run_qgppr, KeySets, PprConfig, QgpprError, SalienceVector,
};
use crate::reasoner::{generate_answer, grounded_fraction, validate_path, ReasoningResult};
use crate::table::{forward_fill, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Full,
    Decomposed,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Decomposed => "decomposed",
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Qgppr(#[from] QgpprError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error("no evidence triples to reason over")]
    EmptyEvidence,
}

/// Settings shared by all per-question runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub ppr: PprConfig,
    /// Let the column-selection reply also nominate cell values for the key
    /// sets (off by default: columns from the LLM, values from exact match).
    pub llm_value_selection: bool,
    /// Fall back to the full graph when decomposition produces no triples.
    pub full_graph_fallback: bool,
    /// Override of the order-sensitivity trigger list.
    pub order_triggers: Option<Vec<String>>,
    /// Columns to forward-fill before any processing (hierarchical tables).
    pub forward_fill_cols: Vec<usize>,
    pub max_rounds: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: Mode::Full,
            ppr: PprConfig::full_graph(),
            llm_value_selection: false,
            full_graph_fallback: false,
            order_triggers: None,
            forward_fill_cols: Vec::new(),
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }
}

impl PipelineConfig {
    /// Default config for a mode, with the mode's teleport/propagation
    /// defaults.
    pub fn for_mode(mode: Mode) -> Self {
        PipelineConfig {
            mode,
            ppr: match mode {
                Mode::Full => PprConfig::full_graph(),
                Mode::Decomposed => PprConfig::decomposed(),
            },
            ..PipelineConfig::default()
        }
    }
}

/// Evidence selection and scoring for one question (everything up to but
/// not including answer generation).
#[derive(Debug)]
pub struct ScoredEvidence {
    pub graph: AtgGraph,
    /// The triples that were scored, in id order.
    pub evidence: Vec<Triple>,
    pub salience: SalienceVector,
    /// Evidence reranked for the prompt (or in original order for
    /// order-sensitive questions).
    pub ranked: Vec<Triple>,
    pub key_sets: KeySets,
    pub order_sensitive: bool,
    pub keysets_degraded: bool,
    pub decompose_trace: Option<DecomposeTrace>,
    pub atg_build_ms: f64,
}

/// Full per-question outcome.
#[derive(Debug)]
pub struct QuestionOutcome {
    pub result: ReasoningResult,
    pub grounded_fraction: f64,
    pub order_sensitive: bool,
    pub keysets_degraded: bool,
    pub decompose_trace: Option<DecomposeTrace>,
    pub atg_build_ms: f64,
}

/// Run evidence selection and salience scoring for a question.
pub fn score_question(
    table: &Table,
    question: &str,
    config: &PipelineConfig,
    session: Option<&LlmSession>,
) -> Result<ScoredEvidence, PipelineError> {
    let table = if config.forward_fill_cols.is_empty() {
        table.clone()
    } else {
        forward_fill(table, &config.forward_fill_cols)
    };
    let build_start = Instant::now();
    let graph = build_atg(&table);
    let atg_build_ms = build_start.elapsed().as_secs_f64() * 1000.0;

    let (evidence, key_sets, keysets_degraded, decompose_trace) = match config.mode {
        Mode::Full => {
            let built =
                crate::qgppr::build_key_sets(question, &table, session, config.llm_value_selection);
            (
                graph.triples().to_vec(),
                built.sets,
                built.llm_degraded,
                None,
            )
        }
        Mode::Decomposed => {
            let (subgraph, trace) = decompose(question, &graph, session, config.max_rounds)?;
            let mut evidence = subgraph.triples(&graph);
            if evidence.is_empty() {
                if !config.full_graph_fallback {
                    return Err(PipelineError::EmptyEvidence);
                }
                evidence = graph.triples().to_vec();
            }
            // Key sets come from the decomposition itself: exact matches
            // plus every header selected along the way. No extra LLM call.
            let mut sets = KeySets {
                headers: exact_match_headers(question, &table),
                values: exact_match_values(question, &table),
            };
            sets.headers
                .extend(subgraph.selected_headers.iter().cloned());
            (evidence, sets, trace.degraded, Some(trace))
        }
    };

    if evidence.is_empty() {
        return Err(PipelineError::EmptyEvidence);
    }
    let p0 = build_personalization(&evidence, &key_sets, &graph, &config.ppr);
    let matrix = build_propagation(&evidence, &config.ppr)?;
    let salience = run_qgppr(&p0, &matrix, &config.ppr)?;
    let order_sensitive =
        order_sensitive_for(question, &config.ppr, config.order_triggers.as_deref());
    let ranked = rank(&evidence, &salience.scores, order_sensitive);

    Ok(ScoredEvidence {
        graph,
        evidence,
        salience,
        ranked,
        key_sets,
        order_sensitive,
        keysets_degraded,
        decompose_trace,
        atg_build_ms,
    })
}

/// Run the whole pipeline for one question, producing a parsed answer.
pub fn answer_question(
    table: &Table,
    question: &str,
    config: &PipelineConfig,
    session: &LlmSession,
) -> Result<QuestionOutcome, PipelineError> {
    let scored = score_question(table, question, config, Some(session))?;
    let result = generate_answer(
        question,
        scored.graph.title(),
        scored.graph.headers(),
        &scored.ranked,
        session,
    )?;
    let verdicts = validate_path(&result, &scored.evidence);
    Ok(QuestionOutcome {
        grounded_fraction: grounded_fraction(&verdicts),
        result,
        order_sensitive: scored.order_sensitive,
        keysets_degraded: scored.keysets_degraded,
        decompose_trace: scored.decompose_trace,
        atg_build_ms: scored.atg_build_ms,
    })
}
