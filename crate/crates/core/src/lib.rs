//! Graph-based table reasoning.
//!
//! The pipeline: parse a table ([`table`]), build its attributed table graph
//! ([`atg`]), score every triple against the question with a personalized
//! PageRank over row/column co-membership ([`qgppr`]), optionally shrink the
//! graph first via an LLM-judged expansion loop ([`decompose`]), and ask an
//! LLM to answer over the reranked triples with a grounded reasoning path
//! ([`reasoner`]). The [`eval`] harness runs datasets through the pipeline
//! with bounded parallelism and aggregates accuracy, token, robustness, and
//! timing reports.
//!
//! The numerical core is fully offline-testable; the LLM boundary ([`llm`])
//! is pluggable between a remote chat-completion client and a deterministic
//! scripted mock.
//!
//! With the default `parallel` feature, batch evaluation and the salience
//! matvec use rayon; without it everything runs sequentially behind the same
//! API.

pub mod atg;
pub mod decompose;
pub mod eval;
pub mod llm;
pub mod pipeline;
pub mod qgppr;
pub mod reasoner;
pub mod table;

pub use atg::{build_atg, render_triple, AtgGraph, Triple};
pub use pipeline::{answer_question, score_question, Mode, PipelineConfig};
pub use qgppr::{PprConfig, SalienceVector};
pub use table::{parse_table, Table};
