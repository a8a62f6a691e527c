//! Prompt templates.
//!
//! Four templates drive the whole pipeline: initial column selection,
//! subgraph sufficiency judging, additional relation selection, and final
//! answer generation. Placeholders are `{name}` tokens; few-shot examples are
//! spliced in at the `[Examples]` marker. The example blocks shipped under
//! `assets/fewshot/` are authored for this project, not taken from any
//! dataset.

use super::LlmError;

/// Marker replaced by the template's few-shot examples.
const EXAMPLES_MARKER: &str = "[Examples]";

/// All placeholder names any template may use. Used to detect unbound
/// placeholders left in rendered text.
const KNOWN_PLACEHOLDERS: [&str; 7] = [
    "title",
    "question",
    "candidate_col",
    "sample_row",
    "reasoning_paths",
    "available_relations",
    "header",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PromptKind {
    ColumnSelect,
    Sufficiency,
    EdgeSelect,
    AnswerGen,
}

impl PromptKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PromptKind::ColumnSelect => "column_select",
            PromptKind::Sufficiency => "sufficiency",
            PromptKind::EdgeSelect => "edge_select",
            PromptKind::AnswerGen => "answer_gen",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    pub body: String,
    pub required: Vec<&'static str>,
    pub examples: String,
}

const COLUMN_SELECT_BODY: &str = "\
You are a table analysis assistant.

Given:
- A table title
- A natural language question about the table
- A list of candidate columns from the table
- One sample row from the table

Task: Select the column names that contain the information necessary to answer the question. Only return the column names (split by commas), nothing else.

Here are some examples:
[Examples]

Title: {title}
Question: {question}
Candidate Columns: {candidate_col}
Sample Row: {sample_row}
Answer:";

const SUFFICIENCY_BODY: &str = "\
You are given a TableQA question and multiple candidate reasoning paths.

Instructions:
- Use ONLY the candidate reasoning paths.
- Treat edges as UNDIRECTED: \"(rowK; Col; X)\" and \"(X; Col; rowK)\" both mean rowK have Col = X.
- Decide if the provided paths are sufficient to answer the question.
  * Sufficient: the given candidate paths can deterministically yield the answer.
  * Insufficient: necessary link(s) or value(s) are missing or ambiguous.
- If sufficient: Set Finished: True.
- If insufficient: Set Finished: False.
- Output exactly and only the following one section. Do NOT add any other text.

Here are some examples:
[Examples]

Title: {title}
Question: {question}
Candidate Reasoning Paths: {reasoning_paths}
Finished:";

const EDGE_SELECT_BODY: &str = "\
You are given a TableQA question, a set of (possibly incomplete) candidate reasoning paths, and a set of available relations from the same table graph.

Goal:
- Select the MINIMAL SUFFICIENT subset of relations from Available Relations which, when combined with the candidate reasoning paths, is enough to answer the question.

Rules:
- Use ONLY the relation(s) in provided available relations. Do NOT invent new facts.
- Minimality: choose the fewest relations (>= 1) among available relations that make the answer derivable.
- Tie-breaking: if multiple equally minimal subsets exist, preserve the original order in Available Relations (i.e., pick the earliest lines that work).

Output format (STRICT):
- Output exactly ONE line that starts with: SELECTED_RELATIONS: followed by a Python list literal of strings, e.g. ['relation1', 'relation2'].
- Do NOT output anything else.

Here are some examples:
[Examples]

Title: {title}
Question: {question}
Candidate Reasoning Paths: {reasoning_paths}
Available Relations: {available_relations}
Sample Row: {sample_row}
SELECTED_RELATIONS:";

const ANSWER_GEN_BODY: &str = "\
You are given a TableQA question and a list of candidate reasoning paths. Given a question, you should think it step by step and then answer the question. Also provide the final reasoning path encloses within <paths> ... </paths>.

Rules (strict):
- OUTPUT FORMAT: two sections:
  <think> <paths> ... </paths> ... </think>
  <answer> ... </answer>

Here are some examples:
[Examples]

YOUR TURN
Title: {title}
Question: {question}
Header: {header}
Table Content: {reasoning_paths}
<think>
<paths>";

/// The built-in templates, one per [`PromptKind`].
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    templates: Vec<PromptTemplate>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        PromptLibrary {
            templates: vec![
                PromptTemplate {
                    kind: PromptKind::ColumnSelect,
                    body: COLUMN_SELECT_BODY.to_string(),
                    required: vec!["title", "question", "candidate_col", "sample_row"],
                    examples: include_str!("../../assets/fewshot/column_select.txt")
                        .trim_end()
                        .to_string(),
                },
                PromptTemplate {
                    kind: PromptKind::Sufficiency,
                    body: SUFFICIENCY_BODY.to_string(),
                    required: vec!["title", "question", "reasoning_paths"],
                    examples: include_str!("../../assets/fewshot/sufficiency.txt")
                        .trim_end()
                        .to_string(),
                },
                PromptTemplate {
                    kind: PromptKind::EdgeSelect,
                    body: EDGE_SELECT_BODY.to_string(),
                    required: vec![
                        "title",
                        "question",
                        "reasoning_paths",
                        "available_relations",
                        "sample_row",
                    ],
                    examples: include_str!("../../assets/fewshot/edge_select.txt")
                        .trim_end()
                        .to_string(),
                },
                PromptTemplate {
                    kind: PromptKind::AnswerGen,
                    body: ANSWER_GEN_BODY.to_string(),
                    required: vec!["title", "question", "header", "reasoning_paths"],
                    examples: include_str!("../../assets/fewshot/answer_gen.txt")
                        .trim_end()
                        .to_string(),
                },
            ],
        }
    }
}

impl PromptLibrary {
    pub fn template(&self, kind: PromptKind) -> &PromptTemplate {
        self.templates
            .iter()
            .find(|t| t.kind == kind)
            .expect("library holds every kind")
    }

    /// Render a template: splice few-shot examples at the marker and
    /// substitute every `{name}` placeholder.
    ///
    /// Fails with [`LlmError::MissingPlaceholder`] if a required placeholder
    /// is unbound or a known placeholder survives substitution. Byte-stable
    /// for identical inputs.
    pub fn render(&self, kind: PromptKind, bindings: &[(&str, &str)]) -> Result<String, LlmError> {
        let template = self.template(kind);
        for name in &template.required {
            if !bindings.iter().any(|(k, _)| k == name) {
                return Err(LlmError::MissingPlaceholder(name.to_string()));
            }
        }
        let mut text = template.body.replace(EXAMPLES_MARKER, &template.examples);
        for (name, value) in bindings {
            text = text.replace(&format!("{{{name}}}"), value);
        }
        for name in KNOWN_PLACEHOLDERS {
            let token = format!("{{{name}}}");
            if text.contains(&token) {
                return Err(LlmError::MissingPlaceholder(name.to_string()));
            }
        }
        Ok(text)
    }
}
