//! Answer scoring and table-size bucketing.
//!
//! QA scoring re-implements the denotation-matching rules the benchmark
//! evaluators use: lowercase, trim, strip surrounding quotes, canonicalize
//! numbers (`2,000` == `2000` == `2000.0`), split multi-part answers on `|`
//! and compare as multisets against each gold alternative.

use serde::{Deserialize, Serialize};

use crate::llm::approx_token_count;
use crate::table::Table;

/// Canonical form of one answer part.
fn normalize_part(part: &str) -> String {
    let trimmed = part.trim();
    let unquoted = trimmed
        .trim_matches(|c| matches!(c, '"' | '\''))
        .trim()
        .to_lowercase();
    if let Some(num) = parse_number(&unquoted) {
        return format_number(num);
    }
    unquoted
}

/// Parse a numeric string after removing thousands separators. Rejects
/// anything without a digit so words like "inf" stay textual.
fn parse_number(text: &str) -> Option<f64> {
    if !text.chars().any(|c| c.is_ascii_digit()) {
        return None;
    }
    let cleaned = text.replace(',', "");
    let value: f64 = cleaned.parse().ok()?;
    if !value.is_finite() {
        return None;
    }
    Some(value)
}

fn format_number(value: f64) -> String {
    // Collapse -0 into 0 so the canonical form is unique.
    let value = if value == 0.0 { 0.0 } else { value };
    format!("{value}")
}

/// Normalize a full answer: split on `|`, normalize each part, sort.
pub fn normalize_answer(answer: &str) -> Vec<String> {
    let mut parts: Vec<String> = answer.split('|').map(normalize_part).collect();
    parts.sort();
    parts
}

/// True iff the normalized prediction matches any normalized gold
/// alternative (multiset comparison of `|`-separated parts).
pub fn score_qa(predicted: &str, gold: &[String]) -> bool {
    let pred = normalize_answer(predicted);
    gold.iter().any(|g| normalize_answer(g) == pred)
}

const TRUE_WORDS: &[&str] = &["true", "yes", "entailed", "supported"];
const FALSE_WORDS: &[&str] = &["false", "no", "refuted"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FvOutcome {
    pub correct: bool,
    /// False when the prediction could not be mapped to a boolean; counted
    /// as a parse miss and scored incorrect.
    pub mappable: bool,
}

/// Map a free-text verdict onto a boolean via synonym sets and compare with
/// the gold label.
pub fn score_fv(predicted: &str, gold: bool) -> FvOutcome {
    let norm = predicted.trim().to_lowercase();
    let mapped = if TRUE_WORDS.contains(&norm.as_str()) {
        Some(true)
    } else if FALSE_WORDS.contains(&norm.as_str()) {
        Some(false)
    } else {
        let words: Vec<&str> = norm
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        let has_true = words.iter().any(|w| TRUE_WORDS.contains(w));
        let has_false = words.iter().any(|w| FALSE_WORDS.contains(w));
        match (has_true, has_false) {
            (true, false) => Some(true),
            (false, true) => Some(false),
            _ => None,
        }
    };
    match mapped {
        Some(value) => FvOutcome {
            correct: value == gold,
            mappable: true,
        },
        None => FvOutcome {
            correct: false,
            mappable: false,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Small,
    Medium,
    Large,
}

impl Bucket {
    pub fn as_str(&self) -> &'static str {
        match self {
            Bucket::Small => "small",
            Bucket::Medium => "medium",
            Bucket::Large => "large",
        }
    }

    pub const ALL: [Bucket; 3] = [Bucket::Small, Bucket::Medium, Bucket::Large];
}

/// Bucket boundaries over the token count of the serialized table:
/// `[0, 1000)` small, `[1000, 4000]` medium, `(4000, inf)` large.
pub fn bucket_of_tokens(tokens: u64) -> Bucket {
    if tokens < 1000 {
        Bucket::Small
    } else if tokens <= 4000 {
        Bucket::Medium
    } else {
        Bucket::Large
    }
}

/// Size bucket of a table, measured over its triple rendering with the same
/// token approximation used for cost accounting.
pub fn bucket_of(table: &Table) -> Bucket {
    bucket_of_tokens(table_token_count(table))
}

/// Token count of the table serialized as one rendered triple per line.
pub fn table_token_count(table: &Table) -> u64 {
    let mut text = String::new();
    for (i, row) in table.rows.iter().enumerate() {
        for (j, value) in row.iter().enumerate() {
            text.push_str(&format!(
                "(row{}; {}; {})\n",
                i + 1,
                table.headers[j],
                value
            ));
        }
    }
    approx_token_count(&text)
}
