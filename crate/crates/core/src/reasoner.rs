//! Answer generation and structured-output parsing.
//!
//! The answer prompt asks for `<think><paths>...</paths>...</think>`
//! followed by `<answer>...</answer>`. [`parse_output`] extracts the three
//! segments and classifies the reply as clean (full grammar), repaired (one
//! of a small whitelist of recoverable deviations), or failed. Repair never
//! invents content; anything outside the whitelist is `Failed` with the raw
//! text preserved.

use serde::{Deserialize, Serialize};

use crate::atg::{parse_rendered_triple, render_triple, Triple};
use crate::llm::{LlmError, LlmSession, PromptKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Clean,
    Repaired,
    Failed,
}

/// Parsed reasoning output: the path (rendered triples), the chain of
/// thought, and the final answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningResult {
    pub path: Vec<String>,
    pub cot: String,
    pub answer: String,
    pub parse_status: ParseStatus,
    pub raw: String,
}

impl ReasoningResult {
    fn failed(raw: &str) -> Self {
        ReasoningResult {
            path: Vec::new(),
            cot: String::new(),
            answer: String::new(),
            parse_status: ParseStatus::Failed,
            raw: raw.to_string(),
        }
    }
}

/// Split a paths segment on `->`/arrow separators and line boundaries.
fn split_path(text: &str) -> Vec<String> {
    text.split(['\n', '\r'])
        .flat_map(|line| line.split("\u{2192}"))
        .flat_map(|part| part.split("->"))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn find_block(text: &str, open: &str, close: &str) -> Option<(usize, usize)> {
    let start = text.find(open)? + open.len();
    let end = start + text[start..].find(close)?;
    Some((start, end))
}

/// Parse a raw reply into a [`ReasoningResult`]. Total: never panics, every
/// input maps to exactly one of the three statuses.
///
/// Clean requires the full grammar. The repair whitelist:
/// * extra prose before `<think>` or after `</answer>`,
/// * missing `<think>`/`<paths>` openers when `</paths>` is present
///   (continuation-style replies),
/// * missing `</think>` when `<answer>` marks the boundary,
/// * a unique `<answer>` without its closing tag, taking the trailing text,
/// * multiple complete `<answer>` blocks, taking the last.
pub fn parse_output(raw: &str) -> ReasoningResult {
    let trimmed = raw.trim();

    if let Some(result) = parse_clean(trimmed, raw) {
        return result;
    }

    // Repair tier. Locate the answer first; without one there is nothing
    // to salvage.
    let opens: Vec<usize> = match_indices(trimmed, "<answer>");
    let (answer, answer_open) = match opens.len() {
        0 => return ReasoningResult::failed(raw),
        1 => {
            let open = opens[0];
            let tail = &trimmed[open + "<answer>".len()..];
            match tail.find("</answer>") {
                Some(end) => (tail[..end].trim().to_string(), open),
                None => {
                    if tail.trim().is_empty() {
                        return ReasoningResult::failed(raw);
                    }
                    (tail.trim().to_string(), open)
                }
            }
        }
        _ => {
            // Multiple opens: take the last complete block.
            let mut last = None;
            for &open in &opens {
                let tail = &trimmed[open + "<answer>".len()..];
                if let Some(end) = tail.find("</answer>") {
                    last = Some((tail[..end].trim().to_string(), open));
                }
            }
            match last {
                Some(found) => found,
                None => return ReasoningResult::failed(raw),
            }
        }
    };

    let head = &trimmed[..answer_open];
    let (path_text, cot_text) = match head.find("</paths>") {
        Some(close) => {
            let before = &head[..close];
            let path_start = before
                .find("<paths>")
                .map(|p| p + "<paths>".len())
                .or_else(|| before.find("<think>").map(|p| p + "<think>".len()))
                .unwrap_or(0);
            let after = &head[close + "</paths>".len()..];
            let cot_end = after.find("</think>").unwrap_or(after.len());
            (&before[path_start..], &after[..cot_end])
        }
        None => {
            // No paths section at all; everything before the answer is
            // chain of thought.
            let start = head
                .find("<think>")
                .map(|p| p + "<think>".len())
                .unwrap_or(0);
            let end = head.find("</think>").unwrap_or(head.len());
            ("", &head[start.min(end)..end])
        }
    };

    ReasoningResult {
        path: split_path(path_text),
        cot: cot_text.trim().to_string(),
        answer,
        parse_status: ParseStatus::Repaired,
        raw: raw.to_string(),
    }
}

/// Strict grammar: `<think>` ws `<paths>` P `</paths>` T `</think>` ws
/// `<answer>` A `</answer>`, nothing before or after, single occurrence of
/// every tag.
fn parse_clean(trimmed: &str, raw: &str) -> Option<ReasoningResult> {
    if !trimmed.starts_with("<think>") || !trimmed.ends_with("</answer>") {
        return None;
    }
    for tag in [
        "<think>",
        "</think>",
        "<paths>",
        "</paths>",
        "<answer>",
        "</answer>",
    ] {
        if match_indices(trimmed, tag).len() != 1 {
            return None;
        }
    }
    let (paths_start, paths_end) = find_block(trimmed, "<paths>", "</paths>")?;
    let (think_start, think_end) = find_block(trimmed, "<think>", "</think>")?;
    let (answer_start, answer_end) = find_block(trimmed, "<answer>", "</answer>")?;
    // Ordering: <think> <paths> ... </paths> ... </think> <answer> ...
    if !(think_start <= paths_start && paths_end <= think_end && think_end <= answer_start) {
        return None;
    }
    // Only whitespace allowed between <think> and <paths>, and between
    // </think> and <answer>.
    if !trimmed[think_start..paths_start - "<paths>".len()]
        .trim()
        .is_empty()
    {
        return None;
    }
    if !trimmed[think_end + "</think>".len()..answer_start - "<answer>".len()]
        .trim()
        .is_empty()
    {
        return None;
    }
    let cot = trimmed[paths_end + "</paths>".len()..think_end].trim();
    Some(ReasoningResult {
        path: split_path(&trimmed[paths_start..paths_end]),
        cot: cot.to_string(),
        answer: trimmed[answer_start..answer_end].trim().to_string(),
        parse_status: ParseStatus::Clean,
        raw: raw.to_string(),
    })
}

fn match_indices(text: &str, pattern: &str) -> Vec<usize> {
    text.match_indices(pattern).map(|(i, _)| i).collect()
}

/// Render the ranked evidence, fill the answer prompt, make one LLM call,
/// and parse the reply. Parse failures are data (`Failed` status), not
/// errors; only transport problems surface as `Err`.
pub fn generate_answer(
    question: &str,
    title: &str,
    headers: &[String],
    ranked: &[Triple],
    session: &LlmSession,
) -> Result<ReasoningResult, LlmError> {
    let rendered = ranked
        .iter()
        .map(render_triple)
        .collect::<Vec<_>>()
        .join("\n");
    let reply = session.ask(
        PromptKind::AnswerGen,
        &[
            ("title", title),
            ("question", question),
            ("header", &headers.join(", ")),
            ("reasoning_paths", &rendered),
        ],
    )?;
    Ok(parse_output(&reply))
}

/// For each path entry, report whether it names an actual triple of the
/// evidence set (row index, header, and value compared after whitespace
/// trim). Unparseable entries are ungrounded.
pub fn validate_path(result: &ReasoningResult, evidence: &[Triple]) -> Vec<bool> {
    result
        .path
        .iter()
        .map(|entry| {
            let Some((row, header, value)) = parse_rendered_triple(entry) else {
                return false;
            };
            evidence.iter().any(|t| {
                t.row == row && t.header.trim() == header.trim() && t.value.trim() == value.trim()
            })
        })
        .collect()
}

/// Fraction of path entries that are grounded; 0 for an empty path.
pub fn grounded_fraction(verdicts: &[bool]) -> f64 {
    if verdicts.is_empty() {
        return 0.0;
    }
    verdicts.iter().filter(|&&v| v).count() as f64 / verdicts.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_minimal_reply() {
        let r = parse_output("<think><paths>(row1; A; x)</paths>ok</think><answer>x</answer>");
        assert_eq!(r.parse_status, ParseStatus::Clean);
        assert_eq!(r.path, vec!["(row1; A; x)"]);
        assert_eq!(r.cot, "ok");
        assert_eq!(r.answer, "x");
    }

    #[test]
    fn clean_empty_answer_is_legal() {
        let r = parse_output("<think><paths>(row1; A; x)</paths>t</think><answer></answer>");
        assert_eq!(r.parse_status, ParseStatus::Clean);
        assert_eq!(r.answer, "");
    }

    #[test]
    fn arrow_separated_paths_split() {
        let r = parse_output(
            "<think><paths>(row2; Shirt Sponsor; ) \u{2192} (row2; Year; 1982\u{2013}1985)</paths>t</think><answer>1982\u{2013}1985</answer>",
        );
        assert_eq!(r.parse_status, ParseStatus::Clean);
        assert_eq!(
            r.path,
            vec!["(row2; Shirt Sponsor; )", "(row2; Year; 1982\u{2013}1985)"]
        );
    }

    #[test]
    fn ascii_arrow_and_newlines_split() {
        let r = parse_output(
            "<think><paths>(row1; A; x) -> (row1; B; y)\n(row2; A; z)</paths>t</think><answer>x</answer>",
        );
        assert_eq!(r.path.len(), 3);
    }

    #[test]
    fn missing_answer_close_is_repaired() {
        let r = parse_output("<think><paths>(row1; A; x)</paths>t</think><answer>x");
        assert_eq!(r.parse_status, ParseStatus::Repaired);
        assert_eq!(r.answer, "x");
        assert_eq!(r.path, vec!["(row1; A; x)"]);
    }

    #[test]
    fn open_answer_without_content_fails() {
        let r = parse_output("<think><paths>p</paths>t</think><answer>");
        assert_eq!(r.parse_status, ParseStatus::Failed);
    }

    #[test]
    fn multiple_answer_blocks_take_last() {
        let r = parse_output(
            "<think><paths>(row1; A; x)</paths>t</think><answer>first</answer><answer>second</answer>",
        );
        assert_eq!(r.parse_status, ParseStatus::Repaired);
        assert_eq!(r.answer, "second");
    }

    #[test]
    fn continuation_style_reply_is_repaired() {
        // Models completing after the prompt's opening tags omit them.
        let r = parse_output("(row1; A; x)</paths>reasoning</think><answer>x</answer>");
        assert_eq!(r.parse_status, ParseStatus::Repaired);
        assert_eq!(r.path, vec!["(row1; A; x)"]);
        assert_eq!(r.cot, "reasoning");
        assert_eq!(r.answer, "x");
    }

    #[test]
    fn missing_paths_section_is_repaired_with_empty_path() {
        let r = parse_output("The answer is x. <answer>x</answer>");
        assert_eq!(r.parse_status, ParseStatus::Repaired);
        assert!(r.path.is_empty());
        assert_eq!(r.answer, "x");
    }

    #[test]
    fn no_answer_tag_fails() {
        let r = parse_output("I think the answer is 42.");
        assert_eq!(r.parse_status, ParseStatus::Failed);
        assert_eq!(r.raw, "I think the answer is 42.");
    }

    #[test]
    fn round_trips_well_formed_output() {
        let path = vec![
            "(row2; Shirt Sponsor; )".to_string(),
            "(row2; Year; 1982\u{2013}1985)".to_string(),
        ];
        let raw = format!(
            "<think><paths>{}</paths>{}</think><answer>{}</answer>",
            path.join(" \u{2192} "),
            "cot text",
            "1982\u{2013}1985"
        );
        let r = parse_output(&raw);
        assert_eq!(r.parse_status, ParseStatus::Clean);
        assert_eq!(r.path, path);
        assert_eq!(r.cot, "cot text");
        assert_eq!(r.answer, "1982\u{2013}1985");
    }

    fn triple(id: usize, row: usize, col: usize, header: &str, value: &str) -> Triple {
        Triple {
            id,
            row,
            col,
            header: header.into(),
            value: value.into(),
        }
    }

    #[test]
    fn validate_grounds_real_entries() {
        let evidence = vec![
            triple(0, 1, 2, "Shirt Sponsor", ""),
            triple(1, 1, 0, "Year", "1982\u{2013}1985"),
        ];
        let r = parse_output(
            "<think><paths>(row2; Shirt Sponsor; ) \u{2192} (row2; Year; 1982\u{2013}1985)</paths>t</think><answer>a</answer>",
        );
        let verdicts = validate_path(&r, &evidence);
        assert_eq!(verdicts, vec![true, true]);
        assert_eq!(grounded_fraction(&verdicts), 1.0);
    }

    #[test]
    fn validate_flags_hallucinated_entries() {
        let evidence = vec![triple(0, 0, 0, "A", "x")];
        let r = parse_output(
            "<think><paths>(row1; A; x) \u{2192} (row9; Ghost; z)</paths>t</think><answer>a</answer>",
        );
        let verdicts = validate_path(&r, &evidence);
        assert_eq!(verdicts, vec![true, false]);
        assert_eq!(grounded_fraction(&verdicts), 0.5);
    }

    #[test]
    fn grounded_fraction_of_empty_path_is_zero() {
        assert_eq!(grounded_fraction(&[]), 0.0);
    }

    #[test]
    fn parse_never_panics_on_junk() {
        for junk in [
            "",
            "<answer>",
            "</answer><answer>",
            "<think><paths></think>",
            "<paths></paths>",
            "<answer></answer><answer>",
            "\u{0000}\u{FFFF}<answer>x</answer>",
        ] {
            let _ = parse_output(junk);
        }
    }
}
