//! Token accounting.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::PromptKind;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageTotals {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub calls: u64,
}

impl UsageTotals {
    fn add(&mut self, input: u64, output: u64) {
        self.input_tokens += input;
        self.output_tokens += output;
        self.calls += 1;
    }
}

/// Point-in-time copy of the ledger.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UsageSnapshot {
    pub aggregate: UsageTotals,
    pub per_question: BTreeMap<String, UsageTotals>,
    pub calls_by_kind: BTreeMap<String, u64>,
}

/// Thread-safe record of per-question and aggregate token usage.
///
/// The aggregate always equals the sum over questions; updates are
/// serialized internally so concurrent workers can share one ledger.
#[derive(Debug, Default)]
pub struct UsageLedger {
    inner: Mutex<UsageSnapshot>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, question_id: &str, kind: PromptKind, input: u64, output: u64) {
        let mut inner = self.inner.lock().expect("ledger lock");
        inner.aggregate.add(input, output);
        inner
            .per_question
            .entry(question_id.to_string())
            .or_default()
            .add(input, output);
        *inner
            .calls_by_kind
            .entry(kind.as_str().to_string())
            .or_insert(0) += 1;
    }

    pub fn snapshot(&self) -> UsageSnapshot {
        self.inner.lock().expect("ledger lock").clone()
    }

    pub fn question_totals(&self, question_id: &str) -> UsageTotals {
        self.inner
            .lock()
            .expect("ledger lock")
            .per_question
            .get(question_id)
            .copied()
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_is_sum_of_questions() {
        let ledger = UsageLedger::new();
        ledger.record("q1", PromptKind::ColumnSelect, 10, 2);
        ledger.record("q1", PromptKind::AnswerGen, 30, 5);
        ledger.record("q2", PromptKind::AnswerGen, 7, 1);
        let snap = ledger.snapshot();
        assert_eq!(snap.aggregate.input_tokens, 47);
        assert_eq!(snap.aggregate.output_tokens, 8);
        assert_eq!(snap.aggregate.calls, 3);
        let sum_inputs: u64 = snap.per_question.values().map(|t| t.input_tokens).sum();
        assert_eq!(sum_inputs, snap.aggregate.input_tokens);
        assert_eq!(snap.calls_by_kind["answer_gen"], 2);
    }

    #[test]
    fn concurrent_records_stay_consistent() {
        let ledger = std::sync::Arc::new(UsageLedger::new());
        let mut handles = Vec::new();
        for w in 0..8u64 {
            let ledger = ledger.clone();
            handles.push(std::thread::spawn(move || {
                for i in 0..100u64 {
                    ledger.record(&format!("q{w}-{i}"), PromptKind::Sufficiency, 3, 1);
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        let snap = ledger.snapshot();
        assert_eq!(snap.aggregate.calls, 800);
        assert_eq!(snap.aggregate.input_tokens, 2400);
        let per_q: u64 = snap.per_question.values().map(|t| t.calls).sum();
        assert_eq!(per_q, snap.aggregate.calls);
    }
}
