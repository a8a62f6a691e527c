//! Question-guided salience scoring over table triples.
//!
//! Pipeline: derive key headers/values from the question (exact matching
//! plus an optional LLM column selector), turn them into a personalization
//! vector, build the row/column propagation matrix over the triples in
//! play, run the power iteration, and rerank triples by the resulting
//! salience scores.
//!
//! Everything here is a pure function over immutable inputs; scoring many
//! questions against the same graph is safe to do concurrently.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atg::{AtgGraph, Triple};
use crate::llm::{LlmSession, PromptKind};
use crate::table::Table;

/// Matrix size below which the parallel matvec is not worth the overhead.
#[cfg(feature = "parallel")]
const PAR_THRESHOLD: usize = 4096;

/// Trigger terms marking a question as dependent on the table's native
/// order, in which case reranking is bypassed.
pub const DEFAULT_ORDER_TRIGGERS: &[&str] = &[
    "first",
    "last",
    "previous",
    "next",
    "above",
    "below",
    "top",
    "bottom",
    "earliest listed",
    "consecutive",
    "in order",
    "before",
    "after",
];

#[derive(Debug, Error)]
pub enum QgpprError {
    #[error("graph has no triples")]
    EmptyGraph,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OrderSensitiveMode {
    /// Decide per question from the trigger list.
    #[default]
    Auto,
    AlwaysPreserve,
    NeverPreserve,
}

/// All scoring hyperparameters.
///
/// `w_row` and `w_col` must sum to 1; that is what makes every row of the
/// propagation matrix stochastic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PprConfig {
    /// Teleport probability, in (0, 1).
    pub alpha: f64,
    /// Power-iteration count (fixed, not residual-driven).
    pub iterations: usize,
    pub w_row: f64,
    pub w_col: f64,
    /// Initial score for a key-header hit.
    pub v_col: f64,
    /// Initial score for a key-value hit.
    pub v_val: f64,
    /// Dampen frequent cell values by their inverse document frequency.
    pub use_idf: bool,
    pub order_sensitive_mode: OrderSensitiveMode,
}

impl Default for PprConfig {
    fn default() -> Self {
        PprConfig::full_graph()
    }
}

impl PprConfig {
    /// Defaults for scoring over the full graph.
    pub fn full_graph() -> Self {
        PprConfig {
            alpha: 0.35,
            iterations: 20,
            w_row: 0.6,
            w_col: 0.4,
            v_col: 1.0,
            v_val: 2.0,
            use_idf: true,
            order_sensitive_mode: OrderSensitiveMode::Auto,
        }
    }

    /// Defaults for scoring over a decomposed subgraph: lower teleport
    /// probability, neutral row/column balance (tune per dataset).
    pub fn decomposed() -> Self {
        PprConfig {
            alpha: 0.15,
            w_row: 0.5,
            w_col: 0.5,
            ..PprConfig::full_graph()
        }
    }

    pub fn validate(&self) -> Result<(), QgpprError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(QgpprError::InvalidConfig(format!(
                "alpha must be in (0,1), got {}",
                self.alpha
            )));
        }
        if self.iterations == 0 {
            return Err(QgpprError::InvalidConfig("iterations must be >= 1".into()));
        }
        if self.w_row < 0.0 || self.w_col < 0.0 {
            return Err(QgpprError::InvalidConfig(
                "w_row and w_col must be nonnegative".into(),
            ));
        }
        if (self.w_row + self.w_col - 1.0).abs() > 1e-12 {
            return Err(QgpprError::InvalidConfig(format!(
                "w_row + w_col must be 1, got {}",
                self.w_row + self.w_col
            )));
        }
        if self.v_col < 0.0 || self.v_val < 0.0 {
            return Err(QgpprError::InvalidConfig(
                "v_col and v_val must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Question-derived key sets: header texts and `(column, value)` pairs.
/// Both are deduplicated by construction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeySets {
    pub headers: BTreeSet<String>,
    pub values: BTreeSet<(usize, String)>,
}

impl KeySets {
    pub fn is_empty(&self) -> bool {
        self.headers.is_empty() && self.values.is_empty()
    }
}

/// Result of [`build_key_sets`]: the sets plus whether the LLM leg was
/// skipped or failed (exact-match-only degradation).
#[derive(Debug, Clone)]
pub struct KeySetBuild {
    pub sets: KeySets,
    pub llm_degraded: bool,
}

/// Matching-time text normalization: lowercase, collapse whitespace, strip
/// surrounding punctuation. Cell storage is never normalized; this is only
/// for substring matching against the question.
pub fn normalize_match(text: &str) -> String {
    let lower = text.to_lowercase();
    let collapsed = lower.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_string()
}

/// Headers whose normalized text occurs in the normalized question.
pub fn exact_match_headers(question: &str, table: &Table) -> BTreeSet<String> {
    let q = normalize_match(question);
    table
        .headers
        .iter()
        .filter(|h| {
            let n = normalize_match(h);
            !n.is_empty() && q.contains(&n)
        })
        .cloned()
        .collect()
}

/// `(column, value)` pairs whose normalized value occurs in the normalized
/// question. Values shorter than 2 characters after normalization are
/// ignored as noise.
pub fn exact_match_values(question: &str, table: &Table) -> BTreeSet<(usize, String)> {
    let q = normalize_match(question);
    let mut out = BTreeSet::new();
    for row in &table.rows {
        for (j, value) in row.iter().enumerate() {
            let n = normalize_match(value);
            if n.chars().count() >= 2 && q.contains(&n) {
                out.insert((j, value.clone()));
            }
        }
    }
    out
}

/// Parse a comma-separated column reply, keeping only names that resolve to
/// actual table headers (matched after normalization, returned in the
/// table's own spelling).
pub fn parse_column_reply(reply: &str, headers: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for part in reply.split(',') {
        let wanted = normalize_match(part);
        if wanted.is_empty() {
            continue;
        }
        if let Some(h) = headers.iter().find(|h| normalize_match(h) == wanted) {
            if !out.contains(h) {
                out.push(h.clone());
            }
        }
    }
    out
}

/// Build the key sets for a question: exact matches unioned with
/// LLM-selected columns (and, when `llm_value_selection` is set, values).
///
/// If the LLM is absent or unavailable the sets degrade to exact matches
/// only and `llm_degraded` is set. LLM outputs not present in the table are
/// discarded.
pub fn build_key_sets(
    question: &str,
    table: &Table,
    session: Option<&LlmSession>,
    llm_value_selection: bool,
) -> KeySetBuild {
    let mut sets = KeySets {
        headers: exact_match_headers(question, table),
        values: exact_match_values(question, table),
    };
    let Some(session) = session else {
        return KeySetBuild {
            sets,
            llm_degraded: true,
        };
    };
    let sample_row = table.rows.first().map(|r| r.join(", ")).unwrap_or_default();
    let reply = session.ask(
        PromptKind::ColumnSelect,
        &[
            ("title", table.title.as_str()),
            ("question", question),
            ("candidate_col", &table.headers.join(", ")),
            ("sample_row", &sample_row),
        ],
    );
    match reply {
        Ok(text) => {
            let selected = parse_column_reply(&text, &table.headers);
            if llm_value_selection {
                // Treat reply items that resolve to cell text as value
                // nominations.
                for part in text.split(',') {
                    let wanted = normalize_match(part);
                    if wanted.is_empty() {
                        continue;
                    }
                    for row in &table.rows {
                        for (j, value) in row.iter().enumerate() {
                            if normalize_match(value) == wanted {
                                sets.values.insert((j, value.clone()));
                            }
                        }
                    }
                }
            }
            sets.headers.extend(selected);
            KeySetBuild {
                sets,
                llm_degraded: false,
            }
        }
        Err(err) => {
            log::warn!("column selection unavailable, using exact matches only: {err}");
            KeySetBuild {
                sets,
                llm_degraded: true,
            }
        }
    }
}

/// Inverse document frequency of a value occurring in `df` of `n_rows` rows:
/// `ln(1 + N / (1 + df))` (natural log; only relative magnitudes matter
/// after normalization).
pub fn idf(df: usize, n_rows: usize) -> f64 {
    (1.0 + n_rows as f64 / (1.0 + df as f64)).ln()
}

/// Normalized restart distribution over triples.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonalizationVector {
    pub p0: Vec<f64>,
    /// True when no triple matched and the uniform fallback was used.
    pub uniform_fallback: bool,
}

/// Additive initial scores: `v_col` per key-header hit plus `v_val`
/// (IDF-weighted when enabled) per key-value hit, normalized to sum 1.
/// All-zero scores fall back to the uniform distribution.
pub fn build_personalization(
    triples: &[Triple],
    key_sets: &KeySets,
    graph: &AtgGraph,
    config: &PprConfig,
) -> PersonalizationVector {
    let n = triples.len();
    let mut raw = vec![0.0f64; n];
    for (idx, t) in triples.iter().enumerate() {
        let mut score = 0.0;
        if key_sets.headers.contains(&t.header) {
            score += config.v_col;
        }
        if key_sets.values.contains(&(t.col, t.value.clone())) {
            let weight = if config.use_idf {
                idf(graph.df(t.col, &t.value), graph.row_count())
            } else {
                1.0
            };
            score += config.v_val * weight;
        }
        raw[idx] = score;
    }
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        for x in &mut raw {
            *x /= total;
        }
        PersonalizationVector {
            p0: raw,
            uniform_fallback: false,
        }
    } else {
        PersonalizationVector {
            p0: vec![1.0 / n as f64; n],
            uniform_fallback: true,
        }
    }
}

/// Row-stochastic triple-to-triple transition matrix, stored as CSR rows.
///
/// Triple `u` at cell `(i, j)` sends `w_row / |row i's triples|` to every
/// triple sharing row `i` and `w_col / |column j's triples|` to every triple
/// sharing column `j`; `u` itself receives both shares, which is exactly
/// what makes each row sum to `w_row + w_col = 1`. Set sizes are counted
/// over the triples passed in, so the same construction covers full graphs
/// and decomposed subgraphs. Weights are symmetric: the weight between two
/// triples depends only on the shared row or column set.
#[derive(Debug, Clone)]
pub struct PropagationMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    weights: Vec<f64>,
}

impl PropagationMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Entries of row `u` as `(column index, weight)` pairs, ascending.
    pub fn row(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.indptr[u];
        let hi = self.indptr[u + 1];
        self.indices[lo..hi]
            .iter()
            .zip(&self.weights[lo..hi])
            .map(|(&v, &w)| (v as usize, w))
    }

    pub fn row_sum(&self, u: usize) -> f64 {
        let lo = self.indptr[u];
        let hi = self.indptr[u + 1];
        self.weights[lo..hi].iter().sum()
    }

    fn gather(&self, v: usize, s: &[f64]) -> f64 {
        let lo = self.indptr[v];
        let hi = self.indptr[v + 1];
        let mut acc = 0.0;
        for (idx, w) in self.indices[lo..hi].iter().zip(&self.weights[lo..hi]) {
            acc += w * s[*idx as usize];
        }
        acc
    }

    /// `out = A^T * s`, sequential. Because the weights are symmetric this
    /// is a per-row gather, summing contributions in ascending index order.
    pub fn matvec_transpose_seq(&self, s: &[f64], out: &mut [f64]) {
        debug_assert_eq!(s.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        for (v, o) in out.iter_mut().enumerate() {
            *o = self.gather(v, s);
        }
    }

    /// `out = A^T * s` with one rayon task per output element. Bitwise
    /// identical to the sequential path: each element sums its own row in
    /// the same order.
    #[cfg(feature = "parallel")]
    pub fn matvec_transpose_par(&self, s: &[f64], out: &mut [f64]) {
        use rayon::prelude::*;
        debug_assert_eq!(s.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        out.par_iter_mut()
            .enumerate()
            .for_each(|(v, o)| *o = self.gather(v, s));
    }

    fn matvec_transpose(&self, s: &[f64], out: &mut [f64]) {
        #[cfg(feature = "parallel")]
        if self.n >= PAR_THRESHOLD {
            self.matvec_transpose_par(s, out);
            return;
        }
        self.matvec_transpose_seq(s, out);
    }
}

/// Build the propagation matrix over the given triples (a full graph's
/// triple list or any subgraph selection).
pub fn build_propagation(
    triples: &[Triple],
    config: &PprConfig,
) -> Result<PropagationMatrix, QgpprError> {
    config.validate()?;
    let n = triples.len();
    if n == 0 {
        return Err(QgpprError::EmptyGraph);
    }

    use std::collections::HashMap;
    let mut row_groups: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut col_groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for (idx, t) in triples.iter().enumerate() {
        row_groups.entry(t.row).or_default().push(idx);
        col_groups.entry(t.col).or_default().push(idx);
    }

    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::new();
    let mut weights = Vec::new();
    indptr.push(0);
    for t in triples {
        let row_set = &row_groups[&t.row];
        let col_set = &col_groups[&t.col];
        let row_share = config.w_row / row_set.len() as f64;
        let col_share = config.w_col / col_set.len() as f64;
        // Merge the two ascending position lists; the self position is the
        // only index present in both and receives the summed share.
        let (mut a, mut b) = (0, 0);
        while a < row_set.len() || b < col_set.len() {
            let next_row = row_set.get(a).copied();
            let next_col = col_set.get(b).copied();
            match (next_row, next_col) {
                (Some(r), Some(c)) if r == c => {
                    indices.push(r as u32);
                    weights.push(row_share + col_share);
                    a += 1;
                    b += 1;
                }
                (Some(r), Some(c)) if r < c => {
                    indices.push(r as u32);
                    weights.push(row_share);
                    a += 1;
                }
                (Some(_), Some(c)) => {
                    indices.push(c as u32);
                    weights.push(col_share);
                    b += 1;
                }
                (Some(r), None) => {
                    indices.push(r as u32);
                    weights.push(row_share);
                    a += 1;
                }
                (None, Some(c)) => {
                    indices.push(c as u32);
                    weights.push(col_share);
                    b += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        indptr.push(indices.len());
    }

    Ok(PropagationMatrix {
        n,
        indptr,
        indices,
        weights,
    })
}

/// Converged salience scores plus the final-iteration residual.
#[derive(Debug, Clone, Serialize)]
pub struct SalienceVector {
    pub scores: Vec<f64>,
    /// Max-abs change between the last two iterations.
    pub converged_residual: f64,
}

fn power_iterate(
    p0: &PersonalizationVector,
    matrix: &PropagationMatrix,
    config: &PprConfig,
    parallel: Option<bool>,
) -> Result<SalienceVector, QgpprError> {
    config.validate()?;
    let n = matrix.n();
    if n == 0 {
        return Err(QgpprError::EmptyGraph);
    }
    if p0.p0.len() != n {
        return Err(QgpprError::DimensionMismatch(format!(
            "p0 has {} entries, matrix is {n}x{n}",
            p0.p0.len()
        )));
    }
    let mut scores = vec![1.0 / n as f64; n];
    let mut buf = vec![0.0f64; n];
    let mut residual = 0.0;
    for _ in 0..config.iterations {
        match parallel {
            None => matrix.matvec_transpose(&scores, &mut buf),
            Some(false) => matrix.matvec_transpose_seq(&scores, &mut buf),
            #[cfg(feature = "parallel")]
            Some(true) => matrix.matvec_transpose_par(&scores, &mut buf),
            #[cfg(not(feature = "parallel"))]
            Some(true) => matrix.matvec_transpose_seq(&scores, &mut buf),
        }
        residual = 0.0;
        for (v, b) in buf.iter_mut().enumerate() {
            let next = config.alpha * p0.p0[v] + (1.0 - config.alpha) * *b;
            let delta = (next - scores[v]).abs();
            if delta > residual {
                residual = delta;
            }
            *b = next;
        }
        std::mem::swap(&mut scores, &mut buf);
    }
    Ok(SalienceVector {
        scores,
        converged_residual: residual,
    })
}

/// Run the salience iteration: `s(0)` uniform, then `iterations` steps of
/// `s <- alpha * p0 + (1 - alpha) * A^T s`. Mass is conserved at every step
/// because `p0` sums to 1 and the matrix is row-stochastic.
pub fn run_qgppr(
    p0: &PersonalizationVector,
    matrix: &PropagationMatrix,
    config: &PprConfig,
) -> Result<SalienceVector, QgpprError> {
    power_iterate(p0, matrix, config, None)
}

/// [`run_qgppr`] pinned to the sequential matvec.
pub fn run_qgppr_seq(
    p0: &PersonalizationVector,
    matrix: &PropagationMatrix,
    config: &PprConfig,
) -> Result<SalienceVector, QgpprError> {
    power_iterate(p0, matrix, config, Some(false))
}

/// [`run_qgppr`] pinned to the parallel matvec.
#[cfg(feature = "parallel")]
pub fn run_qgppr_par(
    p0: &PersonalizationVector,
    matrix: &PropagationMatrix,
    config: &PprConfig,
) -> Result<SalienceVector, QgpprError> {
    power_iterate(p0, matrix, config, Some(true))
}

/// Rerank triples by salience.
///
/// Rows are ordered by the sum of their triples' scores (descending), and
/// triples within each row by their own score (descending). Ties at both
/// levels fall back to ascending original id. With `order_sensitive` set the
/// input comes back in original id order, untouched.
pub fn rank(triples: &[Triple], scores: &[f64], order_sensitive: bool) -> Vec<Triple> {
    debug_assert_eq!(triples.len(), scores.len());
    let mut order: Vec<usize> = (0..triples.len()).collect();
    if order_sensitive {
        order.sort_by_key(|&i| triples[i].id);
        return order.into_iter().map(|i| triples[i].clone()).collect();
    }

    use std::collections::HashMap;
    let mut row_score: HashMap<usize, f64> = HashMap::new();
    let mut row_min_id: HashMap<usize, usize> = HashMap::new();
    for (i, t) in triples.iter().enumerate() {
        *row_score.entry(t.row).or_insert(0.0) += scores[i];
        row_min_id
            .entry(t.row)
            .and_modify(|m| *m = (*m).min(t.id))
            .or_insert(t.id);
    }

    order.sort_by(|&a, &b| {
        let (ta, tb) = (&triples[a], &triples[b]);
        if ta.row != tb.row {
            let sa = row_score[&ta.row];
            let sb = row_score[&tb.row];
            sb.partial_cmp(&sa)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| row_min_id[&ta.row].cmp(&row_min_id[&tb.row]))
        } else {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| ta.id.cmp(&tb.id))
        }
    });
    order.into_iter().map(|i| triples[i].clone()).collect()
}

/// True if the lowercased question contains any trigger term.
pub fn detect_order_sensitive(question: &str) -> bool {
    detect_order_sensitive_with(question, DEFAULT_ORDER_TRIGGERS.iter().copied())
}

pub fn detect_order_sensitive_with<'a>(
    question: &str,
    triggers: impl IntoIterator<Item = &'a str>,
) -> bool {
    let q = question.to_lowercase();
    triggers.into_iter().any(|t| q.contains(t))
}

/// Resolve the effective order-sensitivity for a question under a config.
pub fn order_sensitive_for(
    question: &str,
    config: &PprConfig,
    triggers: Option<&[String]>,
) -> bool {
    match config.order_sensitive_mode {
        OrderSensitiveMode::AlwaysPreserve => true,
        OrderSensitiveMode::NeverPreserve => false,
        OrderSensitiveMode::Auto => match triggers {
            Some(list) => detect_order_sensitive_with(question, list.iter().map(String::as_str)),
            None => detect_order_sensitive(question),
        },
    }
}
