//! Canonical table representation and structural transforms.
//!
//! Tables enter the system as loosely structured records (headers plus a row
//! grid, possibly ragged, possibly with multi-level headers) and are
//! normalized here into a rectangular [`Table`] with unique, non-empty
//! headers. Cell text is stored verbatim; matching-time normalization happens
//! downstream so that answers can be compared against raw cell strings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separator used when flattening multi-level header paths.
pub const HEADER_PATH_SEPARATOR: &str = "-";

#[derive(Debug, Error)]
pub enum TableError {
    #[error("table has zero columns")]
    EmptyHeader,
    #[error("malformed table record: {0}")]
    MalformedRecord(String),
    #[error("header levels have mismatched widths ({0} vs {1})")]
    WidthMismatch(usize, usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
}

/// A rectangular table: `R` rows by `C` columns of cell text.
///
/// Invariants (enforced by [`Table::new`]):
/// * every row has exactly `C` cells,
/// * `C >= 1`,
/// * headers are unique and non-empty.
///
/// Cell texts may be empty strings; an empty cell is meaningful data.
/// All fields are immutable after construction, so tables can be shared
/// freely across threads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub source_id: String,
}

impl Table {
    pub fn new(
        title: impl Into<String>,
        headers: Vec<String>,
        rows: Vec<Vec<String>>,
        source_id: impl Into<String>,
    ) -> Result<Self, TableError> {
        if headers.is_empty() {
            return Err(TableError::EmptyHeader);
        }
        let c = headers.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(TableError::DimensionMismatch(format!(
                    "row {i} has {} cells, expected {c}",
                    row.len()
                )));
            }
        }
        for (j, h) in headers.iter().enumerate() {
            if h.trim().is_empty() {
                return Err(TableError::MalformedRecord(format!("header {j} is empty")));
            }
            if headers[..j].contains(h) {
                return Err(TableError::MalformedRecord(format!(
                    "duplicate header {h:?}"
                )));
            }
        }
        Ok(Table {
            title: title.into(),
            headers,
            rows,
            source_id: source_id.into(),
        })
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn col_count(&self) -> usize {
        self.headers.len()
    }

    pub fn cell(&self, r: CellRef) -> Option<&str> {
        self.rows.get(r.row)?.get(r.col).map(String::as_str)
    }
}

/// A cell position, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellRef {
    pub row: usize,
    pub col: usize,
}

/// One table as it appears in an input file.
///
/// `header` is either a flat list or a list of levels (for hierarchical
/// headers, where a merged span is encoded as repeated parent text).
#[derive(Debug, Clone, Deserialize)]
pub struct TableRecord {
    pub id: String,
    #[serde(default)]
    pub title: Option<String>,
    pub header: HeaderSpec,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum HeaderSpec {
    Flat(Vec<String>),
    Levels(Vec<Vec<String>>),
}

/// Parse one raw record into a canonical [`Table`].
///
/// Multi-level headers are flattened into path headers, empty headers are
/// replaced by `Column_{j+1}`, duplicate headers get an `_k` ordinal suffix,
/// ragged rows are padded with empty cells (rows wider than the header are
/// truncated).
pub fn parse_table(record: &TableRecord) -> Result<Table, TableError> {
    let headers = match &record.header {
        HeaderSpec::Flat(h) => h.clone(),
        HeaderSpec::Levels(levels) => flatten_headers(levels)?,
    };
    if headers.is_empty() {
        return Err(TableError::EmptyHeader);
    }
    let headers = normalize_headers(headers);
    let c = headers.len();
    let rows = record
        .rows
        .iter()
        .map(|row| {
            let mut row: Vec<String> = row.iter().take(c).cloned().collect();
            row.resize(c, String::new());
            row
        })
        .collect();
    Table::new(
        record.title.clone().unwrap_or_default(),
        headers,
        rows,
        record.id.clone(),
    )
}

/// Parse a record from its JSON text form.
pub fn parse_table_json(text: &str) -> Result<Table, TableError> {
    let record: TableRecord =
        serde_json::from_str(text).map_err(|e| TableError::MalformedRecord(e.to_string()))?;
    parse_table(&record)
}

/// Make headers unique and non-empty, preserving order.
///
/// The k-th repeat of a header gets an `_k` suffix (k >= 2); the suffix is
/// bumped further if it would itself collide.
fn normalize_headers(headers: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(headers.len());
    for (j, h) in headers.into_iter().enumerate() {
        let base = if h.trim().is_empty() {
            format!("Column_{}", j + 1)
        } else {
            h
        };
        if !out.contains(&base) {
            out.push(base);
            continue;
        }
        let mut k = 2;
        loop {
            let candidate = format!("{base}_{k}");
            if !out.contains(&candidate) {
                out.push(candidate);
                break;
            }
            k += 1;
        }
    }
    out
}

/// Flatten multi-level headers into per-column path strings.
///
/// Each output header is the top-to-bottom join of that column's non-empty
/// level texts with [`HEADER_PATH_SEPARATOR`].
pub fn flatten_headers(levels: &[Vec<String>]) -> Result<Vec<String>, TableError> {
    let Some(first) = levels.first() else {
        return Err(TableError::EmptyHeader);
    };
    let width = first.len();
    for level in levels {
        if level.len() != width {
            return Err(TableError::WidthMismatch(width, level.len()));
        }
    }
    Ok((0..width)
        .map(|j| {
            levels
                .iter()
                .map(|level| level[j].as_str())
                .filter(|part| !part.is_empty())
                .collect::<Vec<_>>()
                .join(HEADER_PATH_SEPARATOR)
        })
        .collect())
}

/// Fill empty cells in the listed columns from the nearest non-empty cell
/// above. Cells above the first non-empty cell stay empty. Out-of-range
/// column indices are ignored.
pub fn forward_fill(table: &Table, cols: &[usize]) -> Table {
    let mut filled = table.clone();
    for &j in cols {
        if j >= filled.col_count() {
            continue;
        }
        let mut carry: Option<String> = None;
        for row in filled.rows.iter_mut() {
            if row[j].is_empty() {
                if let Some(v) = &carry {
                    row[j] = v.clone();
                }
            } else {
                carry = Some(row[j].clone());
            }
        }
    }
    filled
}

/// A joint row/column permutation. `row_map[i']` is the source row index of
/// output row `i'` (and analogously for columns); both maps are bijections.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    pub row_map: Vec<usize>,
    pub col_map: Vec<usize>,
    pub seed: u64,
}

impl Permutation {
    pub fn identity(rows: usize, cols: usize) -> Self {
        Permutation {
            row_map: (0..rows).collect(),
            col_map: (0..cols).collect(),
            seed: 0,
        }
    }

    /// Build from explicit maps, validating that both are bijections.
    pub fn from_maps(
        row_map: Vec<usize>,
        col_map: Vec<usize>,
        seed: u64,
    ) -> Result<Self, TableError> {
        for (name, map) in [("row_map", &row_map), ("col_map", &col_map)] {
            let mut seen = vec![false; map.len()];
            for &v in map {
                if v >= map.len() || seen[v] {
                    return Err(TableError::MalformedRecord(format!(
                        "{name} is not a bijection"
                    )));
                }
                seen[v] = true;
            }
        }
        Ok(Permutation {
            row_map,
            col_map,
            seed,
        })
    }

    /// Shuffle rows and columns by walking each index and swapping it with a
    /// uniformly chosen one (full-range swaps), independently per axis.
    /// Deterministic for a given seed; rows are drawn before columns.
    pub fn random_swap(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Permutation {
            row_map: swap_shuffle(rows, &mut rng),
            col_map: swap_shuffle(cols, &mut rng),
            seed,
        }
    }

    /// Like [`Permutation::random_swap`] but leaving columns in place.
    pub fn random_swap_rows_only(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Permutation {
            row_map: swap_shuffle(rows, &mut rng),
            col_map: (0..cols).collect(),
            seed,
        }
    }

    pub fn inverse(&self) -> Permutation {
        let mut row_map = vec![0; self.row_map.len()];
        for (dst, &src) in self.row_map.iter().enumerate() {
            row_map[src] = dst;
        }
        let mut col_map = vec![0; self.col_map.len()];
        for (dst, &src) in self.col_map.iter().enumerate() {
            col_map[src] = dst;
        }
        Permutation {
            row_map,
            col_map,
            seed: self.seed,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.row_map.iter().enumerate().all(|(i, &v)| i == v)
            && self.col_map.iter().enumerate().all(|(i, &v)| i == v)
    }
}

fn swap_shuffle(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut map: Vec<usize> = (0..n).collect();
    for i in 0..n {
        let j = rng.gen_range(0..n);
        map.swap(i, j);
    }
    map
}

/// Apply a permutation: output cell `(i', j')` is the input cell
/// `(row_map[i'], col_map[j'])`. Headers move with their columns; the title
/// is untouched.
pub fn permute(table: &Table, perm: &Permutation) -> Result<Table, TableError> {
    if perm.row_map.len() != table.row_count() || perm.col_map.len() != table.col_count() {
        return Err(TableError::DimensionMismatch(format!(
            "permutation is {}x{}, table is {}x{}",
            perm.row_map.len(),
            perm.col_map.len(),
            table.row_count(),
            table.col_count()
        )));
    }
    let headers = perm
        .col_map
        .iter()
        .map(|&j| table.headers[j].clone())
        .collect();
    let rows = perm
        .row_map
        .iter()
        .map(|&i| {
            perm.col_map
                .iter()
                .map(|&j| table.rows[i][j].clone())
                .collect()
        })
        .collect();
    Ok(Table {
        title: table.title.clone(),
        headers,
        rows,
        source_id: table.source_id.clone(),
    })
}
