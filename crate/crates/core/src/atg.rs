//! Attributed table graph construction.
//!
//! A table becomes a graph with one root node, one anchor node per row, and
//! one node per distinct `(column, value)` pair. Row-to-value edges carry the
//! column header as an attribute. The same graph is exposed as a flat list of
//! `(row, header, value)` triples, one per cell, with row-major ids, which is
//! the unit the salience and reranking stages operate on.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::table::Table;

#[derive(Debug, Error)]
pub enum AtgError {
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
}

/// Dense node identifier, unique within one graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum NodeKind {
    /// Represents the whole table; labelled with the table title.
    Root,
    RowAnchor {
        row: usize,
    },
    /// The `ordinal`-th distinct value seen in column `col` (0-based).
    /// Identical values in different columns are distinct nodes.
    CellValue {
        col: usize,
        value: String,
        ordinal: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
}

/// Root-to-anchor edges carry no attribute; anchor-to-value edges carry the
/// header of the value's column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub attribute: Option<String>,
}

/// One cell viewed as a `(row, header, value)` unit.
///
/// `id` is the row-major position `row * C + col` in the source table, which
/// makes row/column membership computable without search and gives a stable
/// tie-break order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Triple {
    pub id: usize,
    pub row: usize,
    pub col: usize,
    pub header: String,
    pub value: String,
}

/// The attributed table graph plus its triple view and per-column value
/// frequencies. Immutable after [`build_atg`]; safe to share across threads.
#[derive(Debug, Clone)]
pub struct AtgGraph {
    title: String,
    headers: Vec<String>,
    rows: usize,
    cols: usize,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    triples: Vec<Triple>,
    /// df[j][v] = number of rows whose column-j cell equals v.
    df: Vec<HashMap<String, usize>>,
}

impl AtgGraph {
    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn row_count(&self) -> usize {
        self.rows
    }

    pub fn col_count(&self) -> usize {
        self.cols
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn triple(&self, id: usize) -> Option<&Triple> {
        self.triples.get(id)
    }

    /// Number of rows whose column-`col` cell equals `value` (0 if absent).
    pub fn df(&self, col: usize, value: &str) -> usize {
        self.df
            .get(col)
            .and_then(|m| m.get(value).copied())
            .unwrap_or(0)
    }

    /// All triples of row `i`, in id order.
    pub fn triples_of_row(&self, i: usize) -> Result<&[Triple], AtgError> {
        if i >= self.rows {
            return Err(AtgError::IndexOutOfRange(format!(
                "row {i} of {}",
                self.rows
            )));
        }
        Ok(&self.triples[i * self.cols..(i + 1) * self.cols])
    }

    /// All triples of column `j`, in id order.
    pub fn triples_of_col(&self, j: usize) -> Result<Vec<&Triple>, AtgError> {
        if j >= self.cols {
            return Err(AtgError::IndexOutOfRange(format!(
                "col {j} of {}",
                self.cols
            )));
        }
        Ok((0..self.rows)
            .map(|i| &self.triples[i * self.cols + j])
            .collect())
    }

    /// Triple ids of every cell in the column with the given header.
    pub fn column_triple_ids(&self, header: &str) -> Option<Vec<usize>> {
        let j = self.headers.iter().position(|h| h == header)?;
        Some((0..self.rows).map(|i| i * self.cols + j).collect())
    }

    /// One line per edge, for debugging: `(node → node [attribute])`.
    pub fn export_edges_text(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            let from = self.node_label(e.from);
            let to = self.node_label(e.to);
            match &e.attribute {
                Some(attr) => out.push_str(&format!("({from} \u{2192} {to} [{attr}])\n")),
                None => out.push_str(&format!("({from} \u{2192} {to})\n")),
            }
        }
        out
    }

    /// JSON serialization of the triple list for downstream tools.
    pub fn triples_json(&self) -> String {
        serde_json::to_string_pretty(&self.triples).expect("triples serialize")
    }

    fn node_label(&self, id: NodeId) -> String {
        match &self.nodes[id.0].kind {
            NodeKind::Root => "root".to_string(),
            NodeKind::RowAnchor { row } => format!("row{}", row + 1),
            NodeKind::CellValue { col, value, .. } => format!("col{}:{value}", col + 1),
        }
    }
}

/// Build the attributed table graph for a table.
///
/// Deterministic: triples are row-major, value nodes appear in first-occurrence
/// order of the row-major scan. Runs in O(R*C) expected time and O(R*C) space.
pub fn build_atg(table: &Table) -> AtgGraph {
    let rows = table.row_count();
    let cols = table.col_count();

    let mut nodes = Vec::with_capacity(1 + rows);
    nodes.push(Node {
        id: NodeId(0),
        kind: NodeKind::Root,
    });
    for i in 0..rows {
        nodes.push(Node {
            id: NodeId(1 + i),
            kind: NodeKind::RowAnchor { row: i },
        });
    }

    let mut edges = Vec::with_capacity(rows + rows * cols);
    for i in 0..rows {
        edges.push(Edge {
            from: NodeId(0),
            to: NodeId(1 + i),
            attribute: None,
        });
    }

    let mut df: Vec<HashMap<String, usize>> = vec![HashMap::new(); cols];
    // Value-node dedup is per column: (col, value) -> node id.
    let mut value_nodes: Vec<HashMap<String, NodeId>> = vec![HashMap::new(); cols];
    let mut triples = Vec::with_capacity(rows * cols);

    for (i, row) in table.rows.iter().enumerate() {
        for (j, value) in row.iter().enumerate() {
            *df[j].entry(value.clone()).or_insert(0) += 1;
            let value_node = match value_nodes[j].get(value) {
                Some(&id) => id,
                None => {
                    let id = NodeId(nodes.len());
                    let ordinal = value_nodes[j].len();
                    nodes.push(Node {
                        id,
                        kind: NodeKind::CellValue {
                            col: j,
                            value: value.clone(),
                            ordinal,
                        },
                    });
                    value_nodes[j].insert(value.clone(), id);
                    id
                }
            };
            edges.push(Edge {
                from: NodeId(1 + i),
                to: value_node,
                attribute: Some(table.headers[j].clone()),
            });
            triples.push(Triple {
                id: i * cols + j,
                row: i,
                col: j,
                header: table.headers[j].clone(),
                value: value.clone(),
            });
        }
    }

    AtgGraph {
        title: table.title.clone(),
        headers: table.headers.clone(),
        rows,
        cols,
        nodes,
        edges,
        triples,
        df,
    }
}

/// Render a triple in its prompt surface form: `(row{i+1}; {header}; {value})`.
/// The row index is 1-based; an empty value renders as an empty segment.
pub fn render_triple(triple: &Triple) -> String {
    format!(
        "(row{}; {}; {})",
        triple.row + 1,
        triple.header,
        triple.value
    )
}

/// Parse the surface form back into `(0-based row, header, value)`.
///
/// Inverse of [`render_triple`] for values that do not contain the `"; "`
/// separator. Returns `None` for anything that does not match the shape.
pub fn parse_rendered_triple(text: &str) -> Option<(usize, String, String)> {
    let inner = text
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))?;
    let mut parts = inner.splitn(3, "; ");
    let row_part = parts.next()?;
    let header = parts.next()?;
    let value = parts.next().unwrap_or("");
    let row_1based: usize = row_part.strip_prefix("row")?.parse().ok()?;
    if row_1based == 0 {
        return None;
    }
    Some((row_1based - 1, header.to_string(), value.to_string()))
}
