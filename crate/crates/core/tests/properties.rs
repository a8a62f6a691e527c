//! Property tests for the structural and numerical invariants.

use proptest::prelude::*;
use std::collections::BTreeMap;

use tabgr_core::atg::{build_atg, parse_rendered_triple, render_triple, NodeKind, Triple};
use tabgr_core::qgppr::{
    build_personalization, build_propagation, rank, run_qgppr, KeySets, PersonalizationVector,
    PprConfig,
};
use tabgr_core::reasoner::parse_output;
use tabgr_core::table::{flatten_headers, forward_fill, permute, Permutation, Table};

/// Small cell alphabet so repeated values (and so df > 1) actually happen.
fn arb_cell() -> impl Strategy<Value = String> {
    prop_oneof![
        Just(String::new()),
        Just("a".to_string()),
        Just("b".to_string()),
        Just("2000".to_string()),
        Just("x y".to_string()),
        "[a-z]{1,6}",
    ]
}

fn arb_table() -> impl Strategy<Value = Table> {
    (1usize..=7, 1usize..=5).prop_flat_map(|(rows, cols)| {
        proptest::collection::vec(
            proptest::collection::vec(arb_cell(), cols..=cols),
            rows..=rows,
        )
        .prop_map(move |grid| {
            Table::new(
                "T",
                (0..cols).map(|j| format!("H{j}")).collect(),
                grid,
                "prop",
            )
            .unwrap()
        })
    })
}

proptest! {
    #[test]
    fn permute_then_inverse_is_identity(table in arb_table(), seed in any::<u64>()) {
        let perm = Permutation::random_swap(table.row_count(), table.col_count(), seed);
        let there = permute(&table, &perm).unwrap();
        let back = permute(&there, &perm.inverse()).unwrap();
        prop_assert_eq!(back, table);
    }

    #[test]
    fn forward_fill_is_idempotent(table in arb_table()) {
        let cols: Vec<usize> = (0..table.col_count()).collect();
        let once = forward_fill(&table, &cols);
        let twice = forward_fill(&once, &cols);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn operations_preserve_rectangularity(table in arb_table(), seed in any::<u64>()) {
        let perm = Permutation::random_swap(table.row_count(), table.col_count(), seed);
        for t in [permute(&table, &perm).unwrap(), forward_fill(&table, &[0])] {
            let c = t.col_count();
            prop_assert!(t.rows.iter().all(|r| r.len() == c));
        }
    }

    #[test]
    fn flatten_output_length_equals_width(
        levels in proptest::collection::vec(
            proptest::collection::vec("[a-z]{0,4}", 4..=4), 1..4)
    ) {
        let levels: Vec<Vec<String>> = levels;
        let out = flatten_headers(&levels).unwrap();
        prop_assert_eq!(out.len(), 4);
    }

    #[test]
    fn node_count_identity(table in arb_table()) {
        let graph = build_atg(&table);
        let uniq_per_col: usize = (0..table.col_count())
            .map(|j| {
                table
                    .rows
                    .iter()
                    .map(|r| r[j].clone())
                    .collect::<std::collections::BTreeSet<_>>()
                    .len()
            })
            .sum();
        prop_assert_eq!(
            graph.nodes().len(),
            1 + table.row_count() + uniq_per_col
        );
        prop_assert_eq!(graph.triples().len(), table.row_count() * table.col_count());
    }

    #[test]
    fn df_sums_to_row_count(table in arb_table()) {
        let graph = build_atg(&table);
        for j in 0..table.col_count() {
            let distinct: std::collections::BTreeSet<String> =
                table.rows.iter().map(|r| r[j].clone()).collect();
            let total: usize = distinct.iter().map(|v| graph.df(j, v)).sum();
            prop_assert_eq!(total, table.row_count());
        }
    }

    #[test]
    fn atg_facts_are_permutation_equivariant(table in arb_table(), seed in any::<u64>()) {
        let perm = Permutation::random_swap(table.row_count(), table.col_count(), seed);
        let permuted = permute(&table, &perm).unwrap();
        let facts = |t: &Table| -> BTreeMap<(String, String, usize), usize> {
            let g = build_atg(t);
            let mut m = BTreeMap::new();
            for triple in g.triples() {
                let df = g.df(triple.col, &triple.value);
                *m.entry((triple.header.clone(), triple.value.clone(), df))
                    .or_insert(0) += 1;
            }
            m
        };
        prop_assert_eq!(facts(&table), facts(&permuted));
    }

    #[test]
    fn render_parse_round_trip(
        row in 0usize..500,
        header in "[A-Za-z0-9 _-]{1,12}",
        value in "[A-Za-z0-9 _,.-]{0,12}",
    ) {
        prop_assume!(!header.contains("; ") && !value.contains("; "));
        prop_assume!(header.trim() == header && value.trim() == value);
        let t = Triple { id: 0, row, col: 0, header: header.clone(), value: value.clone() };
        let parsed = parse_rendered_triple(&render_triple(&t));
        prop_assert_eq!(parsed, Some((row, header, value)));
    }

    #[test]
    fn propagation_rows_sum_to_one(table in arb_table(), w_row in 0.0f64..=1.0) {
        let graph = build_atg(&table);
        let mut config = PprConfig::full_graph();
        config.w_row = w_row;
        config.w_col = 1.0 - w_row;
        let matrix = build_propagation(graph.triples(), &config).unwrap();
        for u in 0..matrix.n() {
            prop_assert!((matrix.row_sum(u) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn salience_mass_is_conserved_every_iteration(table in arb_table(), k in 1usize..25) {
        let graph = build_atg(&table);
        let mut config = PprConfig::full_graph();
        config.iterations = k;
        let matrix = build_propagation(graph.triples(), &config).unwrap();
        let mut sets = KeySets::default();
        sets.headers.insert("H0".to_string());
        let p0 = build_personalization(graph.triples(), &sets, &graph, &config);
        let s = run_qgppr(&p0, &matrix, &config).unwrap();
        let mass: f64 = s.scores.iter().sum();
        prop_assert!((mass - 1.0).abs() < 1e-6);
        prop_assert!(s.scores.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn residuals_decrease_monotonically(table in arb_table()) {
        let graph = build_atg(&table);
        let matrix = build_propagation(graph.triples(), &PprConfig::full_graph()).unwrap();
        let n = graph.triples().len();
        let mut p0 = vec![0.0; n];
        p0[0] = 1.0;
        let p0 = PersonalizationVector { p0, uniform_fallback: false };
        let mut last = f64::INFINITY;
        for k in 1..=10 {
            let mut config = PprConfig::full_graph();
            config.iterations = k;
            let s = run_qgppr(&p0, &matrix, &config).unwrap();
            prop_assert!(s.converged_residual <= last + 1e-15);
            last = s.converged_residual;
        }
    }

    #[test]
    fn ranked_output_is_a_permutation_of_input(table in arb_table(), seed in any::<u64>()) {
        let graph = build_atg(&table);
        let mut rng_scores: Vec<f64> = Vec::new();
        let mut x = seed;
        for _ in 0..graph.triples().len() {
            // cheap deterministic pseudo-scores
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            rng_scores.push((x >> 11) as f64 / (1u64 << 53) as f64);
        }
        let ranked = rank(graph.triples(), &rng_scores, false);
        let mut ids: Vec<usize> = ranked.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        let expected: Vec<usize> = (0..graph.triples().len()).collect();
        prop_assert_eq!(ids, expected);
    }

    #[test]
    fn parse_output_is_total(raw in ".{0,300}") {
        // Must never panic, and must land on one of the three statuses.
        let _ = parse_output(&raw);
    }

    #[test]
    fn cell_value_nodes_are_column_scoped(table in arb_table()) {
        let graph = build_atg(&table);
        let mut seen = std::collections::BTreeSet::new();
        for node in graph.nodes() {
            if let NodeKind::CellValue { col, value, .. } = &node.kind {
                prop_assert!(seen.insert((*col, value.clone())), "duplicate value node");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn salience_is_permutation_equivariant(table in arb_table(), seed in any::<u64>()) {
        let perm = Permutation::random_swap(table.row_count(), table.col_count(), seed);
        let permuted = permute(&table, &perm).unwrap();
        let config = PprConfig::full_graph();

        // Key sets anchored on the first header and the top-left cell,
        // mapped through the permutation for the shuffled run.
        let mut sets = KeySets::default();
        sets.headers.insert(table.headers[0].clone());
        sets.values.insert((0, table.rows[0][0].clone()));
        let mut sets_perm = KeySets::default();
        sets_perm.headers.insert(table.headers[0].clone());
        let new_col = perm.col_map.iter().position(|&j| j == 0).unwrap();
        sets_perm.values.insert((new_col, table.rows[0][0].clone()));

        let score = |t: &Table, sets: &KeySets| {
            let g = build_atg(t);
            let m = build_propagation(g.triples(), &config).unwrap();
            let p0 = build_personalization(g.triples(), sets, &g, &config);
            run_qgppr(&p0, &m, &config).unwrap().scores
        };
        let base = score(&table, &sets);
        let shuffled = score(&permuted, &sets_perm);

        let cols = table.col_count();
        for (new_i, &old_i) in perm.row_map.iter().enumerate() {
            for (new_j, &old_j) in perm.col_map.iter().enumerate() {
                let a = base[old_i * cols + old_j];
                let b = shuffled[new_i * cols + new_j];
                prop_assert!((a - b).abs() < 1e-9, "cell ({old_i},{old_j}): {a} vs {b}");
            }
        }
    }
}
