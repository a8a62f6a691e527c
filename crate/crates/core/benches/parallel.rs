//! Sequential vs rayon-parallel benchmarks for the data-parallel hot spots:
//! the salience matvec / power iteration and batch question evaluation.
//!
//! Run with `cargo bench -p tabgr-core`.

use std::collections::BTreeSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use tabgr_core::atg::build_atg;
use tabgr_core::eval::{Example, Gold, TableStore, Task};
use tabgr_core::llm::{MockLlmClient, ScriptEntry};
use tabgr_core::pipeline::{Mode, PipelineConfig};
use tabgr_core::qgppr::{
    build_propagation, run_qgppr_par, run_qgppr_seq, PersonalizationVector, PprConfig,
};
use tabgr_core::table::Table;

fn synthetic_table(rows: usize, cols: usize) -> Table {
    Table::new(
        "bench",
        (0..cols).map(|j| format!("H{j}")).collect(),
        (0..rows)
            .map(|i| (0..cols).map(|j| format!("v{}_{j}", i % 17)).collect())
            .collect(),
        "bench",
    )
    .unwrap()
}

fn concentrated_p0(n: usize) -> PersonalizationVector {
    let mut p0 = vec![0.0; n];
    p0[0] = 1.0;
    PersonalizationVector {
        p0,
        uniform_fallback: false,
    }
}

fn bench_matvec(c: &mut Criterion) {
    let mut group = c.benchmark_group("matvec_transpose");
    for (rows, cols) in [(25usize, 6usize), (200, 10), (1000, 10)] {
        let table = synthetic_table(rows, cols);
        let graph = build_atg(&table);
        let config = PprConfig::full_graph();
        let matrix = build_propagation(graph.triples(), &config).unwrap();
        let s = vec![1.0 / matrix.n() as f64; matrix.n()];
        let mut out = vec![0.0; matrix.n()];
        group.bench_with_input(
            BenchmarkId::new("seq", format!("{rows}x{cols}")),
            &matrix,
            |b, m| b.iter(|| m.matvec_transpose_seq(black_box(&s), &mut out)),
        );
        group.bench_with_input(
            BenchmarkId::new("par", format!("{rows}x{cols}")),
            &matrix,
            |b, m| b.iter(|| m.matvec_transpose_par(black_box(&s), &mut out)),
        );
    }
    group.finish();
}

fn bench_power_iteration(c: &mut Criterion) {
    let mut group = c.benchmark_group("power_iteration_k20");
    for (rows, cols) in [(200usize, 10usize), (1000, 10)] {
        let table = synthetic_table(rows, cols);
        let graph = build_atg(&table);
        let config = PprConfig::full_graph();
        let matrix = build_propagation(graph.triples(), &config).unwrap();
        let p0 = concentrated_p0(matrix.n());
        group.bench_function(BenchmarkId::new("seq", format!("{rows}x{cols}")), |b| {
            b.iter(|| run_qgppr_seq(black_box(&p0), &matrix, &config).unwrap())
        });
        group.bench_function(BenchmarkId::new("par", format!("{rows}x{cols}")), |b| {
            b.iter(|| run_qgppr_par(black_box(&p0), &matrix, &config).unwrap())
        });
    }
    group.finish();
}

fn bench_build_atg(c: &mut Criterion) {
    let table = synthetic_table(200, 10);
    c.bench_function("build_atg_200x10", |b| {
        b.iter(|| build_atg(black_box(&table)))
    });
}

fn bench_eval_batch(c: &mut Criterion) {
    let table = synthetic_table(40, 8);
    let mut store = TableStore::default();
    store.insert(table);
    let examples: Vec<Example> = (0..64)
        .map(|i| Example {
            id: format!("q{i:03}"),
            table_id: "bench".to_string(),
            question: format!("bench question {i} about v{}_{}?", i % 17, i % 8),
            task: Task::Qa,
            gold: Gold::Answers(vec!["yes".to_string()]),
        })
        .collect();
    let mut entries: Vec<ScriptEntry> = (0..64)
        .map(|i| ScriptEntry {
            pattern: format!("bench question {i} about"),
            response: "<think><paths>(row1; H0; v0_0)</paths>t</think><answer>yes</answer>"
                .to_string(),
        })
        .collect();
    entries.push(ScriptEntry {
        pattern: "Candidate Columns:".to_string(),
        response: "H0".to_string(),
    });
    let mock = MockLlmClient::new(entries);

    let mut group = c.benchmark_group("eval_batch_64q");
    group.sample_size(10);
    for workers in [1usize, 4] {
        let opts = tabgr_core::eval::EvalOptions {
            pipeline: PipelineConfig::for_mode(Mode::Full),
            workers,
            model: "bench".to_string(),
            temperature: 0.0,
        };
        group.bench_function(BenchmarkId::new("workers", workers), |b| {
            b.iter(|| {
                let (records, _) = tabgr_core::eval::run_eval(
                    black_box(&examples),
                    &store,
                    &opts,
                    Some(&mock),
                    None,
                    &BTreeSet::new(),
                );
                assert_eq!(records.len(), 64);
            })
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_matvec,
    bench_power_iteration,
    bench_build_atg,
    bench_eval_batch
);
criterion_main!(benches);
