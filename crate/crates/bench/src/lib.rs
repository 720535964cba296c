//! Criterion benchmarks for the workbench engines; see `benches/engines.rs`.
