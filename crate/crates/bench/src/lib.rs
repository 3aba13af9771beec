//! Criterion benchmarks for the maskbench pipeline live under `benches/`.
