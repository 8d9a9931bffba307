//! Criterion benchmarks for the selection engine; see `benches/`.
