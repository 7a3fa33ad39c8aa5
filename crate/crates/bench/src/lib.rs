//! Criterion benchmarks for the sampling hot paths; see `benches/`.
