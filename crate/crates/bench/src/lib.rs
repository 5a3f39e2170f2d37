//! Criterion benchmarks for the estimator, codec and statistics; see `benches/`.
