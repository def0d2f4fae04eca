//! Criterion benchmarks for netstab; see `benches/`.
