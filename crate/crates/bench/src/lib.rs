//! Benchmarks for clinker-core live in `benches/`.
