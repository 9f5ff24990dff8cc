//! Criterion benchmarks for the hot paths of `dosetraj-core`; see `benches/`.
