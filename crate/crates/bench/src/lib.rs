//! Criterion benchmarks for ovmr-core live under `benches/`.
