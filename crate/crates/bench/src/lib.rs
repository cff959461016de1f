//! Benchmarks for the wsob-core kernels live in `benches/`.
