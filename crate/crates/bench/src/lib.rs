//! Criterion benchmarks for the benchmark's hot kernels live under
//! `benches/`; this crate exports nothing.
