//! Criterion benchmarks for the bench's hot paths; see `benches/kernels.rs`.
//!
//! Run with `cargo bench -p saebench-bench`.
