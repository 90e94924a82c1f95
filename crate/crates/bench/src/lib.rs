//! Benchmark-only crate; see `benches/kernels.rs`. Nothing to export.
