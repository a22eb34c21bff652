//! Criterion benchmarks for the OT solvers live in benches/.
