//! Criterion benchmarks for the transport solvers and top-k retrieval.
//! Run with `cargo bench -p layoutcot-bench`.
