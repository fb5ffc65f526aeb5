//! Criterion benchmarks for the forward pass, the per-sample update and the
//! kinematic control loop. Run with `cargo bench -p cfnn-bench`.
