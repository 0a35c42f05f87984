//! Criterion benchmarks for the training step, latent propagation, exact
//! DMD and the vorticity solver. Run with `cargo bench -p snode-bench`.
