//! Criterion benchmarks for the scan, convolution and block kernels live
//! under `benches/`; run them with `cargo bench -p mixssm-bench`.
