//! Benchmark fixtures. The benchmarks themselves live in `benches/`.

use ratnet_core::datagen::{make_benchmark, Benchmark, BenchmarkConfig};

pub fn three_task() -> Benchmark {
    make_benchmark(&BenchmarkConfig::three_task()).expect("three-task benchmark")
}
