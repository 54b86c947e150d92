//! Synthetic multi-task data: a global concept registry, per-task domain
//! transforms and class priors, the benchmark layout, and file formats.

mod benchmark;
mod io;
mod registry;
mod task;

pub use benchmark::{
    make_benchmark, Benchmark, BenchmarkConfig, FewShotConfig, IncrementalConfig, LongTailConfig,
    Manifest, ManifestTask, TaskRole, ZeroShotConfig, MANIFEST_FORMAT,
};
pub use io::{
    dataset_to_csv, load_benchmark, load_task, parse_dataset_csv, sha256_hex, write_benchmark,
    LoadedBenchmark, MANIFEST_FILE,
};
pub use registry::ConceptRegistry;
pub use task::{
    allocate_counts, draw_k_per_class, features_of, generate_task, labels_of, subsample_fractions,
    ClassPriors, DomainTransform, Sample, Split, SplitCounts, SyntheticTaskSpec, TaskDataset,
};
