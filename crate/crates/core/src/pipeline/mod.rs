//! Experiment orchestration: demonstrations, training data, the benchmark
//! matrix and ablations.

mod ablation;
mod bench;
mod demos;
mod samples;

use thiserror::Error;

pub use ablation::{run_ablation, train_variant, AblationVariant};
pub use bench::{
    aggregate, build_roadmaps, metrics_jsonl, parse_metrics_jsonl, run_benchmark, Aggregate, BenchInstance, BuiltRoadmaps,
    Method, MethodSummary, MetricsRecord, ModelEntry, Timing,
};
pub use demos::{gen_demonstrations, DemoConfig, DemoSet, Demonstration};
pub use samples::{extract_training_samples, read_samples, write_samples, SampleSet};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Instance(#[from] crate::instance::InstanceError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed sample file: {0}")]
    Samples(String),
    #[error("{0}")]
    Config(String),
    #[error("gave up on demonstration {index} after {attempts} instances")]
    DemoExhausted { index: usize, attempts: usize },
}
