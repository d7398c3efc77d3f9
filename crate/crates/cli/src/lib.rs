//! Command-line driver for pose-posterior experiments: scene generation,
//! training, evaluation, sampling and latency benchmarks.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

pub use checkpoint::{Checkpoint, Model};
pub use commands::{
    cmd_bench, cmd_evaluate, cmd_generate, cmd_sample, cmd_train, BenchStats, EvalSummary, Query,
    SampleRequest, Workspace,
};
pub use config::{Precision, RunConfig, Seeds};
pub use error::{CliError, CliResult};
