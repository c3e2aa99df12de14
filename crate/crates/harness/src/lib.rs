//! Configuration, training, evaluation, experiments and attention export
//! for `somni-core` models.

pub mod data;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod export;
pub mod metrics;
pub mod run_config;
pub mod train;

pub use data::{load_corpus, Corpus};
pub use error::{HarnessError, Result};
pub use eval::{run_eval, TaskMetrics};
pub use metrics::{MetricKind, MetricsLog, MetricsRow};
pub use run_config::{RunConfig, TrainSettings};
pub use train::{build_model, run_train, TrainOutcome};
