//! Benchmark harness: method pipelines, the episode loop, feature files and
//! configuration.

pub mod config;
pub mod features;
pub mod pipeline;
pub mod run;

pub use config::{Settings, SyntheticConfig};
pub use features::{load_features, save_features};
pub use pipeline::{Diagnostics, Hyperparams, MethodName, MethodPipeline};
pub use run::{run_ablation, run_benchmark, AblationTable, MethodReport, RunConfig, RunReport, Sweep};
