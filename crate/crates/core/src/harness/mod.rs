//! Experiment orchestration: configs, learning-rate schedules, multi-seed
//! runs with checkpoint measurement, and CSV output.

pub mod config;
pub mod lr;
pub mod measure;
pub mod run;

pub use config::{DatasetConfig, MeasurementConfig, MetricKind, ModelConfig, RunConfig, VrSection};
pub use lr::{lr_at, LrSchedule};
pub use measure::{measure_checkpoint, CheckpointMetrics, MeasureRequest, MetricTriple};
pub use run::{run_experiment, run_seed, CheckpointRow, RunSummary, SeedRecord};
