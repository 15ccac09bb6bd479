//! Experiment orchestration: configuration, the epoch loop with environment switching
//! and degradation-triggered resets, metrics files, checkpoints and plots.

mod checkpoint;
mod config;
mod detector;
mod diagnostics;
mod metrics;
mod plot;
mod run;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use config::{AnyEnv, EnvKind, ExperimentConfig, OUTPUT_DIR_ENV};
pub use detector::{detect_degradation, DegradationDetector};
pub use diagnostics::{gradient_checks, GradientCheck};
pub use metrics::{load_metrics, read_metrics, save_metrics, write_metrics, MetricsRow, METRICS_HEADER};
pub use plot::{export_plot, render_svg};
pub use run::{
    evaluate, resume_experiment, run_experiment, Experiment, RunSummary, CHECKPOINT_FILE, METRICS_FILE,
};
