//! Experiment configuration, multi-seed runs, grids, reports and the
//! scaling probe.

mod config;
mod report;
mod run;
mod scaling;

pub use config::{
    runs_dir, DatasetSpec, ExperimentConfig, ModelKind, PerturbationKind, PerturbationSpec, BETA_GRID,
    DEFAULT_RUNS_DIR, GAMMA_GRID, RUNS_DIR_ENV,
};
pub use report::{
    emit_report, heatmap_svg, label_rate_svg, summary_csv, trends, LabelRatePoint, LabelRateTrend, Trends,
    WeightCell, WeightSweep,
};
pub use run::{
    expand_grid, prepare_graph, reproduce, run_experiment, run_grid, run_seed, select_by_validation, target_accuracy,
    train_target,
    GridOutcome, RunRecord, SeedMetrics, SeedTiming, Stat, TrainedTarget,
};
pub use scaling::{resized_sbm, scaling_probe, ScalingRow};
