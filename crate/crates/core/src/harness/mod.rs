//! Training loop, metrics, robustness perturbations, ablations, attention
//! analysis and the command-line interface.

mod ablate;
mod cli;
mod config;
mod metrics;
mod perturb;
mod report;
mod train;

pub use ablate::{ablate, Variant};
pub use cli::run_cli;
pub use config::{RunConfig, TrainConfig};
pub use metrics::{evaluate_metrics, Metrics, Spread, THRESHOLD};
pub use perturb::{drop_edges, perturb, PerturbMode, PerturbSpec};
pub use report::{AttentionSummary, CurvePoint, EpochRecord, PerturbCurve, RepeatSummary, Report, SplitMetrics};
pub use train::{
    eval_seed, evaluate_with, train, train_prepared, train_repeats, Evaluation, Prepared, Trained, CHECKPOINT_FILE,
    CONFIG_FILE, PROFILES_FILE, REPORT_FILE,
};
