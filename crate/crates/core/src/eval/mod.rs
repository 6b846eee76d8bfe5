//! Dice scoring, per-vendor cross-validation, experiment runs and report
//! rendering.

mod experiment;
mod folds;
mod metrics;
pub mod phantom;
mod report;

pub use experiment::{
    aggregate, predict_labels, run_experiment, score_case, segment_case, ExperimentConfig, FoldResult, Pooling,
    VolumeScore,
};
pub use folds::{group_sizes, make_folds, read_inventory, write_inventory, Fold, FoldPlan, Inventory};
pub use metrics::{confusion, dice, dice_volume, fluid_confusions, ConfusionCounts};
pub use phantom::{synth_phantom, Blob, FluidSpec};
pub use report::{
    parse_csv, render_csv, render_report, round2, table_cells, DiceRecord, RenderedReport, CSV_HEADER, DIMENSIONS,
    HUMAN_BASELINE,
};
