//! Optimizer, plateau schedule, training loop and experiment grid.

mod adam;
mod grid;
mod plateau;
mod trainer;

pub use adam::Adam;
pub use grid::{
    mean_std, mode_label, run_experiment_grid, run_single, summarize, CellSummary, ExperimentConfig, GridResults,
    RunRecord, Setting,
};
pub use plateau::{Plateau, PlateauStep};
pub use trainer::{
    balanced_batches, evaluate, gather_rows, infer, partition_loss, resolve_model_config, run_epochs, train, EpochRecord, EpochRun,
    StopReason, TrainConfig, TrainOutcome, DESK_BATCH_SIZE, DESK_SCALE_LIMIT, FULL_BATCH_SIZE,
};
