//! Run configuration, checkpoints and the commands behind the `diablo` binary.

mod checkpoint;
mod commands;
mod config;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use commands::{
    ablation_cells, median, run_ablate, run_evaluate, run_gen_data, run_gradcheck, run_train, threads_from_env,
    write_recall_csv, AblationAxes, Cell, CellSummary, EvalSet, TrainOutcome, ABLATION_BRANCHES, CHECKPOINT_FILE,
    CONFIG_FILE, IMAGES_FILE, LABELS_FILE, METRICS_FILE, METRICS_HEADER, RECALL_FILE,
};
pub use config::{DataSource, RunConfig, SplitConfig};
