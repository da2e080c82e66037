//! Command-line front end: experiment configs, the embedding file format and
//! the subcommands built on them.

mod commands;
mod config;
mod embfile;

pub use commands::{
    cmd_eval, cmd_gen, cmd_repro, cmd_train, load_dataset_dir, DatasetSource, EvalInput,
    EvalOutput, FlagOverrides, GridCellSummary, GridSelection, Manifest, TrainOutcome,
    TrainOverrides, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use config::{DataConfig, ExperimentConfig, Preset};
pub use embfile::{EmbeddingFile, EMBEDDING_MAGIC, EMBEDDING_VERSION};
